"""ROC/AUC, DeLong variance and tests, paired t, power, subgroup and pilot
reports — each numerical routine is cross-checked against an independent
oracle (pairwise counting, numerical integration, or simulation)."""

import math

import numpy as np
import pytest

from photoqc import stats
from photoqc.errors import (InvalidSpec, SingleClassScores, TooFewPerClass,
                            UnlabeledAttempt)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def pairwise_auc(scores, labels):
    pos = scores[labels]
    neg = scores[~labels]
    cmp = (pos[:, None] > neg[None, :]).astype(float)
    cmp += 0.5 * (pos[:, None] == neg[None, :])
    return float(cmp.mean())


def pairwise_structural(scores, labels):
    """V10 per positive, V01 per negative, from the explicit pair matrix."""
    pos = scores[labels]
    neg = scores[~labels]
    psi = (pos[:, None] > neg[None, :]).astype(float)
    psi += 0.5 * (pos[:, None] == neg[None, :])
    return psi.mean(axis=1), psi.mean(axis=0)


def pairwise_delong_variance(scores, labels):
    v10, v01 = pairwise_structural(scores, labels)
    return float(np.var(v10, ddof=1) / v10.size + np.var(v01, ddof=1) / v01.size)


def t_pdf(x, df):
    c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
    return c * (1 + x * x / df) ** (-(df + 1) / 2)


def simpson(f, a, b, n=20000):
    xs = np.linspace(a, b, n + 1)
    ys = np.array([f(x) for x in xs])
    h = (b - a) / n
    return h / 3 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-1:2].sum())


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def test_norm_round_trip():
    for p in [0.001, 0.025, 0.2, 0.5, 0.8, 0.975, 0.999]:
        assert stats.norm_cdf(stats.norm_ppf(p)) == pytest.approx(p, abs=1e-12)
    assert stats.norm_ppf(0.975) == pytest.approx(1.959963984540054, abs=1e-9)
    assert stats.norm_ppf(0.5) == pytest.approx(0.0, abs=1e-12)


def test_t_cdf_against_numeric_integration():
    for t, df in [(2.0, 10), (1.0, 3), (-1.5, 7), (0.0, 12), (3.2, 25)]:
        integral = simpson(lambda x: t_pdf(x, df), 0.0, abs(t))
        expected = 0.5 + math.copysign(integral, t)
        assert stats.t_cdf(t, df) == pytest.approx(expected, abs=1e-9)


def test_two_sided_p_for_t2_df10():
    integral = simpson(lambda x: t_pdf(x, 10), 0.0, 2.0)
    expected = 1.0 - 2.0 * integral
    got = 2.0 * (1.0 - stats.t_cdf(2.0, 10))
    assert got == pytest.approx(expected, abs=1e-6)


def test_t_ppf_round_trip():
    for p in [0.6, 0.8, 0.95, 0.975]:
        for df in [1, 4, 30]:
            assert stats.t_cdf(stats.t_ppf(p, df), df) == pytest.approx(p, abs=1e-9)


def test_midranks_average_ties():
    np.testing.assert_allclose(stats.midranks(np.array([1.0, 2.0, 2.0, 3.0])),
                               [1.0, 2.5, 2.5, 4.0])
    np.testing.assert_allclose(stats.midranks(np.array([5.0, 5.0, 5.0])),
                               [2.0, 2.0, 2.0])


# ---------------------------------------------------------------------------
# auc / roc
# ---------------------------------------------------------------------------


def est(scores, labels):
    return stats.auc(np.asarray(scores, dtype=float), np.asarray(labels, dtype=bool))


def test_auc_perfect_separation():
    assert est([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]).auc == 1.0


def test_auc_all_ties():
    assert est([0.5] * 6, [1, 1, 1, 0, 0, 0]).auc == 0.5


def test_auc_three_of_four_pairs():
    assert est([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0]).auc == 0.75


def test_auc_single_class_rejected():
    with pytest.raises(SingleClassScores):
        est([0.1, 0.2], [1, 1])


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(5, 80))
        scores = np.round(rng.random(n), 2)  # heavy ties
        labels = rng.random(n) > 0.4
        if labels.all() or not labels.any():
            continue
        assert est(scores, labels).auc == pytest.approx(
            pairwise_auc(scores, labels), abs=1e-12)


def test_auc_complement():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=40)  # continuous: no ties
    labels = rng.random(40) > 0.5
    labels[0], labels[1] = True, False
    assert est(scores, labels).auc + est(-scores, labels).auc == pytest.approx(1.0)


def test_roc_curve_monotone_and_complete():
    rng = np.random.default_rng(2)
    scores = np.round(rng.random(50), 1)
    labels = rng.random(50) > 0.5
    labels[0], labels[1] = True, False
    curve = stats.roc_curve(scores, labels)
    fpr, tpr = np.asarray(curve.fpr), np.asarray(curve.tpr)
    assert fpr[0] == 0.0 and tpr[0] == 0.0
    assert fpr[-1] == 1.0 and tpr[-1] == 1.0
    assert (np.diff(fpr) >= 0).all() and (np.diff(tpr) >= 0).all()
    assert stats.trapezoid_auc(curve) == pytest.approx(est(scores, labels).auc,
                                                       abs=1e-12)


# ---------------------------------------------------------------------------
# DeLong variance + tests
# ---------------------------------------------------------------------------


def test_variance_zero_when_separated():
    e = stats.delong_variance(np.array([0.9, 0.8, 0.1, 0.2]),
                              np.array([True, True, False, False]))
    assert e.auc == 1.0
    assert e.variance == 0.0


def test_variance_matches_pairwise_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = 100
        scores = np.round(rng.normal(size=n), 1)
        labels = rng.random(n) > 0.5
        if labels.sum() < 2 or (~labels).sum() < 2:
            continue
        got = stats.delong_variance(scores, labels).variance
        assert got == pytest.approx(pairwise_delong_variance(scores, labels),
                                    abs=1e-12)


def test_variance_shrinks_with_duplication():
    rng = np.random.default_rng(4)
    scores = rng.normal(size=60)
    labels = rng.random(60) > 0.5
    labels[:2] = [True, False]
    v1 = stats.delong_variance(scores, labels).variance
    v2 = stats.delong_variance(np.tile(scores, 2), np.tile(labels, 2)).variance
    assert v2 < v1


def test_variance_needs_two_per_class():
    with pytest.raises(TooFewPerClass):
        stats.delong_variance(np.array([0.1, 0.5, 0.9]),
                              np.array([True, False, False]))


def test_unpaired_identical_groups():
    scores = np.array([0.1, 0.7, 0.4, 0.9, 0.2, 0.6])
    labels = np.array([False, True, False, True, False, True])
    res = stats.delong_test_unpaired(scores, labels, scores, labels)
    assert res.statistic == 0.0
    assert res.p_value == 1.0
    assert res.test_kind == "delong_unpaired"


def test_unpaired_detects_large_gap():
    rng = np.random.default_rng(5)
    mu = math.sqrt(2) * stats.norm_ppf(0.9)
    labels = np.concatenate([np.ones(250, bool), np.zeros(250, bool)])
    strong = np.concatenate([rng.normal(mu, 1, 250), rng.normal(0, 1, 250)])
    weak = rng.normal(0, 1, 500)
    res = stats.delong_test_unpaired(strong, labels, weak, labels)
    assert res.p_value < 0.001


def test_paired_self_comparison():
    rng = np.random.default_rng(6)
    scores = rng.normal(size=50)
    labels = rng.random(50) > 0.5
    labels[:2] = [True, False]
    res = stats.delong_test_paired(scores, scores, labels)
    assert res.statistic == 0.0
    assert res.p_value == 1.0
    assert res.test_kind == "delong_paired"


def test_paired_rank_invariance():
    rng = np.random.default_rng(7)
    scores = rng.normal(size=50)
    labels = rng.random(50) > 0.5
    labels[:2] = [True, False]
    warped = np.tanh(scores) * 3 + 5
    res = stats.delong_test_paired(scores, warped, labels)
    assert res.statistic == 0.0
    assert res.p_value == 1.0


# ---------------------------------------------------------------------------
# paired t-test
# ---------------------------------------------------------------------------


def test_ttest_no_change():
    res = stats.paired_ttest(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
    assert res.p_value == 1.0
    assert res.statistic == 0.0


def test_ttest_differences_1112():
    # differences [1,1,1,2]: mean 1.25, sd 0.5 -> t = 1.25 / (0.5/2) = 5.0
    before = np.array([2.0, 2.0, 2.0, 3.0])
    after = np.array([1.0, 1.0, 1.0, 1.0])
    res = stats.paired_ttest(before, after)
    assert res.statistic == pytest.approx(5.0, abs=1e-12)
    diffs = before - after
    assert diffs.mean() == 1.25
    assert diffs.std(ddof=1) == 0.5
    integral = simpson(lambda x: t_pdf(x, 3), 0.0, 5.0)
    assert res.p_value == pytest.approx(1.0 - 2.0 * integral, abs=1e-9)


def test_ttest_identical_nonzero_differences():
    res = stats.paired_ttest(np.array([2.0, 3.0, 4.0]), np.array([1.0, 2.0, 3.0]))
    assert res.p_value == 0.0
    assert math.isinf(res.statistic)


def test_ttest_kind_and_validation():
    res = stats.paired_ttest(np.array([1.0, 2.0]), np.array([0.0, 0.5]))
    assert res.test_kind == "paired_t"
    with pytest.raises(ValueError):
        stats.paired_ttest(np.array([1.0]), np.array([1.0, 2.0]))


# ---------------------------------------------------------------------------
# sample size / power
# ---------------------------------------------------------------------------


def test_affected_to_total_exact():
    assert stats.n_total_for_affected(11, 0.3765) == 30


def test_sample_size_unit_effect():
    spec = stats.PowerSpec(delta=1.0, sd=1.0, alpha=0.05, power=0.8,
                           prevalence=1.0)
    n_affected, n_total = stats.sample_size(spec)
    assert n_affected == 10
    assert n_total == 10


def test_sample_size_achieves_power():
    # simulation oracle: the returned n delivers >= 80% rejections
    spec = stats.PowerSpec(delta=1.0, sd=1.0, alpha=0.05, power=0.8,
                           prevalence=1.0)
    n, _ = stats.sample_size(spec)
    rng = np.random.default_rng(8)
    draws = rng.normal(1.0, 1.0, size=(20000, n))
    t_stat = draws.mean(axis=1) / (draws.std(axis=1, ddof=1) / math.sqrt(n))
    crit = stats.t_ppf(0.975, n - 1)
    assert (np.abs(t_stat) > crit).mean() >= 0.8


def test_sample_size_scales_with_sd():
    wide = stats.PowerSpec(delta=1.0, sd=2.0, alpha=0.05, power=0.8,
                           prevalence=1.0)
    n_wide, _ = stats.sample_size(wide)
    z = stats.norm_ppf(0.975) + stats.norm_ppf(0.8)
    assert math.ceil(z * z) == 8          # normal-approximation n at sd=delta
    assert math.ceil(z * z * 4) == 32     # doubling sd quadruples it
    assert n_wide >= 32                   # t correction only adds samples


def test_power_spec_validation():
    with pytest.raises(InvalidSpec):
        stats.PowerSpec(delta=0.0, sd=1.0, alpha=0.05, power=0.8, prevalence=0.5)
    with pytest.raises(InvalidSpec):
        stats.PowerSpec(delta=1.0, sd=1.0, alpha=1.5, power=0.8, prevalence=0.5)
    with pytest.raises(InvalidSpec):
        stats.n_total_for_affected(5, 0.0)


# ---------------------------------------------------------------------------
# subgroup report
# ---------------------------------------------------------------------------


def test_group_boundaries():
    assert stats._group_key("age", {"age": 32}) == "18-32"
    assert stats._group_key("age", {"age": 33}) == "32-52"
    assert stats._group_key("age", {"age": 52}) == "32-52"
    assert stats._group_key("age", {"age": 53}) == ">52"
    assert stats._group_key("fst", {"fst": 3}) == "I-III"
    assert stats._group_key("fst", {"fst": 4}) == "IV-VI"
    assert stats._group_key("sex", {"sex": "female"}) == "female"


def test_identical_groups_compare_equal():
    rng = np.random.default_rng(9)
    half = rng.normal(size=40)
    labels_half = rng.random(40) > 0.5
    labels_half[:2] = [True, False]
    scores = np.concatenate([half, half])
    labels = np.concatenate([labels_half, labels_half])
    attrs = [{"fst": 2}] * 40 + [{"fst": 5}] * 40
    report = stats.subgroup_report(scores, labels, attrs, "fst")
    assert [g["group"] for g in report["groups"]] == ["I-III", "IV-VI"]
    assert report["pairwise"][0]["p_value"] == 1.0


def test_single_class_group_skipped():
    scores = np.array([0.2, 0.9, 0.5, 0.6, 0.4, 0.8, 0.3, 0.7])
    labels = np.array([False, True, False, True, True, True, True, True])
    attrs = ([{"sex": "female"}] * 4) + ([{"sex": "male"}] * 4)
    report = stats.subgroup_report(scores, labels, attrs, "sex")
    assert [g["group"] for g in report["groups"]] == ["female"]
    assert report["skipped"][0]["group"] == "male"
    assert report["pairwise"] == []


def test_null_groups_rarely_differ():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        mu = math.sqrt(2) * stats.norm_ppf(0.75)
        def group(n):
            labels = np.concatenate([np.ones(n, bool), np.zeros(n, bool)])
            scores = np.concatenate([rng.normal(mu, 1, n), rng.normal(0, 1, n)])
            return scores, labels
        sa, la = group(500)
        sb, lb = group(500)
        res = stats.delong_test_unpaired(sa, la, sb, lb)
        auc_a, auc_b = est(sa, la).auc, est(sb, lb).auc
        if abs(auc_a - auc_b) < 0.05 and res.p_value > 0.05:
            hits += 1
    assert hits >= 90


def test_planted_worse_subgroup_detected():
    rng = np.random.default_rng(10)
    def group(auc_target, n):
        mu = math.sqrt(2) * stats.norm_ppf(auc_target)
        labels = np.concatenate([np.ones(n, bool), np.zeros(n, bool)])
        scores = np.concatenate([rng.normal(mu, 1, n), rng.normal(0, 1, n)])
        return scores, labels
    sa, la = group(0.9, 500)
    sb, lb = group(0.6, 500)
    scores = np.concatenate([sa, sb])
    labels = np.concatenate([la, lb])
    attrs = [{"fst": 1}] * 1000 + [{"fst": 6}] * 1000
    report = stats.subgroup_report(scores, labels, attrs, "fst")
    assert report["pairwise"][0]["p_value"] < 0.01


# ---------------------------------------------------------------------------
# pilot report
# ---------------------------------------------------------------------------


def session(initial, final, accepted=True, n_attempts=1, extra_time=0.0):
    return {"session_id": "s", "initial_quality": initial, "final_quality": final,
            "accepted": accepted, "n_attempts": n_attempts, "extra_time": extra_time}


def test_pilot_all_first_attempt_accepts():
    sessions = [session(q, q) for q in [0, 1, 2, 3, 4, 2, 1]]
    report = stats.pilot_report(sessions)
    for stratum in report["strata"]:
        if stratum["n"]:
            assert stratum["mean_improvement"] == 0.0
            if "reduction_pct" in stratum:
                assert stratum["reduction_pct"] == 0.0
    assert report["poor_reduction_pct"] == 0.0
    assert report["accepted_only"]["n_sessions"] == 7


def test_pilot_seventy_percent_stratum():
    sessions = [session(2, 1, n_attempts=2, extra_time=20.0) for _ in range(7)]
    sessions += [session(2, 2, accepted=False, n_attempts=4, extra_time=60.0)
                 for _ in range(3)]
    report = stats.pilot_report(sessions)
    stratum = report["strata"][2]
    assert stratum["n"] == 10
    assert stratum["reduction_pct"] == pytest.approx(70.0)
    assert report["n_initial_poor"] == 10
    assert report["n_final_poor"] == 3
    assert report["poor_reduction_pct"] == pytest.approx(70.0)
    assert report["mean_attempts"] == pytest.approx(2.6)
    assert report["extra_time_mean"] == pytest.approx(32.0)


def test_pilot_stratum_statistics():
    sessions = [session(3, 1), session(3, 2), session(3, 1), session(3, 3)]
    report = stats.pilot_report(sessions)
    stratum = report["strata"][3]
    imp = np.array([2.0, 1.0, 2.0, 0.0])
    assert stratum["mean_improvement"] == pytest.approx(imp.mean())
    assert stratum["sd_improvement"] == pytest.approx(imp.std(ddof=1))
    expected = stats.paired_ttest(np.full(4, 3.0), np.array([1.0, 2.0, 1.0, 3.0]))
    assert stratum["p_value"] == pytest.approx(expected.p_value)


def test_pilot_unlabeled_rejected():
    bad = session(2, 1)
    bad["final_quality"] = None
    with pytest.raises(UnlabeledAttempt):
        stats.pilot_report([bad])
