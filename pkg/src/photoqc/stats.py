"""Evaluation mathematics: ROC/AUC with fast DeLong variance, paired and
unpaired AUC tests, paired t-tests, power/sample-size, subgroup fairness
reports, and capture-session improvement analytics.

AUC is Mann-Whitney with half-credit for ties, computed via midranks in
O(n log n); the DeLong machinery follows the structural-component (V10/V01)
formulation. The t and normal distribution helpers are self-contained
(continued-fraction incomplete beta; Acklam inverse normal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (GroupSingleClass, InvalidSpec, SingleClassScores,
                     TooFewPerClass, UnlabeledAttempt)


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending; +inf first
    fpr: np.ndarray
    tpr: np.ndarray


@dataclass(frozen=True)
class AucEstimate:
    auc: float
    variance: float  # NaN for plain point estimates
    n_pos: int
    n_neg: int


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    test_kind: str  # delong_paired | delong_unpaired | paired_t


@dataclass(frozen=True)
class PowerSpec:
    delta: float
    sd: float
    alpha: float = 0.05
    power: float = 0.8
    prevalence: float = 1.0

    def __post_init__(self):
        if not (self.delta > 0 and self.sd > 0):
            raise InvalidSpec("delta and sd must be positive")
        for name in ("alpha", "power", "prevalence"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0) and not (name == "prevalence" and v == 1.0):
                raise InvalidSpec(f"{name} must lie in (0,1)")


# --------------------------------------------------------------------------
# distribution helpers
# --------------------------------------------------------------------------

def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_ppf(p: float) -> float:
    """Inverse standard normal CDF (Acklam's rational approximation, refined
    by one Halley step against erfc so the result is good to ~1e-15)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0,1)")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    plow, phigh = 0.02425, 1 - 0.02425
    if p < plow:
        q = math.sqrt(-2 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    elif p <= phigh:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log(1 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    err = norm_cdf(x) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * betainc_reg(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def t_ppf(p: float, df: float) -> float:
    """Inverse t CDF by bisection on the monotone CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0,1)")
    if p == 0.5:
        return 0.0
    lo, hi = -1.0, 1.0
    while t_cdf(lo, df) > p:
        lo *= 2.0
        if lo < -1e12:
            break
    while t_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e12:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# ROC / AUC / DeLong
# --------------------------------------------------------------------------

def midranks(x: np.ndarray) -> np.ndarray:
    """1-based midranks: ties share the average of their rank range."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _split_classes(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    pos = scores[labels]
    neg = scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise SingleClassScores("both classes are required")
    return pos, neg


def auc(scores, labels) -> AucEstimate:
    """Mann-Whitney AUC (half credit for ties) via midranks."""
    pos, neg = _split_classes(scores, labels)
    m, n = pos.size, neg.size
    tz = midranks(np.concatenate([pos, neg]))
    value = (tz[:m].sum() - m * (m + 1) / 2.0) / (m * n)
    return AucEstimate(auc=float(value), variance=math.nan, n_pos=m, n_neg=n)


def roc_curve(scores, labels) -> RocCurve:
    """ROC points from (0,0) to (1,1); threshold t classifies score >= t as poor."""
    pos, neg = _split_classes(scores, labels)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    distinct = np.unique(scores)[::-1]
    thresholds = [math.inf]
    fpr = [0.0]
    tpr = [0.0]
    for t in distinct:
        thresholds.append(float(t))
        tpr.append(float((pos >= t).mean()))
        fpr.append(float((neg >= t).mean()))
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        thresholds.append(-math.inf)
        fpr.append(1.0)
        tpr.append(1.0)
    return RocCurve(thresholds=np.array(thresholds), fpr=np.array(fpr),
                    tpr=np.array(tpr))


def trapezoid_auc(curve: RocCurve) -> float:
    return float(np.trapezoid(curve.tpr, curve.fpr))


def _structural_components(scores, labels):
    """DeLong V10 (per positive) and V01 (per negative) via three midrank passes."""
    pos, neg = _split_classes(scores, labels)
    m, n = pos.size, neg.size
    if m < 2 or n < 2:
        raise TooFewPerClass("DeLong needs at least 2 samples per class")
    tx = midranks(pos)
    ty = midranks(neg)
    tz = midranks(np.concatenate([pos, neg]))
    v10 = (tz[:m] - tx) / n
    v01 = 1.0 - (tz[m:] - ty) / m
    value = (tz[:m].sum() - m * (m + 1) / 2.0) / (m * n)
    return float(value), v10, v01


def delong_variance(scores, labels) -> AucEstimate:
    value, v10, v01 = _structural_components(scores, labels)
    m, n = v10.size, v01.size
    var = float(v10.var(ddof=1) / m + v01.var(ddof=1) / n)
    return AucEstimate(auc=value, variance=var, n_pos=m, n_neg=n)


def _two_sided_normal_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def _z_test(diff: float, var: float, kind: str) -> TestResult:
    if var <= 0.0:
        if diff == 0.0:
            return TestResult(statistic=0.0, p_value=1.0, test_kind=kind)
        return TestResult(statistic=math.copysign(math.inf, diff), p_value=0.0,
                          test_kind=kind)
    z = diff / math.sqrt(var)
    return TestResult(statistic=z, p_value=_two_sided_normal_p(z), test_kind=kind)


def delong_test_unpaired(scores_a, labels_a, scores_b, labels_b) -> TestResult:
    """Two-sided z-test of AUC_a - AUC_b for disjoint sample sets."""
    ea = delong_variance(scores_a, labels_a)
    eb = delong_variance(scores_b, labels_b)
    return _z_test(ea.auc - eb.auc, ea.variance + eb.variance, "delong_unpaired")


def delong_test_paired(scores_1, scores_2, labels) -> TestResult:
    """Two-sided z-test for two classifiers scoring the same samples."""
    a1, v10_1, v01_1 = _structural_components(scores_1, labels)
    a2, v10_2, v01_2 = _structural_components(scores_2, labels)
    m, n = v10_1.size, v01_1.size
    s10 = np.cov(np.vstack([v10_1, v10_2]), ddof=1)
    s01 = np.cov(np.vstack([v01_1, v01_2]), ddof=1)
    var = float((s10[0, 0] + s10[1, 1] - 2 * s10[0, 1]) / m
                + (s01[0, 0] + s01[1, 1] - 2 * s01[0, 1]) / n)
    return _z_test(a1 - a2, var, "delong_paired")


# --------------------------------------------------------------------------
# paired t-test and power
# --------------------------------------------------------------------------

def paired_ttest(before, after) -> TestResult:
    """Standard paired t on (before - after); df = n-1, two-sided p.

    Degenerate differences follow fixed conventions: all-zero -> p = 1;
    identical nonzero differences -> infinite statistic, p = 0.
    """
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape or before.size < 2:
        raise ValueError("need two equal-length samples with n >= 2")
    d = before - after
    n = d.size
    sd = d.std(ddof=1)
    if sd == 0.0:
        if d[0] == 0.0:
            return TestResult(statistic=0.0, p_value=1.0, test_kind="paired_t")
        return TestResult(statistic=math.copysign(math.inf, d[0]), p_value=0.0,
                          test_kind="paired_t")
    t = float(d.mean() / (sd / math.sqrt(n)))
    p = 2.0 * (1.0 - t_cdf(abs(t), n - 1))
    return TestResult(statistic=t, p_value=min(max(p, 0.0), 1.0), test_kind="paired_t")


def sample_size(spec: PowerSpec):
    """One-sample two-sided t sample size.

    Starts from the normal approximation and iterates with t quantiles until
    the count stabilizes (an oscillating pair resolves to its maximum).
    Returns (n_affected, n_total) with n_total = ceil(n_affected / prevalence).
    """
    z_a = norm_ppf(1.0 - spec.alpha / 2.0)
    z_p = norm_ppf(spec.power)
    ratio = spec.sd / spec.delta
    n = max(2, math.ceil(((z_a + z_p) * ratio) ** 2))
    seen = []
    for _ in range(100):
        t_a = t_ppf(1.0 - spec.alpha / 2.0, n - 1)
        t_p = t_ppf(spec.power, n - 1)
        nxt = max(2, math.ceil(((t_a + t_p) * ratio) ** 2))
        if nxt == n:
            break
        if nxt in seen:  # two-cycle; take the conservative end
            n = max(n, nxt)
            break
        seen.append(n)
        n = nxt
    n_total = math.ceil(n / spec.prevalence)
    return n, n_total


def n_total_for_affected(n_affected: int, prevalence: float) -> int:
    if n_affected < 1 or not (0.0 < prevalence <= 1.0):
        raise InvalidSpec("need n_affected >= 1 and prevalence in (0,1]")
    return math.ceil(n_affected / prevalence)


# --------------------------------------------------------------------------
# subgroup fairness report
# --------------------------------------------------------------------------

def _group_key(grouping: str, attrs: dict) -> str:
    if grouping == "fst":
        return "I-III" if int(attrs["fst"]) <= 3 else "IV-VI"
    if grouping == "age":
        age = float(attrs["age"])
        if age <= 32:
            return "18-32"
        if age <= 52:
            return "32-52"
        return ">52"
    if grouping == "sex":
        return str(attrs["sex"])
    raise ValueError(f"unknown grouping {grouping!r}")


def subgroup_report(scores, labels, attrs: list, grouping: str) -> dict:
    """Per-group AUC (+DeLong variance) and pairwise unpaired DeLong tests.

    `attrs` carries one dict per sample with age/sex/fst. Groups with a
    single class are reported as skipped rather than failing the report.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    keys = np.array([_group_key(grouping, a) for a in attrs], dtype=object)
    groups = []
    skipped = []
    members = {}
    for name in sorted(set(keys)):
        sel = keys == name
        try:
            est = delong_variance(scores[sel], labels[sel])
        except (SingleClassScores, TooFewPerClass) as exc:
            skipped.append({"group": name, "reason": str(GroupSingleClass(str(exc)))})
            continue
        members[name] = sel
        groups.append({"group": name, "n": int(sel.sum()), "n_pos": est.n_pos,
                       "auc": est.auc, "variance": est.variance})
    pairwise = []
    names = [g["group"] for g in groups]
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a, b = members[names[i]], members[names[j]]
            res = delong_test_unpaired(scores[a], labels[a], scores[b], labels[b])
            pairwise.append({"group_a": names[i], "group_b": names[j],
                             "z": res.statistic, "p_value": res.p_value})
    return {"grouping": grouping, "groups": groups, "pairwise": pairwise,
            "skipped": skipped}


# --------------------------------------------------------------------------
# capture-session improvement analytics
# --------------------------------------------------------------------------

POOR_QUALITY_MIN = 2  # quality grade >= 2 means poor


def pilot_report(sessions: list) -> dict:
    """Improvement statistics over capture sessions.

    Each session dict needs initial_quality, final_quality, accepted,
    n_attempts, extra_time. Strata are formed by initial quality; each
    reports the mean/sd improvement (initial - final), a paired t p-value,
    and for poor-initial strata the share of sessions whose final image is
    no longer poor.
    """
    for s in sessions:
        if s.get("initial_quality") is None or s.get("final_quality") is None:
            raise UnlabeledAttempt(
                f"session {s.get('session_id', '?')} lacks quality labels")

    def rollup(subset: list) -> dict:
        strata = []
        for q in range(5):
            rows = [s for s in subset if s["initial_quality"] == q]
            if not rows:
                strata.append({"initial_quality": q, "n": 0})
                continue
            init = np.array([s["initial_quality"] for s in rows], dtype=np.float64)
            final = np.array([s["final_quality"] for s in rows], dtype=np.float64)
            imp = init - final
            entry = {"initial_quality": q, "n": len(rows),
                     "mean_improvement": float(imp.mean()),
                     "sd_improvement": float(imp.std(ddof=1)) if len(rows) > 1 else 0.0}
            if len(rows) > 1:
                entry["p_value"] = paired_ttest(init, final).p_value
            if q >= POOR_QUALITY_MIN:
                good_now = sum(1 for s in rows if s["final_quality"] < POOR_QUALITY_MIN)
                entry["reduction_pct"] = 100.0 * good_now / len(rows)
            strata.append(entry)
        n_init_poor = sum(1 for s in subset if s["initial_quality"] >= POOR_QUALITY_MIN)
        n_final_poor = sum(1 for s in subset if s["initial_quality"] >= POOR_QUALITY_MIN
                           and s["final_quality"] >= POOR_QUALITY_MIN)
        attempts = np.array([s["n_attempts"] for s in subset], dtype=np.float64)
        extra = np.array([s["extra_time"] for s in subset], dtype=np.float64)
        out = {"n_sessions": len(subset), "strata": strata,
               "n_initial_poor": n_init_poor, "n_final_poor": n_final_poor}
        if n_init_poor:
            out["poor_reduction_pct"] = 100.0 * (n_init_poor - n_final_poor) / n_init_poor
        if subset:
            out["mean_attempts"] = float(attempts.mean())
            out["extra_time_mean"] = float(extra.mean())
            out["extra_time_sd"] = float(extra.std(ddof=1)) if len(subset) > 1 else 0.0
        return out

    report = rollup(sessions)
    report["accepted_only"] = rollup([s for s in sessions if s["accepted"]])
    return report
