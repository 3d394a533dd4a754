"""Stage orchestration: skin-model fit, corpus featurization, member
training with cross-validated selection, ensemble weight fitting, threshold
calibration, evaluation reports, and capture-log analytics.

Every stage is deterministic given its seed; run twice with the same inputs
(and SOURCE_DATE_EPOCH pinned) the pipeline produces byte-identical
artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from datetime import datetime, timezone

import numpy as np

from . import canonjson, datasets, ensemble, features, learners, skinmodel, stats
from .datasets import SPLIT_NAMES
from .errors import DataError, UnlabeledAttempt
from .imagekit import decode_image, resize_max_side

MEMBER_KINDS = ("logistic", "linear_svm", "random_forest")
FEATURE_GROUPS = ("group1", "group2")

GRIDS = {
    "default": {
        "logistic": tuple({"kind": "logistic", "l2": l2} for l2 in (1e-4, 1e-2, 1.0)),
        "linear_svm": tuple({"kind": "linear_svm", "l2": l2} for l2 in (1e-4, 1e-2, 1.0)),
        "random_forest": tuple({"kind": "random_forest", "n_trees": 100,
                                "max_depth": d, "min_leaf": m}
                               for d in (6, 12, None) for m in (1, 5)),
    },
    "fast": {
        "logistic": ({"kind": "logistic", "l2": 1e-2},),
        "linear_svm": ({"kind": "linear_svm", "l2": 1e-2},),
        "random_forest": ({"kind": "random_forest", "n_trees": 50,
                           "max_depth": 8, "min_leaf": 2},),
    },
}


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def created_at_string() -> str:
    """ISO timestamp; honors SOURCE_DATE_EPOCH for reproducible artifacts."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch
              else datetime.now(tz=timezone.utc))
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def _sanitize(obj):
    """Replace non-finite floats with None so reports stay canonical JSON."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def fit_skin_stage(data_path, k: int = 4, seed: int = 7) -> skinmodel.SkinGmm:
    samples = skinmodel.load_skin_dataset(data_path)
    return skinmodel.train_skin_model(samples, k=k, seed=seed)


def featurize_stage(manifest_path, skin: skinmodel.SkinGmm, out_dir,
                    max_side: int = 512):
    """Compute both feature groups for every manifest image; write containers."""
    records, patients = datasets.load_manifest(manifest_path)
    os.makedirs(out_dir, exist_ok=True)
    g1_rows, g2_rows, image_ids = [], [], []
    for record in records:
        with open(record.file_path, "rb") as fh:
            img = decode_image(fh.read())
        img = resize_max_side(img, max_side)
        skin_map = skinmodel.skin_probability_map(img, skin)
        g1_rows.append(features.group1_features(img, skin_map).values)
        g2_rows.append(features.group2_features(img).values)
        image_ids.append(record.image_id)
    features.save_feature_matrix(os.path.join(out_dir, "group1.fm"), "group1",
                                 np.vstack(g1_rows), image_ids)
    features.save_feature_matrix(os.path.join(out_dir, "group2.fm"), "group2",
                                 np.vstack(g2_rows), image_ids)
    return records, patients


def load_feature_dir(features_dir) -> dict:
    """group -> (matrix, row index by image_id)."""
    out = {}
    for group in FEATURE_GROUPS:
        path = os.path.join(features_dir, f"{group}.fm")
        got_group, matrix, image_ids = features.load_feature_matrix(path)
        if got_group != group:
            raise DataError(f"{path}: contains {got_group}, expected {group}")
        out[group] = (matrix, {img: i for i, img in enumerate(image_ids)})
    return out


def _rows_for(records, feature_data, group):
    matrix, index = feature_data[group]
    try:
        rows = [index[r.image_id] for r in records]
    except KeyError as exc:
        raise DataError(f"image {exc.args[0]} missing from {group} features") from None
    return matrix[np.array(rows, dtype=np.int64)]


def _scaled_group_rows(model, records, feature_data) -> dict:
    return {group: learners.apply_scaler(model.scalers[group],
                                         _rows_for(records, feature_data, group))
            for group in model.scalers}


def _member_ids_for(head: str):
    return tuple(f"{head}.{kind}.{group}" for kind in MEMBER_KINDS
                 for group in FEATURE_GROUPS)


def train_stage(manifest_path, features_dir, skin: skinmodel.SkinGmm,
                seed: int = 7, grid: str = "default",
                ratios=datasets.DEFAULT_SPLIT_RATIOS) -> ensemble.QualityModel:
    """Train all per-head members with patient-disjoint CV model selection."""
    records, patients = datasets.load_manifest(manifest_path)
    feature_data = load_feature_dir(features_dir)
    assignment = datasets.split_patients([r.patient_id for r in records],
                                         ratios=ratios, seed=seed)
    splits = datasets.split_records(records, assignment)
    train_records = splits["train"]
    if len(train_records) < 2:
        raise DataError("train split has fewer than 2 images")

    scalers = {}
    scaled_train = {}
    for group in FEATURE_GROUPS:
        raw = _rows_for(train_records, feature_data, group)
        scalers[group] = learners.fit_scaler(raw)
        scaled_train[group] = learners.apply_scaler(scalers[group], raw)

    grid_spec = GRIDS[grid]
    image_ids = tuple(r.image_id for r in train_records)
    patient_ids = tuple(r.patient_id for r in train_records)
    members = {}
    cv_info = {}
    for head in ensemble.HEADS:
        labels = datasets.head_labels(train_records, head)
        for kind in MEMBER_KINDS:
            for group in FEATURE_GROUPS:
                ts = learners.TrainingSet(features=scaled_train[group], labels=labels,
                                          image_ids=image_ids, patient_ids=patient_ids)
                plan = learners.CvPlan(folds=3, grid=grid_spec[kind], seed=seed)
                chosen, results = learners.cross_validate(ts, plan)
                hyper = {k: v for k, v in chosen.items() if k != "kind"}
                member = learners.train_member(kind, ts, hyper, seed)
                member_id = f"{head}.{kind}.{group}"
                members[member_id] = (group, member)
                cv_info[member_id] = {
                    "chosen": chosen,
                    "results": [{"candidate": r["candidate"],
                                 "mean_auc": (None if math.isnan(r["mean_auc"])
                                              else r["mean_auc"])}
                                for r in results]}

    provenance = {
        "stage": "members",
        "seed": seed,
        "grid": grid,
        "split_ratios": list(ratios),
        "splits": {name: sorted({r.patient_id for r in splits[name]})
                   for name in SPLIT_NAMES},
        "manifest_sha256": file_sha256(manifest_path),
        "cv": cv_info,
    }
    return ensemble.QualityModel(
        artifact_version=ensemble.ARTIFACT_VERSION, created_at=created_at_string(),
        feature_layout=features.LAYOUT_VERSION, skin_gmm=skin, scalers=scalers,
        members=members, heads={}, external_channels=(), provenance=provenance)


def _records_of_split(manifest_path, model, split_name):
    records, patients = datasets.load_manifest(manifest_path)
    wanted = set(model.provenance["splits"][split_name])
    return [r for r in records if r.patient_id in wanted], patients


def fit_ensemble_stage(model: ensemble.QualityModel, manifest_path,
                       features_dir) -> ensemble.QualityModel:
    """Fit per-head non-negative stacking weights on the train split."""
    train_records, _ = _records_of_split(manifest_path, model, "train")
    feature_data = load_feature_dir(features_dir)
    scaled = _scaled_group_rows(model, train_records, feature_data)
    heads = {}
    for head in ensemble.HEADS:
        member_ids = _member_ids_for(head)
        scores = ensemble.member_score_matrix(model, scaled, member_ids)
        matrix = np.column_stack([scores[m] for m in member_ids])
        labels = datasets.head_labels(train_records, head)
        weights, intercept = ensemble.fit_ensemble_weights(matrix, labels)
        heads[head] = ensemble.HeadEnsemble(head=head, member_ids=member_ids,
                                            weights=weights, intercept=intercept,
                                            threshold=1.0)
    provenance = dict(model.provenance)
    provenance["stage"] = "weighted"
    return ensemble.QualityModel(
        artifact_version=model.artifact_version, created_at=model.created_at,
        feature_layout=model.feature_layout, skin_gmm=model.skin_gmm,
        scalers=model.scalers, members=model.members, heads=heads,
        external_channels=model.external_channels, provenance=provenance)


def calibrate_stage(model: ensemble.QualityModel, manifest_path, features_dir,
                    fpr_cap: float = 0.3) -> ensemble.QualityModel:
    """Pick per-head thresholds on the validation split under the FPR cap."""
    val_records, _ = _records_of_split(manifest_path, model, "validation")
    feature_data = load_feature_dir(features_dir)
    scaled = _scaled_group_rows(model, val_records, feature_data)
    heads = {}
    for head_name, head in model.heads.items():
        scores = ensemble.member_score_matrix(model, scaled, head.member_ids)
        combined = ensemble.combined_scores(head, scores)
        labels = datasets.head_labels(val_records, head_name)
        threshold = ensemble.clamp_threshold(
            ensemble.calibrate_threshold(combined, labels, fpr_cap))
        heads[head_name] = ensemble.HeadEnsemble(
            head=head_name, member_ids=head.member_ids, weights=head.weights,
            intercept=head.intercept, threshold=threshold,
            calibration_scores=tuple(float(s) for s in combined),
            calibration_labels=tuple(bool(v) for v in labels))
    provenance = dict(model.provenance)
    provenance["stage"] = "complete"
    provenance["fpr_cap"] = fpr_cap
    return ensemble.QualityModel(
        artifact_version=model.artifact_version, created_at=model.created_at,
        feature_layout=model.feature_layout, skin_gmm=model.skin_gmm,
        scalers=model.scalers, members=model.members, heads=heads,
        external_channels=model.external_channels, provenance=provenance)


def recalibrate_thresholds(model: ensemble.QualityModel,
                           fpr_cap: float) -> ensemble.QualityModel:
    """Re-derive thresholds from the stored validation scores (config override)."""
    heads = {}
    for name, head in model.heads.items():
        if not head.calibration_scores:
            raise DataError(f"head {name} carries no calibration data")
        threshold = ensemble.clamp_threshold(ensemble.calibrate_threshold(
            np.array(head.calibration_scores),
            np.array(head.calibration_labels, dtype=bool), fpr_cap))
        heads[name] = ensemble.HeadEnsemble(
            head=name, member_ids=head.member_ids, weights=head.weights,
            intercept=head.intercept, threshold=threshold,
            calibration_scores=head.calibration_scores,
            calibration_labels=head.calibration_labels)
    provenance = dict(model.provenance)
    provenance["fpr_cap"] = fpr_cap
    return ensemble.QualityModel(
        artifact_version=model.artifact_version, created_at=model.created_at,
        feature_layout=model.feature_layout, skin_gmm=model.skin_gmm,
        scalers=model.scalers, members=model.members, heads=heads,
        external_channels=model.external_channels, provenance=provenance)


def head_scores_for_records(model, records, feature_data) -> dict:
    scaled = _scaled_group_rows(model, records, feature_data)
    out = {}
    for name, head in model.heads.items():
        scores = ensemble.member_score_matrix(model, scaled, head.member_ids)
        out[name] = ensemble.combined_scores(head, scores)
    return out


def evaluate_stage(model: ensemble.QualityModel, manifest_path, features_dir,
                   out_dir=None, groupings=("fst", "age", "sex"),
                   split_name: str = "test") -> dict:
    """Test-split AUCs with DeLong variance, ROC curves, subgroup fairness."""
    records, patients = _records_of_split(manifest_path, model, split_name)
    feature_data = load_feature_dir(features_dir)
    combined = head_scores_for_records(model, records, feature_data)
    report = {"split": split_name, "n_images": len(records), "heads": {},
              "subgroups": {}}
    curves = {}
    for name in ensemble.HEADS:
        labels = datasets.head_labels(records, name)
        scores = combined[name]
        est = stats.delong_variance(scores, labels)
        report["heads"][name] = {"auc": est.auc, "variance": est.variance,
                                 "n_pos": est.n_pos, "n_neg": est.n_neg,
                                 "threshold": model.heads[name].threshold}
        curves[name] = stats.roc_curve(scores, labels)
    attrs = [{"age": patients[r.patient_id].age, "sex": patients[r.patient_id].sex,
              "fst": patients[r.patient_id].fst} for r in records]
    overall_labels = datasets.head_labels(records, "overall")
    for grouping in groupings:
        report["subgroups"][grouping] = stats.subgroup_report(
            combined["overall"], overall_labels, attrs, grouping)
    report = _sanitize(report)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        canonjson.dump_path(report, os.path.join(out_dir, "report.json"))
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(render_eval_text(report))
        for name, curve in curves.items():
            with open(os.path.join(out_dir, f"roc_{name}.csv"), "w", newline="",
                      encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["threshold", "fpr", "tpr"])
                for t, f, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
                    writer.writerow([repr(float(t)), repr(float(f)), repr(float(tp))])
    return report


def assess_image(model: ensemble.QualityModel, image_path,
                 external: dict | None = None) -> ensemble.Verdict:
    with open(image_path, "rb") as fh:
        img = decode_image(fh.read())
    return ensemble.assess(img, model, external)


def run_full_pipeline(manifest_path, skin_data_path, out_dir, seed: int = 7,
                      fpr_cap: float = 0.3, grid: str = "fast", k: int = 4) -> dict:
    """fit-skin -> featurize -> train -> fit-ensemble -> calibrate, one call."""
    os.makedirs(out_dir, exist_ok=True)
    skin = fit_skin_stage(skin_data_path, k=k, seed=seed)
    features_dir = os.path.join(out_dir, "features")
    featurize_stage(manifest_path, skin, features_dir)
    model = train_stage(manifest_path, features_dir, skin, seed=seed, grid=grid)
    model = fit_ensemble_stage(model, manifest_path, features_dir)
    model = calibrate_stage(model, manifest_path, features_dir, fpr_cap=fpr_cap)
    model_path = os.path.join(out_dir, "model.json")
    provenance = dict(model.provenance)
    provenance["skin_data_sha256"] = file_sha256(skin_data_path)
    model = ensemble.QualityModel(
        artifact_version=model.artifact_version, created_at=model.created_at,
        feature_layout=model.feature_layout, skin_gmm=model.skin_gmm,
        scalers=model.scalers, members=model.members, heads=model.heads,
        external_channels=model.external_channels, provenance=provenance)
    ensemble.save_model(model, model_path)
    return {"model_path": model_path, "features_dir": features_dir}


# --------------------------------------------------------------------------
# capture-log analytics inputs
# --------------------------------------------------------------------------

def load_attempt_labels(path) -> dict:
    """CSV with image_ref,quality (optionally a rater_id column); multiple
    rows per image aggregate by the upper median."""
    grades = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "image_ref" not in reader.fieldnames \
                or "quality" not in reader.fieldnames:
            raise DataError(f"{path}: expected columns image_ref,quality")
        for row in reader:
            grades.setdefault(row["image_ref"], []).append(int(row["quality"]))
    return {ref: sorted(qs)[len(qs) // 2] for ref, qs in grades.items()}


def pilot_sessions_from_log(log_path, labels: dict) -> list:
    """Reconstruct finalized sessions from a JSONL event log, attaching
    rater quality labels by content-addressed image reference."""
    sessions = {}
    order = []
    with open(log_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = canonjson.loads(line)
            sid = entry["session_id"]
            if sid not in sessions:
                sessions[sid] = {"attempts": [], "final_index": None, "state": None}
                order.append(sid)
            if entry["event"] == "attempt_submitted":
                sessions[sid]["attempts"].append(
                    {"image_ref": entry["payload"]["image_ref"],
                     "at": entry["timestamp"]})
            elif entry["event"] == "session_finalized":
                sessions[sid]["final_index"] = entry["payload"]["final_attempt_index"]
                sessions[sid]["state"] = entry["payload"]["state"]
    out = []
    for sid in order:
        data = sessions[sid]
        if data["final_index"] is None or not data["attempts"]:
            continue  # session never finished; not part of the study stats
        attempts = data["attempts"]

        def grade(ref):
            if ref not in labels:
                raise UnlabeledAttempt(f"no quality label for image {ref}")
            return labels[ref]

        initial_ref = attempts[0]["image_ref"]
        final_ref = attempts[data["final_index"]]["image_ref"]
        out.append({"session_id": sid,
                    "initial_quality": grade(initial_ref),
                    "final_quality": grade(final_ref),
                    "accepted": data["state"] == "accepted",
                    "n_attempts": len(attempts),
                    "extra_time": attempts[-1]["at"] - attempts[0]["at"]})
    return out


# --------------------------------------------------------------------------
# text rendering
# --------------------------------------------------------------------------

def render_eval_text(report: dict) -> str:
    lines = [f"split: {report['split']}  images: {report['n_images']}", ""]
    lines.append(f"{'head':<10} {'auc':>8} {'se':>8} {'n_pos':>6} {'n_neg':>6} {'thr':>8}")
    for name, h in report["heads"].items():
        se = math.sqrt(h["variance"]) if h["variance"] else 0.0
        lines.append(f"{name:<10} {h['auc']:>8.3f} {se:>8.3f} "
                     f"{h['n_pos']:>6} {h['n_neg']:>6} {h['threshold']:>8.3f}")
    for grouping, sub in report.get("subgroups", {}).items():
        lines.append("")
        lines.append(f"subgroups by {grouping}:")
        for g in sub["groups"]:
            lines.append(f"  {g['group']:<8} n={g['n']:<5} auc={g['auc']:.3f}")
        for p in sub["pairwise"]:
            lines.append(f"  {p['group_a']} vs {p['group_b']}: "
                         f"z={p['z']:.3f} p={p['p_value']:.4f}")
        for s in sub["skipped"]:
            lines.append(f"  {s['group']}: skipped ({s['reason']})")
    return "\n".join(lines) + "\n"


def render_pilot_text(report: dict) -> str:
    lines = [f"sessions: {report['n_sessions']}"]
    lines.append(f"{'initial':<8} {'n':>4} {'improvement':>14} {'p':>10} {'reduction':>10}")
    for s in report["strata"]:
        if s["n"] == 0:
            lines.append(f"{s['initial_quality']:<8} {0:>4}")
            continue
        imp = f"{s['mean_improvement']:.2f} ± {s['sd_improvement']:.2f}"
        p = f"{s['p_value']:.2e}" if "p_value" in s else "-"
        red = f"{s['reduction_pct']:.1f}%" if "reduction_pct" in s else "-"
        lines.append(f"{s['initial_quality']:<8} {s['n']:>4} {imp:>14} {p:>10} {red:>10}")
    if "poor_reduction_pct" in report:
        lines.append(f"poor-patient reduction: {report['poor_reduction_pct']:.1f}%")
    if "mean_attempts" in report:
        lines.append(f"images per session: {report['mean_attempts']:.2f}")
        lines.append(f"extra time: {report['extra_time_mean']:.1f} "
                     f"± {report['extra_time_sd']:.1f} s")
    return "\n".join(lines) + "\n"
