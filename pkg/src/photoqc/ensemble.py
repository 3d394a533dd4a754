"""Gated ensemble: per-head non-negative logistic stacking over member
scores, TPR-maximizing threshold calibration under an FPR cap, verdict
assembly, and the single-file JSON model artifact.

The four heads are overall, blur, lighting, zoom_crop. Sub-head reasons are
surfaced only when the overall head declares the image poor (gating); a poor
image with no firing sub-head reports the fallback reason "other".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import canonjson, features, learners, skinmodel
from .errors import (IncompatibleArtifactVersion, SchemaValidationError,
                     SingleClassScores, SingleClassTraining, UnknownExternalChannel)
from .imagekit import RasterImage, resize_max_side

ARTIFACT_VERSION = 1
HEADS = ("overall", "blur", "lighting", "zoom_crop")
SUB_HEADS = ("blur", "lighting", "zoom_crop")
EXTERNAL_PREFIX = "external:"


@dataclass(frozen=True)
class HeadEnsemble:
    head: str
    member_ids: tuple  # ordered; external channels carry the "external:" prefix
    weights: np.ndarray  # non-negative, one per member id
    intercept: float
    threshold: float  # in [0,1]
    calibration_scores: tuple = ()  # validation scores/labels kept so the
    calibration_labels: tuple = ()  # operating point can be re-derived later

    def __post_init__(self):
        if self.weights.shape != (len(self.member_ids),):
            raise ValueError("one weight per member id required")
        if self.weights.size and self.weights.min() < 0:
            raise ValueError("head weights must be non-negative")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0,1]")


@dataclass(frozen=True)
class Verdict:
    overall_score: float
    is_poor: bool
    reasons: tuple  # subset of blur/lighting/zoom_crop/other; empty iff good
    reason_scores: dict
    quality_letter_hint: str | None = None

    def to_dict(self) -> dict:
        return {"overall_score": self.overall_score, "is_poor": self.is_poor,
                "reasons": list(self.reasons),
                "reason_scores": dict(self.reason_scores),
                "quality_letter_hint": self.quality_letter_hint}


@dataclass(frozen=True)
class QualityModel:
    artifact_version: int
    created_at: str
    feature_layout: int
    skin_gmm: skinmodel.SkinGmm
    scalers: dict  # feature group -> Scaler
    members: dict  # member_id -> (feature_group, MemberModel)
    heads: dict  # head name -> HeadEnsemble
    external_channels: tuple
    provenance: dict = field(default_factory=dict)

    @property
    def stage(self) -> str:
        return self.provenance.get("stage", "complete")


def _sigmoid(z):
    return learners._sigmoid(np.asarray(z, dtype=np.float64))


def fit_ensemble_weights(member_scores: np.ndarray, labels: np.ndarray,
                         lr: float = 0.5, epochs: int = 2000):
    """Non-negative logistic stacking by projected full-batch gradient descent.

    Returns (weights, intercept) minimizing mean log-loss of
    sigmoid(w . s + b) subject to w >= 0.
    """
    s = np.asarray(member_scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.ndim != 2 or s.shape[1] < 1:
        raise ValueError("member_scores must be (n, m) with m >= 1")
    if y.all() or not y.any():
        raise SingleClassTraining("stacking labels contain a single class")
    yf = y.astype(np.float64)
    w = np.zeros(s.shape[1])
    b = 0.0
    n = s.shape[0]
    for _ in range(epochs):
        p = _sigmoid(s @ w + b)
        resid = p - yf
        w = np.maximum(w - lr * (s.T @ resid / n), 0.0)
        b -= lr * float(resid.mean())
        assert w.min() >= 0.0
    return w, b


def calibrate_threshold(scores, labels, fpr_cap: float) -> float:
    """Max-TPR threshold subject to FPR <= fpr_cap.

    Candidates are midpoints between adjacent distinct scores plus -inf/+inf
    sentinels; score >= threshold classifies as poor. Ties resolve to the
    lowest FPR, then the lowest threshold. The returned value may be a
    sentinel; clamp to the score range before storing where [0,1] is required.
    """
    if not 0.0 <= fpr_cap <= 1.0:
        raise ValueError("fpr_cap must lie in [0,1]")
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if y.all() or not y.any():
        raise SingleClassScores("threshold calibration needs both classes")
    distinct = np.unique(scores)
    candidates = [-math.inf]
    candidates.extend(((distinct[:-1] + distinct[1:]) / 2.0).tolist())
    candidates.append(math.inf)
    pos = scores[y]
    neg = scores[~y]
    best = None  # (-tpr, fpr, threshold)
    for t in candidates:
        tpr = float((pos >= t).mean())
        fpr = float((neg >= t).mean())
        if fpr > fpr_cap:
            continue
        key = (-tpr, fpr, t)
        if best is None or key < best:
            best = key
    return best[2]


def clamp_threshold(threshold: float) -> float:
    """Map sentinel thresholds into [0,1]; member scores are sigmoids, so 0
    flags everything and 1 flags nothing, preserving the operating point."""
    return min(max(threshold, 0.0), 1.0)


def combined_scores(head: HeadEnsemble, scores_by_id: dict, external=None,
                    n_rows: int | None = None) -> np.ndarray:
    """sigmoid(w . s + b) over the head's members, vectorized over rows.

    When every declared external channel is absent, external weight mass is
    renormalized onto the internal members.
    """
    ext_ids = [m for m in head.member_ids if m.startswith(EXTERNAL_PREFIX)]
    ext_present = bool(external) and all(
        m[len(EXTERNAL_PREFIX):] in external for m in ext_ids)
    if ext_ids and external and not ext_present:
        missing = [m for m in ext_ids if m[len(EXTERNAL_PREFIX):] not in external]
        raise UnknownExternalChannel(
            f"external channels must be all present or all absent; missing {missing}")
    scale = 1.0
    if ext_ids and not ext_present:
        total = float(head.weights.sum())
        ext_mass = float(sum(w for m, w in zip(head.member_ids, head.weights)
                             if m.startswith(EXTERNAL_PREFIX)))
        remaining = total - ext_mass
        scale = total / remaining if remaining > 0 else 0.0
    n = n_rows
    for v in scores_by_id.values():
        n = np.asarray(v).shape[0]
        break
    if n is None and external:
        n = np.asarray(next(iter(external.values()))).shape[0]
    if n is None:
        raise ValueError("cannot infer row count; pass n_rows")
    z = np.full(n, head.intercept, dtype=np.float64)
    for member_id, weight in zip(head.member_ids, head.weights):
        if member_id.startswith(EXTERNAL_PREFIX):
            if not ext_present:
                continue
            s = np.asarray(external[member_id[len(EXTERNAL_PREFIX):]], dtype=np.float64)
        else:
            s = np.asarray(scores_by_id[member_id], dtype=np.float64) * scale
        z += weight * s
    return _sigmoid(z)


def member_score_matrix(model: QualityModel, group_rows: dict, member_ids) -> dict:
    """Scores per member id from already-scaled feature rows per group."""
    out = {}
    for member_id in member_ids:
        if member_id.startswith(EXTERNAL_PREFIX):
            continue
        group, member = model.members[member_id]
        out[member_id] = learners.predict_scores(member, group_rows[group])
    return out


def assess(img: RasterImage, model: QualityModel, external: dict | None = None) -> Verdict:
    """Full image assessment: preprocess, featurize, score members, gate heads."""
    if model.stage != "complete":
        raise SchemaValidationError(f"model stage {model.stage!r} cannot assess")
    if external:
        unknown = set(external) - set(model.external_channels)
        if unknown:
            raise UnknownExternalChannel(f"undeclared external channels {sorted(unknown)}")
        for name, value in external.items():
            if not 0.0 <= float(value) <= 1.0:
                raise UnknownExternalChannel(f"external score {name} outside [0,1]")
        external = {k: np.array([float(v)]) for k, v in external.items()}
    resized = resize_max_side(img)
    referenced = set()
    for head in model.heads.values():
        referenced.update(m for m in head.member_ids if not m.startswith(EXTERNAL_PREFIX))
    needed_groups = {model.members[m][0] for m in referenced}
    group_rows = {}
    if "group1" in needed_groups:
        skin = skinmodel.skin_probability_map(resized, model.skin_gmm)
        vec = features.group1_features(resized, skin).values
        group_rows["group1"] = learners.apply_scaler(model.scalers["group1"], vec[None, :])
    if "group2" in needed_groups:
        vec = features.group2_features(resized).values
        group_rows["group2"] = learners.apply_scaler(model.scalers["group2"], vec[None, :])
    scores = member_score_matrix(model, group_rows, referenced)

    overall_head = model.heads["overall"]
    overall = float(combined_scores(
        overall_head, {m: scores[m] for m in overall_head.member_ids
                       if not m.startswith(EXTERNAL_PREFIX)}, external)[0])
    is_poor = overall >= overall_head.threshold
    reasons = []
    reason_scores = {}
    if is_poor:
        for name in SUB_HEADS:
            head = model.heads[name]
            s = float(combined_scores(
                head, {m: scores[m] for m in head.member_ids
                       if not m.startswith(EXTERNAL_PREFIX)}, external)[0])
            reason_scores[name] = s
            if s >= head.threshold:
                reasons.append(name)
        if not reasons:
            reasons = ["other"]
    return Verdict(overall_score=overall, is_poor=is_poor, reasons=tuple(reasons),
                   reason_scores=reason_scores)


# --------------------------------------------------------------------------
# artifact (de)serialization
# --------------------------------------------------------------------------

def _head_to_dict(h: HeadEnsemble) -> dict:
    return {"member_ids": list(h.member_ids), "weights": h.weights.tolist(),
            "intercept": h.intercept, "threshold": h.threshold,
            "calibration_scores": list(h.calibration_scores),
            "calibration_labels": [int(v) for v in h.calibration_labels]}


def _head_from_dict(name: str, d: dict) -> HeadEnsemble:
    return HeadEnsemble(head=name, member_ids=tuple(d["member_ids"]),
                        weights=np.array(d["weights"], dtype=np.float64),
                        intercept=float(d["intercept"]),
                        threshold=float(d["threshold"]),
                        calibration_scores=tuple(d.get("calibration_scores", ())),
                        calibration_labels=tuple(d.get("calibration_labels", ())))


def model_to_dict(model: QualityModel) -> dict:
    return {
        "artifact_version": model.artifact_version,
        "created_at": model.created_at,
        "feature_layout": model.feature_layout,
        "skin_gmm": skinmodel.skin_gmm_to_dict(model.skin_gmm),
        "scalers": {g: learners.scaler_to_dict(s) for g, s in model.scalers.items()},
        "members": [{"member_id": mid, "feature_group": group,
                     "model": learners.member_to_dict(member)}
                    for mid, (group, member) in sorted(model.members.items())],
        "heads": {name: _head_to_dict(h) for name, h in model.heads.items()},
        "external_channels": list(model.external_channels),
        "provenance": model.provenance,
    }


def model_from_dict(doc: dict) -> QualityModel:
    required = ("artifact_version", "created_at", "feature_layout", "skin_gmm",
                "scalers", "members", "heads", "external_channels", "provenance")
    missing = [k for k in required if k not in doc]
    if missing:
        raise SchemaValidationError(f"artifact lacks fields {missing}")
    if doc["artifact_version"] != ARTIFACT_VERSION:
        raise IncompatibleArtifactVersion(
            f"artifact version {doc['artifact_version']} unsupported")
    members = {}
    for entry in doc["members"]:
        members[entry["member_id"]] = (entry["feature_group"],
                                       learners.member_from_dict(entry["model"]))
    heads = {name: _head_from_dict(name, h) for name, h in doc["heads"].items()}
    external = tuple(doc["external_channels"])
    stage = doc["provenance"].get("stage", "complete")
    if stage in ("weighted", "complete"):
        if sorted(heads) != sorted(HEADS):
            raise SchemaValidationError(f"expected heads {HEADS}, got {sorted(heads)}")
        for head in heads.values():
            for mid in head.member_ids:
                if mid.startswith(EXTERNAL_PREFIX):
                    if mid[len(EXTERNAL_PREFIX):] not in external:
                        raise SchemaValidationError(f"undeclared external ref {mid}")
                elif mid not in members:
                    raise SchemaValidationError(f"head references unknown member {mid}")
    return QualityModel(
        artifact_version=int(doc["artifact_version"]),
        created_at=str(doc["created_at"]),
        feature_layout=int(doc["feature_layout"]),
        skin_gmm=skinmodel.skin_gmm_from_dict(doc["skin_gmm"]),
        scalers={g: learners.scaler_from_dict(s) for g, s in doc["scalers"].items()},
        members=members, heads=heads, external_channels=external,
        provenance=doc["provenance"])


def save_model(model: QualityModel, path) -> None:
    canonjson.dump_path(model_to_dict(model), path)


def load_model(path) -> QualityModel:
    return model_from_dict(canonjson.load_path(path))
