"""Annotation schema, manifest ingestion, rater aggregation, patient-level
splitting, and inter-rater concordance.

Quality is a 0-4 grade (letter A-F); an image is poor when the aggregated
grade is >= 2. All splits operate on patients so no patient's images leak
across train/validation/test.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (InconsistentDemographics, NoCommonImages, SchemaError,
                     TooFewPatients)

REASONS = ("blur", "lighting", "zoom_crop", "other")
QUALITY_LETTERS = "ABCDF"
POOR_QUALITY_MIN = 2
DEFAULT_SPLIT_RATIOS = (0.539, 0.252, 0.209)
SPLIT_NAMES = ("train", "validation", "test")

MANIFEST_COLUMNS = ("image_id", "patient_id", "file_path", "rater_id", "quality",
                    "blur", "lighting", "zoom_crop", "other", "age", "sex", "fst")


@dataclass(frozen=True)
class QualityAnnotation:
    rater_id: str
    quality: int
    reasons: frozenset

    def __post_init__(self):
        if self.quality not in range(5):
            raise SchemaError(f"quality must be 0-4, got {self.quality}")
        if self.reasons and self.quality < POOR_QUALITY_MIN:
            raise SchemaError("reasons are only allowed when quality >= 2")
        if not self.reasons <= set(REASONS):
            raise SchemaError(f"unknown reasons {set(self.reasons) - set(REASONS)}")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    patient_id: str
    file_path: str
    annotations: tuple
    aggregated_quality: int
    aggregated_reasons: frozenset

    @property
    def is_poor(self) -> bool:
        return self.aggregated_quality >= POOR_QUALITY_MIN


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    age: float
    sex: str
    fst: int

    def __post_init__(self):
        if self.sex not in ("female", "male"):
            raise SchemaError(f"sex must be female or male, got {self.sex!r}")
        if self.fst not in range(1, 7):
            raise SchemaError(f"fst must be 1-6, got {self.fst}")


def quality_letter(quality: int) -> str:
    return QUALITY_LETTERS[quality]


def aggregate_labels(annotations) -> tuple:
    """(aggregated quality, aggregated reasons) for one image's annotations.

    Quality is the median rater grade, taking the upper median on even
    counts. A reason is kept when the image aggregates to poor and at least
    half of the poor-voting raters flagged it.
    """
    if not annotations:
        raise ValueError("at least one annotation required")
    grades = sorted(a.quality for a in annotations)
    quality = grades[len(grades) // 2]
    reasons = set()
    if quality >= POOR_QUALITY_MIN:
        poor_voters = [a for a in annotations if a.quality >= POOR_QUALITY_MIN]
        for r in REASONS:
            flagged = sum(1 for a in poor_voters if r in a.reasons)
            if 2 * flagged >= len(poor_voters) and flagged > 0:
                reasons.add(r)
    return quality, frozenset(reasons)


def _parse_int(value: str, column: str, row_num: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise SchemaError(f"row {row_num}: {column} must be an integer, got {value!r}") from None


def load_manifest(path):
    """Parse the (image, rater)-row CSV into image and patient records.

    Returns (image_records, patients) where patients maps patient_id to its
    PatientRecord. Demographics must agree across a patient's rows; missing
    image files produce a warning, not an error.
    """
    by_image = {}
    image_meta = {}
    patients = {}
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"manifest lacks columns: {sorted(missing)}")
        for row_num, row in enumerate(reader, start=2):
            quality = _parse_int(row["quality"], "quality", row_num)
            reasons = set()
            for r in REASONS:
                flag = row[r].strip()
                if flag not in ("0", "1"):
                    raise SchemaError(f"row {row_num}: {r} flag must be 0 or 1")
                if flag == "1":
                    reasons.add(r)
            try:
                ann = QualityAnnotation(rater_id=row["rater_id"], quality=quality,
                                        reasons=frozenset(reasons))
            except SchemaError as exc:
                raise SchemaError(f"row {row_num}: {exc}") from None
            try:
                patient = PatientRecord(patient_id=row["patient_id"],
                                        age=float(row["age"]), sex=row["sex"],
                                        fst=_parse_int(row["fst"], "fst", row_num))
            except SchemaError as exc:
                raise SchemaError(f"row {row_num}: {exc}") from None
            prior = patients.get(patient.patient_id)
            if prior is not None and prior != patient:
                raise InconsistentDemographics(
                    f"row {row_num}: patient {patient.patient_id} demographics changed")
            patients[patient.patient_id] = patient
            key = row["image_id"]
            meta = (row["patient_id"], row["file_path"])
            if key in image_meta and image_meta[key] != meta:
                raise SchemaError(f"row {row_num}: image {key} re-declared differently")
            image_meta[key] = meta
            by_image.setdefault(key, []).append(ann)
    if not by_image:
        raise SchemaError(f"{path}: no data rows")
    records = []
    for image_id in by_image:
        patient_id, file_path = image_meta[image_id]
        resolved = file_path if os.path.isabs(file_path) else os.path.join(base_dir, file_path)
        if not os.path.exists(resolved):
            warnings.warn(f"image file missing: {resolved}", stacklevel=2)
        quality, reasons = aggregate_labels(by_image[image_id])
        records.append(ImageRecord(image_id=image_id, patient_id=patient_id,
                                   file_path=resolved,
                                   annotations=tuple(by_image[image_id]),
                                   aggregated_quality=quality,
                                   aggregated_reasons=reasons))
    records.sort(key=lambda r: r.image_id)
    return records, patients


def head_labels(records, head: str) -> np.ndarray:
    """Binary labels for one decision head (True = positive = poor/reason)."""
    if head == "overall":
        return np.array([r.is_poor for r in records], dtype=bool)
    if head in REASONS:
        return np.array([r.is_poor and head in r.aggregated_reasons for r in records],
                        dtype=bool)
    raise ValueError(f"unknown head {head!r}")


def split_patients(patient_ids, ratios=DEFAULT_SPLIT_RATIOS, seed: int = 7) -> dict:
    """Seeded patient shuffle + contiguous assignment with largest-remainder
    rounding; returns patient_id -> train|validation|test."""
    ids = sorted(set(patient_ids))
    if len(ids) < 3:
        raise TooFewPatients(f"need at least 3 patients, got {len(ids)}")
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise ValueError("split ratios must sum to 1")
    order = np.array(ids, dtype=object)
    np.random.default_rng(seed).shuffle(order)
    n = len(ids)
    exact = [r * n for r in ratios]
    counts = [math.floor(e) for e in exact]
    fracs = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in range(n - sum(counts)):
        counts[fracs[i]] += 1
    assignment = {}
    start = 0
    for split_name, count in zip(SPLIT_NAMES, counts):
        for pid in order[start:start + count]:
            assignment[pid] = split_name
        start += count
    return assignment


def split_records(records, assignment: dict) -> dict:
    out = {name: [] for name in SPLIT_NAMES}
    for r in records:
        out[assignment[r.patient_id]].append(r)
    return out


def concordance_table(records) -> dict:
    """Pairwise signed quality differences and binary agreement per rater pair.

    entry (i, j) holds the mean and population std of (rater_j - rater_i)
    over their common images (antisymmetric in the mean), plus the fraction
    of common images where both raters agree on poor vs good.
    """
    by_rater = {}
    for rec in records:
        for ann in rec.annotations:
            by_rater.setdefault(ann.rater_id, {})[rec.image_id] = ann.quality
    raters = sorted(by_rater)
    pairs = {}
    for i, ra in enumerate(raters):
        for rb in raters[i + 1:]:
            common = sorted(set(by_rater[ra]) & set(by_rater[rb]))
            if not common:
                continue
            qa = np.array([by_rater[ra][img] for img in common], dtype=np.float64)
            qb = np.array([by_rater[rb][img] for img in common], dtype=np.float64)
            diffs = qb - qa
            agree = float(np.mean((qa >= POOR_QUALITY_MIN) == (qb >= POOR_QUALITY_MIN)))
            pairs[(ra, rb)] = {"n": len(common), "mean": float(diffs.mean()),
                               "std": float(diffs.std()), "agreement": agree}
    if not pairs:
        raise NoCommonImages("no rater pair shares an image")
    return {"raters": raters, "pairs": pairs}


def concordance_entries(table: dict) -> list:
    """Flatten a concordance table into antisymmetric (i, j) entries."""
    rows = []
    for (ra, rb), cell in sorted(table["pairs"].items()):
        rows.append({"rater_i": ra, "rater_j": rb, **cell})
        rows.append({"rater_i": rb, "rater_j": ra, "n": cell["n"],
                     "mean": -cell["mean"], "std": cell["std"],
                     "agreement": cell["agreement"]})
    return rows
