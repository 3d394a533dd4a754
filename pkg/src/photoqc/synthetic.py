"""Procedurally generated test assets: a photo-like corpus with controlled
degradations, a two-class pixel dataset for the skin model, and a tiny
hand-built demo model artifact.

The corpus pairs each scene ("patient") with five variants: clean, Gaussian
blur (sigma 3), darkening (x0.2), zoom (30% crop upscaled back), and heavy
noise — so every decision head has positive and negative examples and the
whole pipeline can run end to end without any external data.
"""

from __future__ import annotations

import csv
import math
import os

import numpy as np
from PIL import Image

from . import kernels
from .ensemble import HeadEnsemble, QualityModel
from .features import GROUP1_DIM
from .imagekit import RasterImage, center_crop_frac
from .learners import MemberModel, Scaler
from .skinmodel import GaussianMixture, SkinGmm

RATERS = ("r1", "r2", "r3")
VARIANTS = ("clean", "blur", "dark", "zoom", "noise")
# per-variant (base quality, reason flag or None)
VARIANT_LABELS = {"clean": (0, None), "blur": (3, "blur"), "dark": (3, "lighting"),
                  "zoom": (2, "zoom_crop"), "noise": (2, "other")}


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; img is float (h,w[,c])."""
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    squeeze = img.ndim == 2
    data = img[:, :, None].astype(np.float64) if squeeze else img.astype(np.float64)
    h, w, _ = data.shape
    padded = np.pad(data, ((radius, radius), (0, 0), (0, 0)), mode="reflect")
    vert = np.zeros_like(data)
    for i, k in enumerate(kernel):
        vert += k * padded[i:i + h]
    padded = np.pad(vert, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    out = np.zeros_like(data)
    for i, k in enumerate(kernel):
        out += k * padded[:, i:i + w]
    return out[:, :, 0] if squeeze else out


def _render_scene(rng, h: int, w: int) -> np.ndarray:
    """A skin-patch-on-background scene with enough fine detail to blur away."""
    coarse = rng.uniform(40.0, 215.0, size=(6, 8, 3))
    base = kernels.resize_bilinear(coarse, h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    fx, fy = rng.uniform(0.02, 0.09, size=2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    texture = 16.0 * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
    cy = h * rng.uniform(0.4, 0.6)
    cx = w * rng.uniform(0.4, 0.6)
    ay = h * rng.uniform(0.3, 0.42)
    ax = w * rng.uniform(0.3, 0.42)
    d = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2
    mask = 1.0 / (1.0 + np.exp(8.0 * (d - 1.0)))
    skin_rgb = np.array([rng.uniform(190.0, 225.0), rng.uniform(140.0, 170.0),
                         rng.uniform(115.0, 145.0)])
    shade = 20.0 * (xx / w - 0.5) + 12.0 * (yy / h - 0.5)
    skin = skin_rgb[None, None, :] + shade[:, :, None]
    img = base * (1.0 - mask[:, :, None]) + skin * mask[:, :, None]
    img += texture[:, :, None]
    img += rng.normal(0.0, 7.0, size=(h, w, 1))
    return np.clip(img, 0.0, 255.0)


def _degrade(scene: np.ndarray, variant: str, rng) -> np.ndarray:
    if variant == "clean":
        out = scene
    elif variant == "blur":
        out = gaussian_blur(scene, 3.0)
    elif variant == "dark":
        out = scene * 0.2
    elif variant == "zoom":
        h, w, _ = scene.shape
        raster = RasterImage(np.clip(np.floor(scene + 0.5), 0, 255).astype(np.uint8))
        crop = center_crop_frac(raster, 0.3).data.astype(np.float64)
        out = kernels.resize_bilinear(crop, h, w)
    elif variant == "noise":
        out = scene + rng.normal(0.0, 32.0, size=scene.shape)
        salt = rng.random(scene.shape[:2]) < 0.008
        pepper = rng.random(scene.shape[:2]) < 0.008
        out[salt] = 255.0
        out[pepper] = 0.0
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def generate_corpus(out_dir, n_scenes: int = 40, seed: int = 0) -> str:
    """Write images/ + manifest.csv under out_dir; returns the manifest path."""
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    rows = []
    for scene_idx in range(n_scenes):
        rng = np.random.default_rng([seed, scene_idx])
        patient_id = f"p{scene_idx:03d}"
        h, w = (600, 800) if scene_idx % 8 == 7 else (240, 320)
        scene = _render_scene(rng, h, w)
        age = int(rng.integers(18, 89))
        sex = "female" if rng.random() < 0.5 else "male"
        fst = int(rng.integers(1, 7))
        clean_quality = int(rng.integers(0, 2))
        for variant in VARIANTS:
            image_id = f"{patient_id}_{variant}"
            pixels = _degrade(scene, variant, rng)
            rel_path = os.path.join("images", f"{image_id}.png")
            Image.fromarray(pixels, "RGB").save(os.path.join(out_dir, rel_path))
            base_quality, reason = VARIANT_LABELS[variant]
            if variant == "clean":
                base_quality = clean_quality
            jitter_rater = int(rng.integers(0, len(RATERS))) if rng.random() < 0.5 else -1
            jitter_delta = 1 if rng.random() < 0.5 else -1
            for ri, rater in enumerate(RATERS):
                quality = base_quality
                if ri == jitter_rater:
                    quality = min(4, max(0, quality + jitter_delta))
                flags = {r: 0 for r in ("blur", "lighting", "zoom_crop", "other")}
                if reason is not None and quality >= 2:
                    flags[reason] = 1
                rows.append([image_id, patient_id, rel_path, rater, quality,
                             flags["blur"], flags["lighting"], flags["zoom_crop"],
                             flags["other"], age, sex, fst])
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "patient_id", "file_path", "rater_id", "quality",
                         "blur", "lighting", "zoom_crop", "other", "age", "sex", "fst"])
        writer.writerows(rows)
    return manifest_path


def generate_skin_pixel_dataset(path, n_per_class: int = 4000, seed: int = 0) -> str:
    """Two-class B G R pixel file in the whitespace-separated UCI layout."""
    rng = np.random.default_rng(seed)
    half = n_per_class // 2
    skin_a = rng.normal([110.0, 150.0, 200.0], 22.0, size=(n_per_class - half, 3))
    skin_b = rng.normal([60.0, 95.0, 140.0], 18.0, size=(half, 3))
    non_uniform = rng.uniform(0.0, 255.0, size=(n_per_class - half, 3))
    non_gray = rng.normal([110.0, 110.0, 110.0], 55.0, size=(half, 3))
    with open(path, "w", encoding="utf-8") as fh:
        for block, label in ((skin_a, 1), (skin_b, 1), (non_uniform, 2), (non_gray, 2)):
            for row in np.clip(np.round(block), 0, 255).astype(int):
                fh.write(f"{row[0]}\t{row[1]}\t{row[2]}\t{label}\n")
    return str(path)


# --------------------------------------------------------------------------
# demo model: poor iff the image is mostly dark, reported as blur
# --------------------------------------------------------------------------

DARK_FRAC_INDEX = 28  # dark-pixel fraction of the 30% grayscale crop section


def build_demo_model(seed: int = 7) -> QualityModel:
    """Tiny hand-built artifact for smoke tests and UI end-to-end runs.

    One logistic member keyed on the dark-pixel fraction drives the overall
    and blur heads; lighting and zoom_crop heads never fire. Dark images are
    rejected with reason "blur", bright images are accepted.
    """
    eye = np.eye(3)
    skin_gmm = SkinGmm(
        skin=GaussianMixture(weights=np.array([1.0]),
                             means=np.array([[120.0, 160.0, 200.0]]),
                             covariances=np.array([400.0 * eye])),
        nonskin=GaussianMixture(weights=np.array([1.0]),
                                means=np.array([[128.0, 128.0, 128.0]]),
                                covariances=np.array([6400.0 * eye])),
        class_priors=(0.5, 0.5), k=1, seed=seed)
    weights = np.zeros(GROUP1_DIM)
    weights[DARK_FRAC_INDEX] = 10.0
    member = MemberModel(kind="logistic", params={"weights": weights, "bias": -3.0},
                         hyperparams={"l2": 0.0, "lr": 0.5, "epochs": 0}, seed=seed)
    member_id = "demo.logistic.group1"
    scaler = Scaler(mean=np.zeros(GROUP1_DIM), std=np.ones(GROUP1_DIM),
                    constant=np.zeros(GROUP1_DIM, dtype=bool))
    heads = {}
    for name in ("overall", "blur"):
        heads[name] = HeadEnsemble(head=name, member_ids=(member_id,),
                                   weights=np.array([8.0]), intercept=-4.0,
                                   threshold=0.5)
    for name in ("lighting", "zoom_crop"):
        heads[name] = HeadEnsemble(head=name, member_ids=(member_id,),
                                   weights=np.array([0.0]), intercept=-5.0,
                                   threshold=0.5)
    return QualityModel(artifact_version=1, created_at="1970-01-01T00:00:00Z",
                        feature_layout=1, skin_gmm=skin_gmm,
                        scalers={"group1": scaler},
                        members={member_id: ("group1", member)},
                        heads=heads, external_channels=(),
                        provenance={"stage": "complete", "seed": seed, "demo": True})


def demo_image_bytes(kind: str, size: int = 480) -> bytes:
    """PNG bytes the demo model rejects ("poor", mostly dark) or accepts ("good")."""
    import io

    value = 10 if kind == "poor" else 150
    arr = np.full((size, size, 3), value, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, format="PNG")
    return buf.getvalue()
