"""Per-pixel skin probability from class-conditional Gaussian mixtures.

Two mixtures (skin / non-skin) are fit by EM over B,G,R pixel values; the
posterior P(skin | pixel) is evaluated in log space so extreme 8-bit values
do not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, InsufficientSamples, MissingClass, ParseError
from .imagekit import RasterImage

COVARIANCE_RIDGE = 1e-6
DEFAULT_COMPONENTS = 4


@dataclass(frozen=True)
class PixelSample:
    b: int
    g: int
    r: int
    skin: bool


@dataclass(frozen=True)
class GaussianMixture:
    """One class-conditional mixture: weights (k,), means (k,3), covariances (k,3,3)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        k = self.weights.shape[0]
        if self.means.shape != (k, 3) or self.covariances.shape != (k, 3, 3):
            raise ValueError("inconsistent mixture shapes")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError("component weights must sum to 1")

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """log f(x) for rows of x, via log-sum-exp over components."""
        parts = np.empty((x.shape[0], self.weights.shape[0]))
        for j in range(self.weights.shape[0]):
            parts[:, j] = np.log(max(float(self.weights[j]), 1e-300)) + _gaussian_logpdf(
                x, self.means[j], self.covariances[j])
        return _logsumexp_rows(parts)


@dataclass(frozen=True)
class SkinGmm:
    skin: GaussianMixture
    nonskin: GaussianMixture
    class_priors: tuple  # (skin, nonskin)
    k: int
    seed: int

    def __post_init__(self):
        if abs(self.class_priors[0] + self.class_priors[1] - 1.0) > 1e-9:
            raise ValueError("class priors must sum to 1")


@dataclass(frozen=True)
class SkinMap:
    data: np.ndarray = field(repr=False)  # (h, w) posteriors in [0, 1]

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError("skin map must be 2-D")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("skin probabilities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def load_skin_dataset(path) -> list:
    """Parse whitespace-separated "B G R label" rows; label 1 = skin, 2 = non-skin."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            try:
                b, g, r, label = (int(f) for f in fields)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field") from None
            if not all(0 <= v <= 255 for v in (b, g, r)):
                raise ParseError(f"{path}:{lineno}: channel out of [0,255]")
            if label not in (1, 2):
                raise ParseError(f"{path}:{lineno}: unknown label {label}")
            samples.append(PixelSample(b=b, g=g, r=r, skin=(label == 1)))
    if not samples:
        raise EmptyDataset(f"{path}: no samples")
    return samples


def _gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance not positive definite")
    centered = x - mean
    maha = np.einsum("ni,ij,nj->n", centered, np.linalg.inv(cov), centered)
    d = x.shape[1]
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def fit_gmm(samples: np.ndarray, k: int, seed: int, tol: float = 1e-6,
            max_iter: int = 200, trace: list | None = None) -> GaussianMixture:
    """EM with full covariances and a 1e-6 diagonal ridge.

    Means start at k distinct data points drawn by a seeded generator,
    covariances at the global population covariance, weights uniform.
    The log-likelihood is asserted non-decreasing (tolerance 1e-9) and the
    loop stops when the gain drops below `tol`. When `trace` is a list, the
    per-iteration log-likelihood values are appended to it.
    """
    x = np.ascontiguousarray(samples, dtype=np.float64)
    n, d = x.shape
    if n < k:
        raise InsufficientSamples(f"need at least {k} samples, got {n}")
    distinct = np.unique(x, axis=0)
    if distinct.shape[0] < k:
        raise InsufficientSamples(f"need {k} distinct samples, got {distinct.shape[0]}")
    rng = np.random.default_rng(seed)
    means = distinct[rng.choice(distinct.shape[0], size=k, replace=False)].copy()
    global_cov = np.cov(x, rowvar=False, ddof=0).reshape(d, d) + COVARIANCE_RIDGE * np.eye(d)
    covs = np.repeat(global_cov[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)

    prev_ll = -np.inf
    for _ in range(max_iter):
        log_joint = np.empty((n, k))
        for j in range(k):
            log_joint[:, j] = np.log(max(float(weights[j]), 1e-300)) + _gaussian_logpdf(
                x, means[j], covs[j])
        log_norm = _logsumexp_rows(log_joint)
        ll = float(log_norm.sum())
        if trace is not None:
            trace.append(ll)
        assert ll >= prev_ll - 1e-9, "EM log-likelihood decreased"
        gain = ll - prev_ll
        resp = np.exp(log_joint - log_norm[:, None])
        counts = np.maximum(resp.sum(axis=0), 1e-12)
        weights = counts / n
        means = (resp.T @ x) / counts[:, None]
        for j in range(k):
            centered = x - means[j]
            covs[j] = (resp[:, j][:, None] * centered).T @ centered / counts[j]
            covs[j] += COVARIANCE_RIDGE * np.eye(d)
        if gain < tol:
            break
        prev_ll = ll
    weights = weights / weights.sum()
    return GaussianMixture(weights=weights, means=means, covariances=covs)


def train_skin_model(samples, k: int = DEFAULT_COMPONENTS, seed: int = 7) -> SkinGmm:
    """Fit one mixture per class; class priors are the empirical frequencies."""
    skin_x = np.array([[s.b, s.g, s.r] for s in samples if s.skin], dtype=np.float64)
    non_x = np.array([[s.b, s.g, s.r] for s in samples if not s.skin], dtype=np.float64)
    if skin_x.size == 0 or non_x.size == 0:
        raise MissingClass("both skin and non-skin samples are required")
    total = skin_x.shape[0] + non_x.shape[0]
    return SkinGmm(
        skin=fit_gmm(skin_x, k, seed),
        nonskin=fit_gmm(non_x, k, seed + 1),
        class_priors=(skin_x.shape[0] / total, non_x.shape[0] / total),
        k=k, seed=seed)


def skin_probability_map(img: RasterImage, model: SkinGmm) -> SkinMap:
    """Posterior P(skin | B,G,R) per pixel, evaluated in log space."""
    rgb = img.data.reshape(-1, 3).astype(np.float64)
    bgr = rgb[:, ::-1]
    log_skin = np.log(model.class_priors[0]) + model.skin.log_density(bgr)
    log_non = np.log(model.class_priors[1]) + model.nonskin.log_density(bgr)
    diff = log_skin - log_non
    p = np.empty_like(diff)
    pos = diff >= 0
    p[pos] = 1.0 / (1.0 + np.exp(-diff[pos]))
    ed = np.exp(diff[~pos])
    p[~pos] = ed / (1.0 + ed)
    return SkinMap(p.reshape(img.height, img.width))


# --------------------------------------------------------------------------
# artifact (de)serialization
# --------------------------------------------------------------------------

def mixture_to_dict(m: GaussianMixture) -> dict:
    return {"weights": m.weights.tolist(), "means": m.means.tolist(),
            "covariances": m.covariances.tolist()}


def mixture_from_dict(d: dict) -> GaussianMixture:
    return GaussianMixture(weights=np.array(d["weights"], dtype=np.float64),
                           means=np.array(d["means"], dtype=np.float64),
                           covariances=np.array(d["covariances"], dtype=np.float64))


def skin_gmm_to_dict(model: SkinGmm) -> dict:
    return {"skin": mixture_to_dict(model.skin),
            "nonskin": mixture_to_dict(model.nonskin),
            "class_priors": list(model.class_priors),
            "k": model.k, "seed": model.seed}


def skin_gmm_from_dict(d: dict) -> SkinGmm:
    return SkinGmm(skin=mixture_from_dict(d["skin"]),
                   nonskin=mixture_from_dict(d["nonskin"]),
                   class_priors=(float(d["class_priors"][0]), float(d["class_priors"][1])),
                   k=int(d["k"]), seed=int(d["seed"]))
