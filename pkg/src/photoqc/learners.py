"""Classical member models: logistic regression, linear SVM (Platt-calibrated),
and a CART random forest, plus patient-disjoint cross-validated model selection.

All trainers are full-batch and deterministic given their seed, so model
artifacts are reproducible byte for byte. Scores are probabilities in [0,1]
with positive = poor quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, SingleClassTraining, TooFewPatients

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainingSet:
    features: np.ndarray = field(repr=False)  # (n, d)
    labels: np.ndarray = field(repr=False)    # (n,) bool, True = poor
    image_ids: tuple
    patient_ids: tuple

    def __post_init__(self):
        n = self.features.shape[0]
        if n < 2:
            raise ValueError("training set needs at least 2 rows")
        if self.labels.shape != (n,) or len(self.image_ids) != n or len(self.patient_ids) != n:
            raise ValueError("row counts disagree")


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray  # floored at 1e-12; constant columns flagged below
    constant: np.ndarray  # bool per column


@dataclass(frozen=True)
class MemberModel:
    kind: str  # logistic | linear_svm | random_forest
    params: dict
    hyperparams: dict
    seed: int


@dataclass(frozen=True)
class CvPlan:
    folds: int
    grid: tuple  # candidate hyperparameter dicts, each with a "kind" key
    seed: int

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if not self.grid:
            raise ValueError("empty hyperparameter grid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --------------------------------------------------------------------------
# standardization
# --------------------------------------------------------------------------

def fit_scaler(x: np.ndarray) -> Scaler:
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    constant = std <= STD_FLOOR
    return Scaler(mean=mean, std=np.maximum(std, STD_FLOOR), constant=constant)


def apply_scaler(scaler: Scaler, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = (x - scaler.mean) / scaler.std
    if scaler.constant.any():
        out[..., scaler.constant] = 0.0
    return out


# --------------------------------------------------------------------------
# logistic regression
# --------------------------------------------------------------------------

def logistic_loss_grad(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray,
                       l2: float):
    """Mean log-loss + l2/2 * ||w||^2 (bias unregularized) and its gradient."""
    z = x @ w + b
    # log(1 + exp(-m)) with m = z for positives, -z for negatives, stably
    m = np.where(y, z, -z)
    loss = float(np.mean(np.log1p(np.exp(-np.abs(m))) + np.maximum(-m, 0.0)))
    loss += 0.5 * l2 * float(w @ w)
    p = _sigmoid(z)
    resid = p - y.astype(np.float64)
    grad_w = x.T @ resid / x.shape[0] + l2 * w
    grad_b = float(resid.mean())
    return loss, grad_w, grad_b


def _require_two_classes(labels: np.ndarray) -> None:
    if labels.all() or not labels.any():
        raise SingleClassTraining("training labels contain a single class")


def train_logistic(train: TrainingSet, l2: float = 1e-2, lr: float = 0.5,
                   epochs: int = 500, seed: int = 0) -> MemberModel:
    _require_two_classes(train.labels)
    x = train.features.astype(np.float64)
    y = train.labels
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        _, grad_w, grad_b = logistic_loss_grad(w, b, x, y, l2)
        w = w - lr * grad_w
        b = b - lr * grad_b
    return MemberModel(kind="logistic",
                       params={"weights": w, "bias": b},
                       hyperparams={"l2": l2, "lr": lr, "epochs": epochs},
                       seed=seed)


# --------------------------------------------------------------------------
# linear SVM with Platt calibration
# --------------------------------------------------------------------------

def _svm_fit_raw(x: np.ndarray, sign: np.ndarray, l2: float, epochs: int):
    """Full-batch primal subgradient descent on hinge loss + l2/2 ||w||^2."""
    lam = max(l2, 1e-12)
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    for t in range(1, epochs + 1):
        eta = 1.0 / (lam * t)
        margins = sign * (x @ w + b)
        viol = margins < 1.0
        grad_w = lam * w - (sign[viol][:, None] * x[viol]).sum(axis=0) / n
        grad_b = -sign[viol].sum() / n
        w = w - eta * grad_w
        b = b - eta * grad_b
    return w, b


def _fit_platt(margins: np.ndarray, y: np.ndarray):
    """2-parameter logistic fit (Newton, small ridge keeps it bounded)."""
    yf = y.astype(np.float64)
    a, b = 0.0, 0.0
    ridge = 1e-6
    for _ in range(50):
        z = a * margins + b
        p = _sigmoid(z)
        resid = p - yf
        g = np.array([np.mean(resid * margins) + ridge * a,
                      np.mean(resid) + ridge * b])
        wgt = p * (1.0 - p)
        h = np.array([[np.mean(wgt * margins * margins), np.mean(wgt * margins)],
                      [np.mean(wgt * margins), np.mean(wgt)]]) + ridge * np.eye(2)
        step = np.linalg.solve(h, g)
        a -= float(step[0])
        b -= float(step[1])
        if np.abs(step).max() < 1e-10:
            break
    return a, b


def train_linear_svm(train: TrainingSet, l2: float = 1e-2, epochs: int = 500,
                     seed: int = 0, platt_folds: int = 3) -> MemberModel:
    _require_two_classes(train.labels)
    x = train.features.astype(np.float64)
    y = train.labels
    sign = np.where(y, 1.0, -1.0)
    w, b = _svm_fit_raw(x, sign, l2, epochs)

    # out-of-fold margins for calibration; folds stratified per class
    rng = np.random.default_rng(seed)
    folds = np.empty(x.shape[0], dtype=np.int64)
    for cls in (False, True):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        folds[idx] = np.arange(idx.size) % platt_folds
    oof = np.empty(x.shape[0])
    for f in range(platt_folds):
        hold = folds == f
        rest_y = y[~hold]
        if hold.all() or rest_y.all() or not rest_y.any():
            # degenerate fold: fall back to the full model's margins
            oof[hold] = x[hold] @ w + b
            continue
        wf, bf = _svm_fit_raw(x[~hold], sign[~hold], l2, epochs)
        oof[hold] = x[hold] @ wf + bf
    a, pb = _fit_platt(oof, y)
    return MemberModel(kind="linear_svm",
                       params={"weights": w, "bias": b, "platt_a": a, "platt_b": pb},
                       hyperparams={"l2": l2, "epochs": epochs, "platt_folds": platt_folds},
                       seed=seed)


# --------------------------------------------------------------------------
# random forest
# --------------------------------------------------------------------------

def _best_split(x: np.ndarray, y: np.ndarray, dims: np.ndarray, min_leaf: int):
    """Best (gini decrease, dim, threshold) over candidate dims; None if no
    positive-decrease split keeps both children >= min_leaf.

    Ties break toward the lowest dimension index, then the lowest threshold
    (dims are scanned in ascending order, cut positions in ascending value
    order, and only strict improvements are kept).
    """
    n = y.size
    pos_total = int(y.sum())
    frac = pos_total / n
    parent_gini = 1.0 - frac * frac - (1.0 - frac) * (1.0 - frac)
    best = None  # (decrease, dim, threshold)
    yf = y.astype(np.float64)
    for dim in np.sort(dims):
        v = x[:, dim]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        prefix_pos = np.cumsum(yf[order])
        i = np.arange(n - 1)
        cuttable = vs[:-1] < vs[1:]
        if min_leaf > 1:
            cuttable &= (i + 1 >= min_leaf) & (n - i - 1 >= min_leaf)
        cuts = np.flatnonzero(cuttable)
        if cuts.size == 0:
            continue
        n_l = (cuts + 1).astype(np.float64)
        n_r = n - n_l
        pos_l = prefix_pos[cuts]
        pos_r = pos_total - pos_l
        fl = pos_l / n_l
        fr = pos_r / n_r
        gini_l = 1.0 - fl * fl - (1.0 - fl) * (1.0 - fl)
        gini_r = 1.0 - fr * fr - (1.0 - fr) * (1.0 - fr)
        decrease = parent_gini - (n_l * gini_l + n_r * gini_r) / n
        k = int(np.argmax(decrease))
        if decrease[k] <= 0.0:
            continue
        if best is None or decrease[k] > best[0]:
            cut = cuts[k]
            thr = (vs[cut] + vs[cut + 1]) / 2.0
            if not (vs[cut] <= thr < vs[cut + 1]):
                thr = float(vs[cut])
            best = (float(decrease[k]), int(dim), float(thr))
    return best


def _grow_tree(x: np.ndarray, y: np.ndarray, rng, max_depth, min_leaf: int,
               m_features: int) -> dict:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    d = x.shape[1]
    root = new_node()
    stack = [(np.arange(x.shape[0]), 0, root)]
    while stack:
        idx, depth, node = stack.pop()
        ys = y[idx]
        pos = int(ys.sum())
        value[node] = pos / idx.size
        pure = pos == 0 or pos == idx.size
        depth_capped = max_depth is not None and depth >= max_depth
        if pure or depth_capped or idx.size < 2 * min_leaf:
            continue
        dims = rng.choice(d, size=m_features, replace=False)
        split = _best_split(x[idx], ys, dims, min_leaf)
        if split is None:
            continue
        _, dim, thr = split
        go_left = x[idx, dim] <= thr
        feature[node] = dim
        threshold[node] = thr
        left[node] = new_node()
        right[node] = new_node()
        # push right first so the left child is processed (and numbered) next
        stack.append((idx[~go_left], depth + 1, right[node]))
        stack.append((idx[go_left], depth + 1, left[node]))
    return {"feature": np.array(feature, dtype=np.int64),
            "threshold": np.array(threshold, dtype=np.float64),
            "left": np.array(left, dtype=np.int64),
            "right": np.array(right, dtype=np.int64),
            "value": np.array(value, dtype=np.float64)}


def _tree_scores(tree: dict, x: np.ndarray) -> np.ndarray:
    node = np.zeros(x.shape[0], dtype=np.int64)
    feature = tree["feature"]
    while True:
        active = np.flatnonzero(feature[node] >= 0)
        if active.size == 0:
            break
        cur = node[active]
        go_left = x[active, feature[cur]] <= tree["threshold"][cur]
        node[active] = np.where(go_left, tree["left"][cur], tree["right"][cur])
    return tree["value"][node]


def train_random_forest(train: TrainingSet, n_trees: int = 100, max_depth=None,
                        min_leaf: int = 1, m_features=None, seed: int = 0) -> MemberModel:
    _require_two_classes(train.labels)
    x = train.features.astype(np.float64)
    y = train.labels
    n, d = x.shape
    if m_features is None:
        m_features = int(math.ceil(math.sqrt(d)))
    if m_features > d:
        raise ValueError("m_features exceeds the feature dimension")
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(x[boot], y[boot], rng, max_depth, min_leaf, m_features))
    return MemberModel(kind="random_forest",
                       params={"trees": trees, "n_features": d},
                       hyperparams={"n_trees": n_trees, "max_depth": max_depth,
                                    "min_leaf": min_leaf, "m_features": m_features},
                       seed=seed)


# --------------------------------------------------------------------------
# scoring
# --------------------------------------------------------------------------

def _model_dim(model: MemberModel) -> int:
    if model.kind in ("logistic", "linear_svm"):
        return model.params["weights"].shape[0]
    return model.params["n_features"]


def predict_scores(model: MemberModel, x: np.ndarray) -> np.ndarray:
    """Scores in [0,1] for a batch of already-scaled feature rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != _model_dim(model):
        raise DimensionMismatch(
            f"expected (n, {_model_dim(model)}) features, got {x.shape}")
    if model.kind == "logistic":
        return _sigmoid(x @ model.params["weights"] + model.params["bias"])
    if model.kind == "linear_svm":
        margins = x @ model.params["weights"] + model.params["bias"]
        return _sigmoid(model.params["platt_a"] * margins + model.params["platt_b"])
    if model.kind == "random_forest":
        trees = model.params["trees"]
        total = np.zeros(x.shape[0])
        for tree in trees:
            total += _tree_scores(tree, x)
        return total / len(trees)
    raise ValueError(f"unknown model kind {model.kind!r}")


def predict_score(model: MemberModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("predict_score expects a single feature row")
    return float(predict_scores(model, x[None, :])[0])


_TRAINERS = {
    "logistic": lambda ts, hp, seed: train_logistic(
        ts, l2=hp.get("l2", 1e-2), lr=hp.get("lr", 0.5),
        epochs=hp.get("epochs", 500), seed=seed),
    "linear_svm": lambda ts, hp, seed: train_linear_svm(
        ts, l2=hp.get("l2", 1e-2), epochs=hp.get("epochs", 500), seed=seed),
    "random_forest": lambda ts, hp, seed: train_random_forest(
        ts, n_trees=hp.get("n_trees", 100), max_depth=hp.get("max_depth"),
        min_leaf=hp.get("min_leaf", 1), m_features=hp.get("m_features"), seed=seed),
}


def train_member(kind: str, train: TrainingSet, hyperparams: dict, seed: int) -> MemberModel:
    return _TRAINERS[kind](train, hyperparams, seed)


# --------------------------------------------------------------------------
# cross-validated selection
# --------------------------------------------------------------------------

def _capacity_key(candidate: dict):
    """Sort key where smaller means lower model capacity (preferred on ties)."""
    kind = candidate["kind"]
    if kind in ("logistic", "linear_svm"):
        return (-candidate.get("l2", 0.0),)
    depth = candidate.get("max_depth")
    return (math.inf if depth is None else depth,
            -candidate.get("min_leaf", 1),
            candidate.get("n_trees", 0))


def patient_folds(patient_ids, folds: int, seed: int) -> np.ndarray:
    """Fold index per row such that no patient straddles folds."""
    patients = sorted(set(patient_ids))
    if folds > len(patients):
        raise TooFewPatients(f"{folds} folds need {folds}+ patients, got {len(patients)}")
    order = np.array(patients, dtype=object)
    np.random.default_rng(seed).shuffle(order)
    fold_of = {p: i % folds for i, p in enumerate(order)}
    return np.array([fold_of[p] for p in patient_ids], dtype=np.int64)


def cross_validate(train: TrainingSet, plan: CvPlan):
    """Evaluate every candidate with patient-disjoint k-fold AUC.

    Returns (chosen candidate, results) where results lists each candidate's
    mean validation AUC. Ties go to the lower-capacity candidate, then to
    grid order.
    """
    from .stats import auc  # local import; stats has no learners dependency

    fold_idx = patient_folds(train.patient_ids, plan.folds, plan.seed)
    results = []
    for gi, candidate in enumerate(plan.grid):
        fold_aucs = []
        for f in range(plan.folds):
            hold = fold_idx == f
            tr_y, va_y = train.labels[~hold], train.labels[hold]
            if (not va_y.size or va_y.all() or not va_y.any()
                    or tr_y.all() or not tr_y.any()):
                continue
            sub = TrainingSet(features=train.features[~hold], labels=tr_y,
                              image_ids=tuple(np.array(train.image_ids, dtype=object)[~hold]),
                              patient_ids=tuple(np.array(train.patient_ids, dtype=object)[~hold]))
            model = train_member(candidate["kind"], sub,
                                 {k: v for k, v in candidate.items() if k != "kind"},
                                 seed=plan.seed)
            scores = predict_scores(model, train.features[hold])
            fold_aucs.append(auc(scores, va_y).auc)
        mean_auc = float(np.mean(fold_aucs)) if fold_aucs else math.nan
        results.append({"candidate": candidate, "mean_auc": mean_auc, "grid_index": gi})
    usable = [r for r in results if not math.isnan(r["mean_auc"])]
    if not usable:
        raise SingleClassTraining("no fold had both classes in train and validation")
    chosen = min(usable, key=lambda r: (-r["mean_auc"], _capacity_key(r["candidate"]),
                                        r["grid_index"]))
    return chosen["candidate"], results


# --------------------------------------------------------------------------
# member (de)serialization
# --------------------------------------------------------------------------

def member_to_dict(model: MemberModel) -> dict:
    params = {}
    if model.kind in ("logistic", "linear_svm"):
        params["weights"] = model.params["weights"].tolist()
        params["bias"] = float(model.params["bias"])
        if model.kind == "linear_svm":
            params["platt_a"] = float(model.params["platt_a"])
            params["platt_b"] = float(model.params["platt_b"])
    else:
        params["n_features"] = int(model.params["n_features"])
        params["trees"] = [{k: t[k].tolist() for k in
                            ("feature", "threshold", "left", "right", "value")}
                           for t in model.params["trees"]]
    hyper = {k: (None if v is None else v) for k, v in model.hyperparams.items()}
    return {"kind": model.kind, "params": params, "hyperparams": hyper,
            "seed": model.seed}


def member_from_dict(d: dict) -> MemberModel:
    kind = d["kind"]
    raw = d["params"]
    if kind in ("logistic", "linear_svm"):
        params = {"weights": np.array(raw["weights"], dtype=np.float64),
                  "bias": float(raw["bias"])}
        if kind == "linear_svm":
            params["platt_a"] = float(raw["platt_a"])
            params["platt_b"] = float(raw["platt_b"])
    else:
        params = {"n_features": int(raw["n_features"]),
                  "trees": [{"feature": np.array(t["feature"], dtype=np.int64),
                             "threshold": np.array(t["threshold"], dtype=np.float64),
                             "left": np.array(t["left"], dtype=np.int64),
                             "right": np.array(t["right"], dtype=np.int64),
                             "value": np.array(t["value"], dtype=np.float64)}
                            for t in raw["trees"]]}
    return MemberModel(kind=kind, params=params, hyperparams=dict(d["hyperparams"]),
                       seed=int(d["seed"]))


def scaler_to_dict(s: Scaler) -> dict:
    return {"mean": s.mean.tolist(), "std": s.std.tolist(),
            "constant": [bool(c) for c in s.constant]}


def scaler_from_dict(d: dict) -> Scaler:
    return Scaler(mean=np.array(d["mean"], dtype=np.float64),
                  std=np.array(d["std"], dtype=np.float64),
                  constant=np.array(d["constant"], dtype=bool))
