"""From-scratch mode classifiers: linear SVM, random forest, multinomial
logistic regression, plus episode-grouped stratified cross-validation.

Each prediction consumes exactly one tick's feature vector — there is no
windowing or temporal pooling anywhere.  All trainers are deterministic
functions of (data, hyperparameters, seed); random forests derive one rng
stream per tree index so results do not depend on build order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .domain import ModeLabel, derive_rng
from .perception import N_FEATURES, Normalizer

N_CLASSES = len(ModeLabel)


class ClassifierError(ValueError):
    pass


@dataclass
class LabeledDataset:
    """Parallel per-tick arrays: features, labels, and row metadata."""

    features: np.ndarray  # (n, d) float, normalized
    labels: np.ndarray  # (n,) int mode codes
    groups: np.ndarray  # (n,) episode ids
    driver_ids: np.ndarray  # (n,) driver names
    vehicles_in_range: np.ndarray  # (n,) int counts from truth
    masks: np.ndarray  # (n, 3) slot presence
    times: np.ndarray  # (n,) record times [s]

    def __post_init__(self) -> None:
        n = len(self.features)
        for name in ("labels", "groups", "driver_ids", "vehicles_in_range", "masks", "times"):
            if len(getattr(self, name)) != n:
                raise ClassifierError(f"dataset column {name} has mismatched length")

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            self.features[idx],
            self.labels[idx],
            self.groups[idx],
            self.driver_ids[idx],
            self.vehicles_in_range[idx],
            self.masks[idx],
            self.times[idx],
        )


@dataclass
class Model:
    """A trained classifier: kind tag, payload, and its feature normalizer."""

    kind: str  # "svm" | "rf" | "lr"
    payload: dict
    normalizer: Optional[Normalizer] = None
    meta: dict = field(default_factory=dict)


def _check_trainable(labels: np.ndarray) -> list[int]:
    classes = sorted(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise ClassifierError("training data contains a single class")
    return classes


# ---------------------------------------------------------------------------
# Linear SVM (one-vs-rest, hinge loss, subgradient descent)
# ---------------------------------------------------------------------------


def train_svm(
    data: LabeledDataset,
    lam: float = 1e-4,
    epochs: int = 8,
    seed: int = 0,
    batch_size: int = 1024,
) -> Model:
    """One-vs-rest L2-regularized hinge loss via subgradient descent.

    Step t uses learning rate 1/(lam*t) over deterministically shuffled
    mini-batches; the weight shrink factor per step is therefore (1 - 1/t),
    which keeps the early large steps self-averaging.  Biases are not
    regularized.
    """
    classes = _check_trainable(data.labels)
    X = np.asarray(data.features, dtype=float)
    y = np.asarray(data.labels, dtype=int)
    n, d = X.shape
    c = len(classes)
    # +1/-1 target per one-vs-rest head
    Y = np.where(y[None, :] == np.asarray(classes)[:, None], 1.0, -1.0)  # (c, n)

    W = np.zeros((c, d))
    b = np.zeros(c)
    rng = derive_rng(seed, "svm")
    bs = min(batch_size, n)
    t = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            Xb = X[idx]  # (m, d)
            Yb = Y[:, idx]  # (c, m)
            t += 1
            eta = 1.0 / (lam * t)
            margins = Yb * (W @ Xb.T + b[:, None])  # (c, m)
            viol = (margins < 1.0).astype(float)
            coeff = Yb * viol / len(idx)  # (c, m)
            W = (1.0 - 1.0 / t) * W + eta * (coeff @ Xb)
            b = b + eta * coeff.sum(axis=1)

    return Model(
        kind="svm",
        payload={
            "classes": classes,
            "weights": W.tolist(),
            "biases": b.tolist(),
        },
        meta={"lambda": lam, "epochs": epochs, "seed": seed, "batch_size": bs},
    )


# ---------------------------------------------------------------------------
# Random forest (CART, Gini impurity, bootstrap + per-node feature draw)
# ---------------------------------------------------------------------------


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Per-tree stream keyed by index: build order cannot matter."""
    return derive_rng(seed, "rf-tree", tree_index)


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    node_idx: np.ndarray,
    candidates: np.ndarray,
    min_leaf: int,
) -> Optional[tuple[int, float, np.ndarray, np.ndarray]]:
    """Exhaustive midpoint search over the candidate features.

    Returns (feature, threshold, left_idx, right_idx) minimizing weighted
    Gini impurity, or None when no legal split exists.  The first candidate
    feature (in draw order) and the lowest threshold win ties.
    """
    n = len(node_idx)
    labels = y[node_idx]
    best = None
    best_gini = math.inf
    for f in candidates:
        vals = X[node_idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = labels[order]
        onehot = np.zeros((n, N_CLASSES))
        onehot[np.arange(n), sy] = 1.0
        left_counts = np.cumsum(onehot, axis=0)  # counts through position i
        total = left_counts[-1]
        # split after position i → left size i+1
        sizes_l = np.arange(1, n + 1, dtype=float)
        sizes_r = n - sizes_l
        valid = (
            (sizes_l >= min_leaf)
            & (sizes_r >= min_leaf)
            & np.append(sv[1:] > sv[:-1], False)
        )
        if not valid.any():
            continue
        right_counts = total[None, :] - left_counts
        with np.errstate(divide="ignore", invalid="ignore"):
            gini_l = 1.0 - ((left_counts / sizes_l[:, None]) ** 2).sum(axis=1)
            gini_r = np.where(
                sizes_r > 0,
                1.0 - ((right_counts / np.maximum(sizes_r, 1.0)[:, None]) ** 2).sum(axis=1),
                0.0,
            )
        weighted = (sizes_l * gini_l + sizes_r * gini_r) / n
        weighted[~valid] = math.inf
        pos = int(np.argmin(weighted))
        if weighted[pos] < best_gini - 1e-15:
            best_gini = float(weighted[pos])
            thr = 0.5 * (sv[pos] + sv[pos + 1])
            mask = X[node_idx, f] <= thr
            best = (int(f), float(thr), node_idx[mask], node_idx[~mask])
    return best


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    boot_idx: np.ndarray,
    max_depth: int,
    min_leaf: int,
    m_try: int,
    rng: np.random.Generator,
) -> dict:
    """Grow one CART tree; nodes stored as parallel arrays.

    feature[i] == -1 marks a leaf; counts[i] holds the class counts of the
    node's bootstrap rows.  Children are built left-first, depth-first, so
    the per-node rng draws are reproducible.
    """
    d = X.shape[1]
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[list[float]] = []

    def node_counts(idx: np.ndarray) -> list[float]:
        return np.bincount(y[idx], minlength=N_CLASSES).astype(float).tolist()

    def build(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(node_counts(idx))
        labels = y[idx]
        if (
            depth >= max_depth
            or len(idx) < 2 * min_leaf
            or (labels == labels[0]).all()
        ):
            return node
        cand = rng.choice(d, size=min(m_try, d), replace=False)
        split = _best_split(X, y, idx, cand, min_leaf)
        if split is None:
            return node
        f, thr, idx_l, idx_r = split
        feature[node] = f
        threshold[node] = thr
        left[node] = build(idx_l, depth + 1)
        right[node] = build(idx_r, depth + 1)
        return node

    build(boot_idx, 0)
    return {
        "feature": feature,
        "threshold": threshold,
        "left": left,
        "right": right,
        "counts": counts,
    }


def train_rf(
    data: LabeledDataset,
    n_trees: int = 50,
    max_depth: int = 12,
    min_leaf: int = 5,
    seed: int = 0,
) -> Model:
    """Random forest of CART trees on bootstrap samples.

    Splits minimize Gini impurity over ceil(sqrt(d)) randomly drawn candidate
    features per node; leaves keep their class counts so probability output
    is the across-tree mean of leaf class fractions.
    """
    _check_trainable(data.labels)
    X = np.asarray(data.features, dtype=float)
    y = np.asarray(data.labels, dtype=int)
    n, d = X.shape
    m_try = math.ceil(math.sqrt(d))
    trees = []
    for i in range(n_trees):
        rng = _tree_rng(seed, i)
        boot = rng.integers(0, n, n)
        trees.append(_grow_tree(X, y, boot, max_depth, min_leaf, m_try, rng))
    return Model(
        kind="rf",
        payload={"trees": trees, "n_features": d},
        meta={
            "n_trees": n_trees,
            "max_depth": max_depth,
            "min_leaf": min_leaf,
            "seed": seed,
        },
    )


def _tree_apply(tree: dict, X: np.ndarray) -> np.ndarray:
    """Vectorized leaf lookup: returns the leaf node index per row."""
    feature = np.asarray(tree["feature"], dtype=int)
    threshold = np.asarray(tree["threshold"], dtype=float)
    left = np.asarray(tree["left"], dtype=int)
    right = np.asarray(tree["right"], dtype=int)
    cur = np.zeros(len(X), dtype=int)
    while True:
        active = feature[cur] >= 0
        if not active.any():
            return cur
        rows = np.nonzero(active)[0]
        nodes = cur[rows]
        go_left = X[rows, feature[nodes]] <= threshold[nodes]
        cur[rows] = np.where(go_left, left[nodes], right[nodes])


def _rf_tree_votes(model: Model, X: np.ndarray) -> np.ndarray:
    """(n_trees, n_rows) per-tree predicted class (leaf argmax, ties low)."""
    votes = np.empty((len(model.payload["trees"]), len(X)), dtype=int)
    for i, tree in enumerate(model.payload["trees"]):
        leaves = _tree_apply(tree, X)
        cnt = np.asarray(tree["counts"], dtype=float)
        votes[i] = np.argmax(cnt[leaves], axis=1)
    return votes


# ---------------------------------------------------------------------------
# Multinomial logistic regression (softmax, full-batch gradient descent)
# ---------------------------------------------------------------------------


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def lr_loss_and_grad(
    W: np.ndarray,
    b: np.ndarray,
    X: np.ndarray,
    Y_onehot: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Penalized mean negative log-likelihood and its exact gradient.

    The L2 penalty covers weights only, never biases.  Exposed at module
    level so the gradient can be validated against finite differences.
    """
    n = len(X)
    P = _softmax(X @ W.T + b[None, :])
    eps = 1e-300
    loss = -float(np.sum(Y_onehot * np.log(P + eps))) / n
    loss += 0.5 * l2 * float(np.sum(W * W))
    R = (P - Y_onehot) / n  # (n, c)
    grad_W = R.T @ X + l2 * W
    grad_b = R.sum(axis=0)
    return loss, grad_W, grad_b


def train_lr(
    data: LabeledDataset,
    l2: float = 1e-2,
    max_iter: int = 300,
    tol: float = 1e-7,
    step0: float = 2.0,
) -> Model:
    """Multinomial softmax regression by full-batch gradient descent.

    The step is fixed until a proposed update raises the loss, in which case
    the update is rejected and the step halves; accepted iterations thus
    have non-increasing loss.  Stops on max_iter or when the accepted loss
    improvement falls below tol, setting a convergence flag either way.
    """
    classes = _check_trainable(data.labels)
    X = np.asarray(data.features, dtype=float)
    y = np.asarray(data.labels, dtype=int)
    n, d = X.shape
    c = len(classes)
    class_pos = {cl: i for i, cl in enumerate(classes)}
    Y = np.zeros((n, c))
    Y[np.arange(n), [class_pos[int(v)] for v in y]] = 1.0

    W = np.zeros((c, d))
    b = np.zeros(c)
    step = step0
    loss, gW, gb = lr_loss_and_grad(W, b, X, Y, l2)
    converged = False
    iters = 0
    for iters in range(1, max_iter + 1):
        W_new = W - step * gW
        b_new = b - step * gb
        new_loss, gW_new, gb_new = lr_loss_and_grad(W_new, b_new, X, Y, l2)
        if new_loss > loss:
            step *= 0.5
            if step < 1e-12:
                break
            continue
        delta = loss - new_loss
        W, b, loss, gW, gb = W_new, b_new, new_loss, gW_new, gb_new
        if delta < tol:
            converged = True
            break

    return Model(
        kind="lr",
        payload={
            "classes": classes,
            "weights": W.tolist(),
            "biases": b.tolist(),
        },
        meta={
            "l2": l2,
            "max_iter": max_iter,
            "tol": tol,
            "iterations": iters,
            "converged": converged,
            "final_loss": loss,
        },
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _as_matrix(model: Model, x) -> tuple[np.ndarray, bool]:
    from .perception import FeatureVector  # noqa: avoid import at module top

    if isinstance(x, FeatureVector):
        x = x.values
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2:
        raise ClassifierError("input must be a vector or a matrix of rows")
    expected = (
        len(model.payload["weights"][0])
        if model.kind in ("svm", "lr")
        else model.payload["n_features"]
    )
    if X.shape[1] != expected:
        raise ClassifierError(
            f"dimension mismatch: model expects {expected} features, got {X.shape[1]}"
        )
    return X, single


def predict(model: Model, x):
    """Predicted mode(s); ties always resolve to the lower mode code."""
    X, single = _as_matrix(model, x)
    if model.kind in ("svm", "lr"):
        W = np.asarray(model.payload["weights"], dtype=float)
        b = np.asarray(model.payload["biases"], dtype=float)
        scores = X @ W.T + b[None, :]
        classes = np.asarray(model.payload["classes"], dtype=int)
        picked = classes[np.argmax(scores, axis=1)]
    elif model.kind == "rf":
        votes = _rf_tree_votes(model, X)
        tallies = np.apply_along_axis(
            np.bincount, 0, votes, minlength=N_CLASSES
        )  # (N_CLASSES, n)
        picked = np.argmax(tallies, axis=0)
    else:
        raise ClassifierError(f"unknown model kind: {model.kind!r}")
    if single:
        return ModeLabel(int(picked[0]))
    return picked.astype(int)


def predict_proba(model: Model, x) -> np.ndarray:
    """Class-probability simplex over the three modes.

    SVM carries no probability semantics and raises.  RF returns the mean of
    leaf class fractions across trees; LR returns the softmax.
    """
    if model.kind == "svm":
        raise ClassifierError("SVM models do not produce probabilities")
    X, single = _as_matrix(model, x)
    if model.kind == "lr":
        W = np.asarray(model.payload["weights"], dtype=float)
        b = np.asarray(model.payload["biases"], dtype=float)
        P_local = _softmax(X @ W.T + b[None, :])
        P = np.zeros((len(X), N_CLASSES))
        for j, cl in enumerate(model.payload["classes"]):
            P[:, cl] = P_local[:, j]
    elif model.kind == "rf":
        P = np.zeros((len(X), N_CLASSES))
        trees = model.payload["trees"]
        for tree in trees:
            leaves = _tree_apply(tree, X)
            cnt = np.asarray(tree["counts"], dtype=float)
            leaf_cnt = cnt[leaves]
            P += leaf_cnt / leaf_cnt.sum(axis=1, keepdims=True)
        P /= len(trees)
    else:
        raise ClassifierError(f"unknown model kind: {model.kind!r}")
    return P[0] if single else P


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "svm": {"lam": [1e-4, 1e-3, 1e-2, 1e-1]},
    "rf": {"n_trees": [50, 100], "max_depth": [8, 12], "min_leaf": [5]},
    "lr": {"l2": [1e-4, 1e-2, 1.0]},
}

TRAINERS = {
    "svm": lambda data, p, seed: train_svm(data, seed=seed, **p),
    "rf": lambda data, p, seed: train_rf(data, seed=seed, **p),
    "lr": lambda data, p, seed: train_lr(data, **p),
}


def _regularization_rank(algo: str, params: dict) -> tuple:
    """Sort key ranking hyperparameters strongest-regularization-first."""
    if algo == "svm":
        return (-params["lam"],)
    if algo == "lr":
        return (-params["l2"],)
    if algo == "rf":
        return (params["max_depth"], params["n_trees"], -params["min_leaf"])
    raise ClassifierError(f"unknown algorithm: {algo!r}")


@dataclass
class CVResult:
    best_params: dict
    fold_scores: list[float]
    table: list[tuple[dict, float]]  # (params, mean score) per grid point


def assign_folds(data: LabeledDataset, k: int, seed: int) -> dict[str, int]:
    """Deterministic stratified grouped fold assignment.

    Episodes (never rows) are dealt into folds: they are bucketed by which
    mode labels they contain, shuffled within buckets, and dealt round-robin
    so each fold sees a similar mix of event-bearing and quiet episodes.
    """
    episodes = sorted(set(str(g) for g in data.groups))
    ep_labels: dict[str, set] = {e: set() for e in episodes}
    for g, lab in zip(data.groups, data.labels):
        ep_labels[str(g)].add(int(lab))
    buckets: dict[tuple, list[str]] = {}
    for e in episodes:
        key = tuple(sorted(ep_labels[e]))
        buckets.setdefault(key, []).append(e)
    rng = derive_rng(seed, "cv-folds")
    fold_of: dict[str, int] = {}
    cursor = 0
    for key in sorted(buckets):
        members = buckets[key]
        order = rng.permutation(len(members))
        for j in order:
            fold_of[members[int(j)]] = cursor % k
            cursor += 1
    return fold_of


def cross_validate(
    data: LabeledDataset,
    algo: str,
    grid: Optional[dict[str, list]] = None,
    k: int = 5,
    seed: int = 0,
) -> CVResult:
    """Grid search by k-fold grouped stratified CV on mean fold accuracy.

    Ties go to the strongest regularization, then to grid order.
    """
    if algo not in TRAINERS:
        raise ClassifierError(f"unknown algorithm: {algo!r}")
    if k < 2:
        raise ClassifierError("k must be at least 2")
    grid = grid if grid is not None else DEFAULT_GRIDS[algo]
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ClassifierError("hyperparameter grid is empty")

    keys = list(grid.keys())
    combos = [dict(zip(keys, values)) for values in product(*(grid[k_] for k_ in keys))]

    fold_of = assign_folds(data, k, seed)
    row_fold = np.asarray([fold_of[str(g)] for g in data.groups])

    results: list[tuple[dict, float, list[float]]] = []
    for combo in combos:
        scores = []
        for fold in range(k):
            test_mask = row_fold == fold
            if not test_mask.any() or test_mask.all():
                continue
            train_split = data.subset(np.nonzero(~test_mask)[0])
            test_split = data.subset(np.nonzero(test_mask)[0])
            model = TRAINERS[algo](train_split, combo, seed)
            preds = predict(model, test_split.features)
            scores.append(float(np.mean(preds == test_split.labels)))
        results.append((combo, float(np.mean(scores)), scores))

    order = sorted(
        range(len(results)),
        key=lambda i: (
            -results[i][1],
            _regularization_rank(algo, results[i][0]),
            i,
        ),
    )
    best_idx = order[0]
    best, _, best_scores = results[best_idx]
    return CVResult(
        best_params=best,
        fold_scores=best_scores,
        table=[(c, m) for c, m, _ in results],
    )
