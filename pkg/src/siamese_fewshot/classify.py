"""Classifiers over neural codes: nearest-embedding ("histogram"), kNN, SVM and random forest."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .model.network import Parameters, embed

KINDS = ("histogram", "knn", "svm", "rf")
KERNELS = ("linear", "polynomial", "rbf")
KIND_ALIASES = {"nearest": "histogram", "random_forest": "rf", "kNN": "knn"}


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NeuralCodes:
    embeddings: np.ndarray
    labels: np.ndarray
    source_params_version: str = ""

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            emb = emb.reshape(len(emb), -1)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if len(self.embeddings) != len(self.labels):
            raise ClassifierError("embedding rows and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "NeuralCodes":
        return NeuralCodes(self.embeddings[idx], self.labels[idx], self.source_params_version)


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str = "histogram"
    k: int = 1
    svm_kernel: str = "rbf"
    svm_cost: float = 1.0
    rf_trees: int = 100
    seed: int = 0

    def __post_init__(self):
        kind = KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ClassifierError(f"classifier kind must be one of {KINDS}, got {self.kind!r}")
        if not 1 <= self.k <= 15:
            raise ClassifierError(f"k must lie in [1, 15], got {self.k}")
        if self.svm_kernel not in KERNELS:
            raise ClassifierError(f"svm_kernel must be one of {KERNELS}, got {self.svm_kernel!r}")
        if not 1 <= self.svm_cost <= 9:
            raise ClassifierError(f"svm_cost must lie in [1, 9], got {self.svm_cost}")
        if not 10 <= self.rf_trees <= 500:
            raise ClassifierError(f"rf_trees must lie in [10, 500], got {self.rf_trees}")

    def hyperparameters(self) -> dict:
        if self.kind == "knn":
            return {"k": self.k}
        if self.kind == "svm":
            return {"kernel": self.svm_kernel, "cost": self.svm_cost}
        if self.kind == "rf":
            return {"trees": self.rf_trees}
        return {}


def embed_dataset(params: Parameters, dataset: Dataset) -> NeuralCodes:
    emb = embed(params, dataset.images(params.dtype))
    return NeuralCodes(emb, dataset.labels, params.fingerprint())


# --------------------------------------------------------------------------
# distance rules


def _sq_distances(train: np.ndarray, queries: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - train[None, :, :]
    return np.einsum("qnd,qnd->qn", diff, diff)


def histogram_predict(nc: NeuralCodes, query) -> int:
    """Label of the nearest training row; ties go to the lowest row index."""
    return int(histogram_predict_many(nc, np.asarray(query)[None])[0])


def histogram_predict_many(nc: NeuralCodes, queries) -> np.ndarray:
    if len(nc) == 0:
        raise ClassifierError("cannot predict from empty neural codes")
    d = _sq_distances(nc.embeddings, np.asarray(queries, dtype=np.float64))
    return nc.labels[np.argmin(d, axis=1)]


def knn_predict(nc: NeuralCodes, query, k: int) -> int:
    return int(knn_predict_many(nc, np.asarray(query)[None], k)[0])


def knn_predict_many(nc: NeuralCodes, queries, k: int) -> np.ndarray:
    """Majority label of the k nearest rows.

    Neighbours are ordered by (distance, row index).  A vote tie goes to the
    tied class whose member is nearest.
    """
    if not 1 <= k <= len(nc):
        raise ClassifierError(f"k={k} outside [1, {len(nc)}]")
    d = _sq_distances(nc.embeddings, np.asarray(queries, dtype=np.float64))
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    out = np.empty(len(order), dtype=np.int64)
    for q, nbrs in enumerate(order):
        votes: dict[int, int] = {}
        first_seen: dict[int, int] = {}
        for rank, row in enumerate(nbrs):
            lab = int(nc.labels[row])
            votes[lab] = votes.get(lab, 0) + 1
            first_seen.setdefault(lab, rank)
        top = max(votes.values())
        out[q] = min((c for c, v in votes.items() if v == top), key=first_seen.__getitem__)
    return out


# --------------------------------------------------------------------------
# SVM (binary soft margin, SMO with second-order working-set selection)


def kernel_matrix(x: np.ndarray, z: np.ndarray, kind: str, gamma: float) -> np.ndarray:
    if kind == "linear":
        return x @ z.T
    if kind == "polynomial":
        return (x @ z.T + 1.0) ** 3
    if kind == "rbf":
        sq = np.sum(x * x, 1)[:, None] + np.sum(z * z, 1)[None, :] - 2 * x @ z.T
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ClassifierError(f"unknown kernel {kind!r}")


@dataclass(frozen=True, eq=False)
class SVMModel:
    support: np.ndarray
    coef: np.ndarray  # alpha_i * y_i for support rows
    rho: float
    kernel: str
    gamma: float
    classes: tuple[int, int]  # (label for y=-1, label for y=+1)
    alpha: np.ndarray
    y: np.ndarray
    iterations: int

    def decision(self, queries) -> np.ndarray:
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if len(self.support) == 0:
            return np.full(len(q), -self.rho)
        return kernel_matrix(q, self.support, self.kernel, self.gamma) @ self.coef - self.rho


def _smo(K: np.ndarray, y: np.ndarray, cost: float, tol: float, max_iter: int):
    n = len(y)
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    tau = 1e-12
    it = 0
    while it < max_iter:
        up = ((y > 0) & (alpha < cost)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < cost))
        score = -y * G
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        m_up = score[i]
        m_low = score[low].min()
        if m_up - m_low < tol:
            break
        cand = np.flatnonzero(low & (score < m_up))
        b = m_up - score[cand]
        a = QD[i] + QD[cand] - 2 * y[i] * y[cand] * Q[i, cand]
        a = np.where(a > 0, a, tau)
        j = int(cand[np.argmin(-(b * b) / a)])

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] + 2 * Q[i, j], tau)
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > cost:
                    alpha[i] = cost
                    alpha[j] = cost - diff
            elif alpha[j] > cost:
                alpha[j] = cost
                alpha[i] = cost + diff
        else:
            quad = max(QD[i] + QD[j] - 2 * Q[i, j], tau)
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > cost:
                if alpha[i] > cost:
                    alpha[i] = cost
                    alpha[j] = total - cost
            elif alpha[j] < 0:
                alpha[j] = 0
                alpha[i] = total
            if total > cost:
                if alpha[j] > cost:
                    alpha[j] = cost
                    alpha[i] = total - cost
            elif alpha[i] < 0:
                alpha[i] = 0
                alpha[j] = total
        G += Q[:, i] * (alpha[i] - ai_old) + Q[:, j] * (alpha[j] - aj_old)
        it += 1

    # bias: average over free alphas, else the middle of the feasible interval
    yG = y * G
    free = (alpha > 0) & (alpha < cost)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub, lb = np.inf, -np.inf
        for t in range(n):
            at_upper = alpha[t] >= cost
            at_lower = alpha[t] <= 0
            if (at_upper and y[t] < 0) or (at_lower and y[t] > 0):
                ub = min(ub, yG[t])
            elif (at_upper and y[t] > 0) or (at_lower and y[t] < 0):
                lb = max(lb, yG[t])
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else float(ub if np.isfinite(ub) else lb)
    return alpha, rho, it


def _canonical(nc: NeuralCodes) -> NeuralCodes:
    """Rows sorted by (embedding, label) so fits do not depend on input row order."""
    keys = (nc.labels,) + tuple(nc.embeddings.T[::-1])
    return nc.subset(np.lexsort(keys))


def svm_fit(nc: NeuralCodes, spec: ClassifierSpec, tol: float = 1e-3, max_iter: int = 100_000) -> SVMModel:
    nc = _canonical(nc)
    classes = np.unique(nc.labels)
    if len(classes) != 2:
        raise ClassifierError(f"SVM needs exactly 2 classes in the training set, found {classes.tolist()}")
    x = nc.embeddings
    y = np.where(nc.labels == classes[1], 1.0, -1.0)
    gamma = 1.0 / x.shape[1]
    K = kernel_matrix(x, x, spec.svm_kernel, gamma)
    alpha, rho, it = _smo(K, y, float(spec.svm_cost), tol, max_iter)
    sv = alpha > 0
    return SVMModel(
        support=x[sv], coef=(alpha * y)[sv], rho=rho, kernel=spec.svm_kernel, gamma=gamma,
        classes=(int(classes[0]), int(classes[1])), alpha=alpha, y=y, iterations=it,
    )


def svm_predict(model: SVMModel, query) -> int:
    return int(svm_predict_many(model, np.asarray(query)[None])[0])


def svm_predict_many(model: SVMModel, queries) -> np.ndarray:
    f = model.decision(queries)
    return np.where(f > 0, model.classes[1], model.classes[0])


# --------------------------------------------------------------------------
# random forest (bagged CART, Gini, sqrt(N) features per split)


@dataclass
class _Node:
    label: int
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None


def _gini_best_split(x: np.ndarray, y: np.ndarray, features, n_classes: int):
    """Best (gain, feature, threshold) over ``features``; None when no split separates anything."""
    n = len(y)
    parent = 1.0 - np.sum((np.bincount(y, minlength=n_classes) / n) ** 2)
    best = None
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        onehot = np.eye(n_classes)[y[order]]
        left_counts = np.cumsum(onehot, axis=0)[:-1]
        right_counts = left_counts[-1] + onehot[-1] - left_counts
        n_left = np.arange(1, n)
        n_right = n - n_left
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        gl = 1.0 - np.sum((left_counts / n_left[:, None]) ** 2, axis=1)
        gr = 1.0 - np.sum((right_counts / n_right[:, None]) ** 2, axis=1)
        impurity = (n_left * gl + n_right * gr) / n
        impurity = np.where(valid, impurity, np.inf)
        k = int(np.argmin(impurity))
        gain = parent - impurity[k]
        if best is None or gain > best[0] + 1e-15:
            best = (gain, int(f), float((xs[k] + xs[k + 1]) / 2))
    return best


def _grow(x, y, rng, n_classes, max_features):
    counts = np.bincount(y, minlength=n_classes)
    node = _Node(label=int(np.argmax(counts)))
    if counts.max() == len(y):
        return node
    feats = rng.permutation(x.shape[1])
    split = None
    # sample sqrt(N) features; fall through to further features only if none of them can split
    for start in range(0, len(feats), max_features):
        split = _gini_best_split(x, y, feats[start: start + max_features], n_classes)
        if split is not None:
            break
    if split is None:
        return node
    _, f, thr = split
    mask = x[:, f] <= thr
    node.feature, node.threshold = f, thr
    node.left = _grow(x[mask], y[mask], rng, n_classes, max_features)
    node.right = _grow(x[~mask], y[~mask], rng, n_classes, max_features)
    return node


def _tree_predict(node: _Node, q: np.ndarray) -> int:
    while node.left is not None:
        node = node.left if q[node.feature] <= node.threshold else node.right
    return node.label


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[_Node, ...]
    classes: tuple[int, ...]

    def vote_counts(self, query) -> dict[int, int]:
        q = np.asarray(query, dtype=np.float64)
        counts = {c: 0 for c in self.classes}
        for t in self.trees:
            counts[self.classes[_tree_predict(t, q)]] += 1
        return counts


def rf_fit(nc: NeuralCodes, spec: ClassifierSpec, seed: int | None = None) -> ForestModel:
    if len(nc) == 0:
        raise ClassifierError("cannot fit a forest on an empty training set")
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(int(seed))
    nc = _canonical(nc)
    classes = tuple(int(c) for c in np.unique(nc.labels))
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[int(c)] for c in nc.labels])
    x = nc.embeddings
    max_features = max(1, int(math.sqrt(x.shape[1])))
    trees = []
    for _ in range(spec.rf_trees):
        boot = rng.integers(0, len(y), size=len(y))
        trees.append(_grow(x[boot], y[boot], rng, len(classes), max_features))
    return ForestModel(tuple(trees), classes)


def rf_predict(model: ForestModel, query) -> int:
    counts = model.vote_counts(query)
    top = max(counts.values())
    return min(c for c, v in counts.items() if v == top)


def rf_predict_many(model: ForestModel, queries) -> np.ndarray:
    return np.array([rf_predict(model, q) for q in np.asarray(queries)], dtype=np.int64)


# --------------------------------------------------------------------------
# uniform entry points


@dataclass(frozen=True, eq=False)
class FittedClassifier:
    spec: ClassifierSpec
    nc: NeuralCodes
    model: object = None

    def predict(self, queries) -> np.ndarray:
        queries = np.asarray(queries, dtype=np.float64)
        if self.spec.kind == "histogram":
            return histogram_predict_many(self.nc, queries)
        if self.spec.kind == "knn":
            return knn_predict_many(self.nc, queries, self.spec.k)
        if self.spec.kind == "svm":
            return svm_predict_many(self.model, queries)
        return rf_predict_many(self.model, queries)


def fit_classifier(nc: NeuralCodes, spec: ClassifierSpec) -> FittedClassifier:
    if len(nc) == 0:
        raise ClassifierError("cannot fit a classifier on empty neural codes")
    if spec.kind == "knn" and spec.k > len(nc):
        spec = replace(spec, k=len(nc))
    model = None
    if spec.kind == "svm":
        model = svm_fit(nc, spec)
    elif spec.kind == "rf":
        model = rf_fit(nc, spec)
    return FittedClassifier(spec, nc, model)


@dataclass(frozen=True)
class SearchSpace:
    k_values: tuple[int, ...] = tuple(range(1, 16))
    kernels: tuple[str, ...] = KERNELS
    costs: tuple[float, ...] = tuple(float(c) for c in range(1, 10))
    trees: tuple[int, ...] = (10, 50, 100)

    def candidates(self, base: ClassifierSpec) -> list[ClassifierSpec]:
        if base.kind == "knn":
            return [replace(base, k=k) for k in self.k_values]
        if base.kind == "svm":
            return [replace(base, svm_kernel=kern, svm_cost=c) for kern in self.kernels for c in self.costs]
        if base.kind == "rf":
            return [replace(base, rf_trees=t) for t in self.trees]
        return [base]


def stratified_split(labels: np.ndarray, val_fraction: float, rng: np.random.Generator):
    """Indices (train, val); every class keeps at least one training member."""
    train, val = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_val = min(int(round(len(idx) * val_fraction)), len(idx) - 1)
        val.extend(idx[:n_val].tolist())
        train.extend(idx[n_val:].tolist())
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(val, dtype=np.int64))


def grid_search(nc: NeuralCodes, base: ClassifierSpec, space: SearchSpace | None = None,
                val_fraction: float = 0.2, seed: int = 0) -> ClassifierSpec:
    """Pick hyperparameters by macro-F1 on a stratified 80/20 split; ties keep the earlier candidate."""
    from .metrics import confusion, macro_f1

    space = space or SearchSpace()
    candidates = space.candidates(base)
    if len(candidates) == 1:
        return candidates[0]
    rng = np.random.default_rng(int(seed))
    tr, va = stratified_split(nc.labels, val_fraction, rng)
    if len(va) == 0:
        return candidates[0]
    train_nc, val_nc = nc.subset(tr), nc.subset(va)
    classes = sorted(set(nc.labels.tolist()))
    best, best_score = candidates[0], -1.0
    for cand in candidates:
        if cand.kind == "knn" and cand.k > len(train_nc):
            continue
        try:
            fitted = fit_classifier(train_nc, cand)
        except ClassifierError:
            continue
        score = macro_f1(confusion(fitted.predict(val_nc.embeddings), val_nc.labels, classes))
        if score > best_score:
            best, best_score = cand, score
    return best
