"""RBF support vector machines: SMO dual solver, one-vs-one voting, grid search.

Internally the dual uses non-negative multipliers ``alpha`` with
``sum(alpha * y) == 0`` and ``0 <= alpha <= C``.  Stored coefficients are
``alpha * y`` (the signed form), so the decision value is
``sum(coef * K(sv, x)) + b``.
"""

from __future__ import annotations

import io
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .dataset import stratified_partition
from .neighbors import sq_distances

FORMAT_VERSION = 1
DEFAULT_CACHE_BYTES = 256 * 1024 * 1024
LOGIT_CLIP = 30.0


class SvmError(ValueError):
    pass


class SvmConvergenceError(ArithmeticError):
    pass


def rbf_kernel(x, x2, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x.shape != x2.shape:
        raise SvmError("dimension mismatch")
    if gamma <= 0:
        raise SvmError("gamma must be positive")
    d = x - x2
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(A, B, gamma: float) -> np.ndarray:
    return np.exp(-gamma * sq_distances(A, B))


class KernelCache:
    """Kernel rows ``K(x_i, X)`` with least-recently-used eviction under a byte budget.

    When the whole Gram matrix fits the budget it is computed once up front.
    """

    def __init__(self, X, gamma, budget_bytes=DEFAULT_CACHE_BYTES):
        self.X = np.asarray(X, dtype=np.float64)
        self.gamma = gamma
        n = self.X.shape[0]
        self.capacity = max(2, budget_bytes // (8 * max(n, 1)))
        self.full = rbf_gram(self.X, self.X, gamma) if self.capacity >= n else None
        self.rows = OrderedDict()
        self.diag = np.ones(n)

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        r = self.rows.get(i)
        if r is not None:
            self.rows.move_to_end(i)
            return r
        r = rbf_gram(self.X[i : i + 1], self.X, self.gamma)[0]
        self.rows[i] = r
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return r


@dataclass
class BinarySvm:
    support_vectors: np.ndarray
    coef: np.ndarray  # alpha_i * y_i
    b: float
    gamma: float
    C: float
    support_indices: np.ndarray = None
    n_iter: int = 0
    objective: float = float("nan")
    objective_trace: list = field(default_factory=list)

    @property
    def n_support(self) -> int:
        return self.coef.shape[0]


def _violating_pair(alpha, y, G, C):
    """Maximal violating pair (i, j) and the gap ``m - M`` of ``-y * G``."""
    yg = -y * G
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
    if not up.any() or not low.any():
        return -1, -1, 0.0
    yg_up = np.where(up, yg, -np.inf)
    yg_low = np.where(low, yg, np.inf)
    i = int(np.argmax(yg_up))
    j = int(np.argmin(yg_low))
    return i, j, float(yg_up[i] - yg_low[j])


def smo_train(X, y, gamma: float, C: float, tol: float = 1e-3, max_iter: int | None = None,
              cache_bytes: int = DEFAULT_CACHE_BYTES, record_objective: bool = False) -> BinarySvm:
    """Solve the soft-margin RBF dual by two-coordinate (SMO) updates.

    Stops once the maximal KKT violation ``m - M`` is at most ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if gamma <= 0 or C <= 0 or tol <= 0:
        raise SvmError("gamma, C and tol must be positive")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SvmError("degenerate binary problem")
    if not np.all(np.abs(y) == 1):
        raise SvmError("labels must be +1 or -1")
    n = X.shape[0]
    max_iter = max_iter or max(100_000, 100 * n)
    cache = KernelCache(X, gamma, cache_bytes)
    alpha = np.zeros(n)
    G = -np.ones(n)
    trace = []
    it = 0
    gap = math.inf
    while True:
        i, j, gap = _violating_pair(alpha, y, G, C)
        if i < 0 or gap <= tol:
            break
        if it >= max_iter:
            raise SvmConvergenceError(f"SMO did not converge in {max_iter} iterations (max violation {gap:.3g} > tol {tol:g})")
        it += 1
        Ki = cache.row(i)
        Kj = cache.row(j)
        Qi_j = y[i] * y[j] * Ki[j]
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(Ki[i] + Kj[j] + 2.0 * Qi_j, 1e-12)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = max(Ki[i] + Kj[j] - 2.0 * Qi_j, 1e-12)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        dai, daj = ni - ai, nj - aj
        alpha[i], alpha[j] = ni, nj
        G += y * (y[i] * dai * Ki + y[j] * daj * Kj)
        if record_objective:
            trace.append(0.5 * float(alpha @ (G - 1.0)))
    free = (alpha > 0) & (alpha < C)
    yg = -y * G
    if free.any():
        b = float(np.mean(yg[free]))
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        hi = yg[up].max() if up.any() else yg[low].min()
        lo = yg[low].min() if low.any() else hi
        b = 0.5 * (hi + lo)
    sv = np.flatnonzero(alpha > 0)
    if sv.size == 0:
        raise SvmError("no support vectors")
    return BinarySvm(
        X[sv].copy(),
        (alpha[sv] * y[sv]).copy(),
        b,
        gamma,
        C,
        sv,
        it,
        0.5 * float(alpha @ (G - 1.0)),
        trace,
    )


def binary_decision(svm: BinarySvm, X) -> np.ndarray | float:
    single = np.ndim(X) == 1
    K = rbf_gram(np.atleast_2d(X), svm.support_vectors, svm.gamma)
    f = K @ svm.coef + svm.b
    return float(f[0]) if single else f


# ---------------------------------------------------------------------------
# one-vs-one


@dataclass
class OvoModel:
    class_count: int
    machines: dict  # (a, b) with a < b -> BinarySvm; +1 means class a
    gamma: float
    C: float
    meta: dict = field(default_factory=dict)

    @property
    def pairs(self):
        return sorted(self.machines)


def ovo_train(X, labels, gamma: float, C: float, class_count: int | None = None, tol: float = 1e-3,
              cache_bytes: int = DEFAULT_CACHE_BYTES) -> OvoModel:
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = class_count if class_count is not None else int(labels.max()) + 1
    if k < 2:
        raise SvmError("need at least two classes")
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts[:k] == 0)
    if empty.size:
        raise SvmError(f"class {int(empty[0])} has no training features")
    machines = {}
    for a in range(k):
        for b in range(a + 1, k):
            idx = np.flatnonzero((labels == a) | (labels == b))
            y = np.where(labels[idx] == a, 1.0, -1.0)
            machines[(a, b)] = smo_train(X[idx], y, gamma, C, tol, cache_bytes=cache_bytes)
    return OvoModel(k, machines, gamma, C)


def _logistic(f):
    return 1.0 / (1.0 + np.exp(-np.clip(f, -LOGIT_CLIP, LOGIT_CLIP)))


def ovo_decisions(model: OvoModel, X) -> dict:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return {pair: binary_decision(m, X) for pair, m in model.machines.items()}


def ovo_classify(model: OvoModel, X):
    """Vote winner, vote counts and soft scores for every row of ``X``.

    Vote ties go to the class with the larger summed |decision| over the
    machines it won, then to the lower index.  Soft scores are proportional to
    ``votes + mean logistic(decision)`` over each class's machines, so they
    order classes by votes first and the logistic term only splits ties.
    """
    single = np.ndim(X) == 1
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, k = X.shape[0], model.class_count
    votes = np.zeros((n, k))
    won_margin = np.zeros((n, k))
    logit_sum = np.zeros((n, k))
    for (a, b), f in ovo_decisions(model, X).items():
        pos = f > 0
        votes[pos, a] += 1
        votes[~pos, b] += 1
        won_margin[pos, a] += np.abs(f[pos])
        won_margin[~pos, b] += np.abs(f[~pos])
        p = _logistic(f)
        logit_sum[:, a] += p
        logit_sum[:, b] += 1.0 - p
    top = votes.max(axis=1, keepdims=True)
    tie_break = np.where(votes == top, won_margin, -np.inf)
    cls = np.argmax(tie_break, axis=1)
    soft = votes + logit_sum / (k - 1)
    soft = soft / soft.sum(axis=1, keepdims=True)
    if single:
        return int(cls[0]), votes[0], soft[0]
    return cls, votes, soft


# ---------------------------------------------------------------------------
# grid search


@dataclass
class GridSearchReport:
    gammas: list
    Cs: list
    accuracy: np.ndarray  # percent, NaN where skipped; rows gamma, columns C
    protocol: str = "holdout"

    @property
    def best(self):
        if np.all(np.isnan(self.accuracy)):
            return None
        r, c = np.unravel_index(np.nanargmax(self.accuracy), self.accuracy.shape)
        return self.gammas[r], self.Cs[c], float(self.accuracy[r, c])


def accuracy(pred, truth) -> float:
    """Percentage of correctly predicted labels."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.size == 0 or pred.shape != truth.shape:
        raise ValueError("need equal, non-empty prediction and truth arrays")
    return 100.0 * float(np.count_nonzero(pred == truth)) / pred.size


def grid_search(X, labels, gammas, Cs, seed: int = 0, holdout: float = 0.3, folds: int | None = None,
                skip=(), class_count: int | None = None, tol: float = 1e-3) -> GridSearchReport:
    """Held-out accuracy of a one-vs-one SVM for every (gamma, C) cell.

    ``skip`` lists (gamma, C) cells to leave unevaluated.  With ``folds`` the
    accuracy is the pooled k-fold accuracy instead of a stratified holdout.
    """
    if not len(gammas) or not len(Cs):
        raise SvmError("grids must be non-empty")
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = class_count if class_count is not None else int(labels.max()) + 1
    if folds:
        parts = stratified_partition(labels, [1] * folds, seed)
        splits = [(np.setdiff1d(np.arange(len(labels)), p), p) for p in parts]
    else:
        tr, te = stratified_partition(labels, (1.0 - holdout, holdout), seed)
        splits = [(tr, te)]
    skip = {(float(g), float(c)) for g, c in skip}
    acc = np.full((len(gammas), len(Cs)), np.nan)
    for r, g in enumerate(gammas):
        for c, C in enumerate(Cs):
            if (float(g), float(C)) in skip:
                continue
            correct = total = 0
            for tr, te in splits:
                model = ovo_train(X[tr], labels[tr], g, C, k, tol)
                pred, _, _ = ovo_classify(model, X[te])
                correct += int(np.count_nonzero(pred == labels[te]))
                total += te.size
            acc[r, c] = 100.0 * correct / total
    return GridSearchReport(list(gammas), list(Cs), acc, f"{folds}-fold" if folds else "holdout")


def _pow2_label(v: float) -> str:
    e = math.log2(v) if v > 0 else float("nan")
    if math.isfinite(e) and abs(e - round(e)) < 1e-12:
        return f"2^{int(round(e))}"
    return repr(float(v))


def _parse_grid_label(s: str) -> float:
    s = s.strip()
    if s.startswith("2^"):
        return 2.0 ** int(s[2:])
    return float(s)


def format_grid_csv(report: GridSearchReport) -> str:
    out = io.StringIO()
    out.write("gamma\\C," + ",".join(_pow2_label(c) for c in report.Cs) + "\n")
    for g, row in zip(report.gammas, report.accuracy):
        cells = ["*" if np.isnan(a) else f"{a:.2f}" for a in row]
        out.write(_pow2_label(g) + "," + ",".join(cells) + "\n")
    return out.getvalue()


def parse_grid_csv(text: str) -> GridSearchReport:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split(",")
    Cs = [_parse_grid_label(s) for s in head[1:]]
    gammas, rows = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        gammas.append(_parse_grid_label(parts[0]))
        rows.append([np.nan if p.strip() == "*" else float(p) for p in parts[1:]])
    return GridSearchReport(gammas, Cs, np.array(rows, dtype=np.float64))


# ---------------------------------------------------------------------------
# persistence


def to_dict(model: OvoModel) -> dict:
    """Model document; support vectors live once in a shared block referenced by index."""
    block, index = [], {}
    machines = []
    for (a, b) in model.pairs:
        m = model.machines[(a, b)]
        refs = []
        for v in m.support_vectors:
            key = v.tobytes()
            if key not in index:
                index[key] = len(block)
                block.append(v.tolist())
            refs.append(index[key])
        machines.append({"classes": [a, b], "support": refs, "coef": m.coef.tolist(), "b": m.b})
    return {
        "format": "terrainseg-svm",
        "version": FORMAT_VERSION,
        "convention": "coef_i = alpha_i * y_i (signed alpha); y = +1 for the first class of the pair; "
        "f(x) = sum_i coef_i * exp(-gamma * |x_i - x|^2) + b; 0 <= y_i * coef_i <= C",
        "gamma": model.gamma,
        "C": model.C,
        "class_count": model.class_count,
        "meta": model.meta,
        "vectors": block,
        "machines": machines,
    }


def from_dict(d: dict) -> OvoModel:
    if d.get("format") != "terrainseg-svm":
        raise ValueError("not an SVM model file")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported SVM model version {d.get('version')}")
    vectors = np.array(d["vectors"], dtype=np.float64)
    machines = {}
    for m in d["machines"]:
        a, b = m["classes"]
        refs = np.array(m["support"], dtype=np.int64)
        machines[(a, b)] = BinarySvm(vectors[refs], np.array(m["coef"], dtype=np.float64), float(m["b"]), d["gamma"], d["C"])
    return OvoModel(int(d["class_count"]), machines, float(d["gamma"]), float(d["C"]), d.get("meta", {}))


def save(model: OvoModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(model), fh)
        fh.write("\n")


def load(path) -> OvoModel:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))
