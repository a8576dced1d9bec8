"""Multi-layer perceptron with tanh-shaped hidden units and linear outputs.

Trained with full-batch RPROP or Levenberg-Marquardt on the summed squared
error ``sum((y - t)**2)`` with targets coded as +1 for the true class and -1
elsewhere.  Weight matrix ``W[l]`` has shape ``(fan_out, fan_in + 1)``; column
0 multiplies the constant bias input.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import stratified_partition

FORMAT_VERSION = 1

RPROP_ETA_PLUS = 1.2
RPROP_ETA_MINUS = 0.5
RPROP_DELTA0 = 0.1
RPROP_DELTA_MIN = 1e-6
RPROP_DELTA_MAX = 50.0

LMA_NU0 = 1e-2
LMA_FACTOR = 10.0
LMA_NU_MAX = 1e10


class LmaDampingExhausted(ArithmeticError):
    pass


def sigmoid(x):
    """Hyperbolic sigmoid ``2 / (1 + exp(-2x)) - 1`` (equal to tanh)."""
    with np.errstate(over="ignore"):
        return 2.0 / (1.0 + np.exp(-2.0 * np.asarray(x, dtype=np.float64))) - 1.0


def param_count(structure) -> int:
    return sum(a * b + b for a, b in zip(structure[:-1], structure[1:]))


@dataclass
class MlpModel:
    structure: list
    weights: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.structure = [int(s) for s in self.structure]
        if len(self.weights) != len(self.structure) - 1:
            raise ValueError("one weight matrix per layer transition required")
        for W, (a, b) in zip(self.weights, zip(self.structure[:-1], self.structure[1:])):
            if W.shape != (b, a + 1):
                raise ValueError(f"weight matrix shape {W.shape} does not match ({b}, {a + 1})")

    @property
    def n_params(self) -> int:
        return param_count(self.structure)

    def flat(self) -> np.ndarray:
        return np.concatenate([W.ravel() for W in self.weights])

    def with_flat(self, w) -> "MlpModel":
        out, pos = [], 0
        for W in self.weights:
            out.append(np.asarray(w[pos : pos + W.size], dtype=np.float64).reshape(W.shape).copy())
            pos += W.size
        return MlpModel(self.structure, out, dict(self.meta))

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.structure), [W.copy() for W in self.weights], copy.deepcopy(self.meta))


def init_model(structure, seed=0) -> MlpModel:
    """Uniform weights in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` from a seeded generator."""
    if len(structure) < 2 or min(structure) < 1:
        raise ValueError(f"invalid structure {structure}")
    rng = np.random.default_rng(seed)
    weights = []
    for a, b in zip(structure[:-1], structure[1:]):
        lim = 1.0 / math.sqrt(a)
        weights.append(rng.uniform(-lim, lim, size=(b, a + 1)))
    return MlpModel(list(structure), weights)


def _with_bias(a):
    return np.concatenate([np.ones((a.shape[0], 1)), a], axis=1)


def _check_input(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.structure[0]:
        raise ValueError(f"input dimension {X.shape[1]} does not match network input {model.structure[0]}")
    return X


def _trace(model, X):
    """Bias-augmented layer inputs and the final linear output."""
    acts = [_with_bias(X)]
    h = X
    for W in model.weights[:-1]:
        h = sigmoid(acts[-1] @ W.T)
        acts.append(_with_bias(h))
    return acts, acts[-1] @ model.weights[-1].T


def forward(model: MlpModel, X) -> np.ndarray:
    """Network outputs; a single vector in gives a single vector out."""
    single = np.ndim(X) == 1
    _, y = _trace(model, _check_input(model, X))
    return y[0] if single else y


def hidden_activations(model: MlpModel, X, layer: int = 1) -> np.ndarray:
    acts, _ = _trace(model, _check_input(model, X))
    return acts[layer][:, 1:]


def encode_targets(labels, m: int) -> np.ndarray:
    T = -np.ones((len(labels), m))
    T[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return T


def sse(model: MlpModel, X, T) -> float:
    _, y = _trace(model, _check_input(model, X))
    return float(np.sum((y - T) ** 2))


def gradient(model: MlpModel, X, T) -> np.ndarray:
    """Flat gradient of the summed squared error by back-propagation."""
    acts, y = _trace(model, _check_input(model, X))
    delta = 2.0 * (y - np.asarray(T, dtype=np.float64))
    grads = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        grads[l] = delta.T @ acts[l]
        if l:
            h = acts[l][:, 1:]
            delta = (delta @ model.weights[l][:, 1:]) * (1.0 - h * h)
    return np.concatenate([g.ravel() for g in grads])


def jacobian(model: MlpModel, X) -> np.ndarray:
    """Jacobian of the outputs w.r.t. the flat weights; rows ordered (sample, output)."""
    X = _check_input(model, X)
    acts, _ = _trace(model, X)
    n, m = X.shape[0], model.structure[-1]
    sizes = [W.size for W in model.weights]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    J = np.zeros((n, m, offs[-1]))
    for out in range(m):
        # delta: derivative of output `out` w.r.t. pre-activations of layer l
        delta = np.zeros((n, m))
        delta[:, out] = 1.0
        for l in range(len(model.weights) - 1, -1, -1):
            W = model.weights[l]
            block = delta[:, :, None] * acts[l][:, None, :]
            J[:, out, offs[l] : offs[l + 1]] = block.reshape(n, -1)
            if l:
                h = acts[l][:, 1:]
                delta = (delta @ W[:, 1:]) * (1.0 - h * h)
    return J.reshape(n * m, -1)


def normal_equations(model: MlpModel, X, T, chunk: int = 256):
    """``(J^T J, J^T e, sum(e**2))`` accumulated over sample chunks in fixed order."""
    X = _check_input(model, X)
    T = np.asarray(T, dtype=np.float64)
    P = model.n_params
    JtJ = np.zeros((P, P))
    Jte = np.zeros(P)
    err = 0.0
    for s in range(0, X.shape[0], chunk):
        xb, tb = X[s : s + chunk], T[s : s + chunk]
        J = jacobian(model, xb)
        e = (forward(model, xb) - tb).ravel()
        JtJ += J.T @ J
        Jte += J.T @ e
        err += float(e @ e)
    return JtJ, Jte, err


# ---------------------------------------------------------------------------
# RPROP


@dataclass
class RpropState:
    delta: np.ndarray
    prev_grad: np.ndarray
    eta_plus: float = RPROP_ETA_PLUS
    eta_minus: float = RPROP_ETA_MINUS
    delta_min: float = RPROP_DELTA_MIN
    delta_max: float = RPROP_DELTA_MAX

    @classmethod
    def for_size(cls, n: int, delta0: float = RPROP_DELTA0, **kw) -> "RpropState":
        return cls(np.full(n, float(delta0)), np.zeros(n), **kw)


def rprop_update(w, grad, state: RpropState):
    """One RPROP move for flat weights ``w`` given the current batch gradient.

    On a sign change the step shrinks and that weight's gradient memory is
    cleared, so it does not move this round; on equal signs the step grows.
    Returns ``(new_w, new_state)``.
    """
    grad = np.asarray(grad, dtype=np.float64).copy()
    prod = grad * state.prev_grad
    delta = state.delta.copy()
    grow = prod > 0
    shrink = prod < 0
    delta[grow] = np.minimum(delta[grow] * state.eta_plus, state.delta_max)
    delta[shrink] = np.maximum(delta[shrink] * state.eta_minus, state.delta_min)
    grad[shrink] = 0.0
    new_w = w - np.sign(grad) * delta
    new_state = RpropState(delta, grad, state.eta_plus, state.eta_minus, state.delta_min, state.delta_max)
    return new_w, new_state


def rprop_epoch(model: MlpModel, state: RpropState, X, T):
    g = gradient(model, X, T)
    w, state = rprop_update(model.flat(), g, state)
    return model.with_flat(w), state


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


@dataclass
class LmaState:
    nu: float = LMA_NU0
    factor: float = LMA_FACTOR
    nu_max: float = LMA_NU_MAX

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("damping must be positive")


def damped_step(JtJ, Jte, nu: float) -> np.ndarray:
    """Solve ``(J^T J + nu I) p = -J^T e``."""
    A = JtJ + nu * np.eye(JtJ.shape[0])
    return np.linalg.solve(A, -np.asarray(Jte))


def levenberg_marquardt_step(w, state: LmaState, normal_fn, error_fn):
    """Generic damped Gauss-Newton step with retries.

    ``normal_fn(w)`` returns ``(J^T J, J^T e, error)`` and ``error_fn(w)`` the
    summed squared residual.  Returns ``(new_w, new_state, new_error)``; the
    error of an accepted step is always strictly lower.
    """
    JtJ, Jte, err = normal_fn(w)
    nu = state.nu
    while nu <= state.nu_max:
        try:
            p = damped_step(JtJ, Jte, nu)
        except np.linalg.LinAlgError:
            p = None
        if p is not None and np.all(np.isfinite(p)):
            cand = w + p
            new_err = error_fn(cand)
            if new_err < err:
                return cand, LmaState(max(nu / state.factor, 1e-300), state.factor, state.nu_max), new_err
        nu *= state.factor
    raise LmaDampingExhausted("LMA damping exhausted")


def lma_step(model: MlpModel, state: LmaState, X, T):
    X = _check_input(model, X)
    w, state, _ = levenberg_marquardt_step(
        model.flat(),
        state,
        lambda v: normal_equations(model.with_flat(v), X, T),
        lambda v: sse(model.with_flat(v), X, T),
    )
    return model.with_flat(w), state


# ---------------------------------------------------------------------------
# training


def train(
    X,
    labels,
    structure,
    algorithm: str = "rprop",
    seed: int = 0,
    epochs: int = 200,
    val=None,
    val_fraction: float = 1.0 / 3.0,
    patience: int = 20,
    class_count: int | None = None,
):
    """Train a classifier network and return ``(best_model, trace)``.

    ``val`` is an explicit ``(X_val, labels_val)`` pair; otherwise a stratified
    ``val_fraction`` of the data is held out for early stopping.  The returned
    model is the one with the lowest validation error.  ``trace`` holds one
    dict per epoch (index 0 is the initial network).
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = class_count or int(structure[-1])
    if structure[0] != X.shape[1]:
        raise ValueError(f"structure input {structure[0]} does not match data dimension {X.shape[1]}")
    if structure[-1] != m:
        raise ValueError("output layer must have one neuron per class")
    if val is None and val_fraction > 0:
        fit_idx, val_idx = stratified_partition(labels, (1.0 - val_fraction, val_fraction), seed)
        Xv, Tv = X[val_idx], encode_targets(labels[val_idx], m)
        X, labels = X[fit_idx], labels[fit_idx]
    elif val is not None:
        Xv, Tv = np.asarray(val[0], dtype=np.float64), encode_targets(val[1], m)
    else:
        Xv, Tv = None, None
    T = encode_targets(labels, m)
    return fit(init_model(structure, seed), X, T, algorithm, epochs, Xv, Tv, patience, seed=seed)


def fit(model: MlpModel, X, T, algorithm="rprop", epochs=200, Xv=None, Tv=None, patience=20, seed=None):
    """Run a trainer from ``model`` on targets ``T``; see :func:`train`."""
    algorithm = algorithm.lower()
    if algorithm not in ("rprop", "lma"):
        raise ValueError(f"unknown training algorithm {algorithm!r}")
    rstate = RpropState.for_size(model.n_params)
    lstate = LmaState()

    def val_err(mdl):
        return sse(mdl, Xv, Tv) if Xv is not None and len(Xv) else None

    err = sse(model, X, T)
    best, best_val, best_epoch = model.copy(), val_err(model), 0
    trace = [{"epoch": 0, "train_error": err, "val_error": best_val}]
    stale = 0
    for epoch in range(1, epochs + 1):
        if algorithm == "rprop":
            model, rstate = rprop_epoch(model, rstate, X, T)
        else:
            try:
                model, lstate = lma_step(model, lstate, X, T)
            except LmaDampingExhausted:
                break
        err = sse(model, X, T)
        ve = val_err(model)
        rec = {"epoch": epoch, "train_error": err, "val_error": ve}
        if algorithm == "lma":
            rec["nu"] = lstate.nu
        trace.append(rec)
        score, best_score = (ve, best_val) if ve is not None else (err, trace[best_epoch]["train_error"])
        if score < best_score:
            best, best_val, best_epoch, stale = model.copy(), ve, epoch, 0
        else:
            stale += 1
            if Xv is not None and stale >= patience:
                break
    best.meta.update(
        {"algorithm": algorithm, "seed": seed, "epochs": len(trace) - 1, "best_epoch": best_epoch}
    )
    return best, trace


def classify(model: MlpModel, X):
    """Arg-max class (ties to the lowest index) and outputs with negatives set to zero."""
    single = np.ndim(X) == 1
    y = np.atleast_2d(forward(model, X))
    cls = np.argmax(y, axis=1)
    scores = np.maximum(y, 0.0)
    if single:
        return int(cls[0]), scores[0]
    return cls, scores


# ---------------------------------------------------------------------------
# persistence


def to_dict(model: MlpModel) -> dict:
    return {
        "format": "terrainseg-mlp",
        "version": FORMAT_VERSION,
        "structure": model.structure,
        "weights": [W.tolist() for W in model.weights],
        "meta": model.meta,
    }


def from_dict(d: dict) -> MlpModel:
    if d.get("format") != "terrainseg-mlp":
        raise ValueError("not an MLP model file")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported MLP model version {d.get('version')}")
    return MlpModel(d["structure"], [np.array(W, dtype=np.float64).reshape(len(W), -1) for W in d["weights"]], d.get("meta", {}))


def save(model: MlpModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(model), fh, indent=1)
        fh.write("\n")


def load(path) -> MlpModel:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))
