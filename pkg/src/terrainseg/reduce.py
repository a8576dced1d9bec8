"""Dimensionality reduction for looking at the feature space: PCA and a bottleneck network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mlp


class ReduceError(ValueError):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (q, d), orthonormal rows
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


def pca_fit(X, q: int = 3) -> PcaModel:
    """Top-q eigenvectors of the sample covariance, sign-fixed so the largest loading is positive."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ReduceError("expected a 2-D array of vectors")
    n, d = X.shape
    if q < 1 or q > d:
        raise ReduceError(f"q={q} must lie in [1, {d}]")
    if n < q + 1:
        raise ReduceError(f"need at least {q + 1} vectors for {q} components")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:q]
    comps = vecs[:, order].T
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(q), pivot])
    comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    return PcaModel(mean, comps, np.maximum(vals[order], 0.0), float(np.trace(cov)))


def pca_transform(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.mean.shape[0]:
        raise ReduceError(f"dimension {X.shape[1]} does not match model dimension {model.mean.shape[0]}")
    out = (X - model.mean) @ model.components.T
    return out[0] if single else out


def pca_inverse(model: PcaModel, Z) -> np.ndarray:
    return np.asarray(Z) @ model.components + model.mean


@dataclass
class Bottleneck:
    """Autoencoder ``d - hidden - d``; the encoder is the hidden-layer activation."""

    network: mlp.MlpModel
    trace: list

    def encode(self, X) -> np.ndarray:
        return mlp.hidden_activations(self.network, X, layer=1)

    def reconstruct(self, X) -> np.ndarray:
        return mlp.forward(self.network, X)

    def error(self, X) -> float:
        X = np.asarray(X, dtype=np.float64)
        return float(np.sum((self.reconstruct(X) - X) ** 2))


def bottleneck_fit(X, hidden: int = 3, epochs: int = 300, seed: int = 0) -> Bottleneck:
    """Train an autoencoding network with RPROP (inputs are the targets).

    The returned network is the lowest-error one seen; ``trace`` records the
    best-so-far reconstruction error after every epoch, so it never increases.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    if not 1 <= hidden < d + 1:
        raise ReduceError(f"hidden={hidden} must lie in [1, {d}]")
    net = mlp.init_model([d, hidden, d], seed)
    state = mlp.RpropState.for_size(net.n_params)
    best = net.copy()
    best_err = mlp.sse(net, X, X)
    trace = [best_err]
    for _ in range(epochs):
        net, state = mlp.rprop_epoch(net, state, X, X)
        err = mlp.sse(net, X, X)
        if err < best_err:
            best, best_err = net.copy(), err
        trace.append(best_err)
    best.meta.update({"algorithm": "rprop", "seed": seed, "epochs": epochs, "purpose": "bottleneck"})
    return Bottleneck(best, trace)


def format_point_cloud(Z, labels) -> str:
    lines = ["c0,c1,c2,label"]
    for z, lab in zip(np.asarray(Z), np.asarray(labels)):
        coords = list(z[:3]) + [0.0] * (3 - min(3, len(z)))
        lines.append(",".join("%.9g" % v for v in coords) + f",{int(lab)}")
    return "\n".join(lines) + "\n"
