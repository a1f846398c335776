"""Models, device data shards, local SGD and ideal FedAvg aggregation.

Model parameters, model differences and memories are all plain 1-D float64
numpy arrays of length ``d``. Data shards hold a feature matrix and a label
vector; objectives evaluate mean loss and mean gradient over any subset of
rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError


@dataclass
class DataShard:
    X: np.ndarray
    y: np.ndarray
    owner: int = 0

    def __post_init__(self):
        if len(self.X) == 0:
            raise ConfigError(f"shard of device {self.owner} is empty", "shard")
        if len(self.X) != len(self.y):
            raise DimensionError(
                f"shard {self.owner}: {len(self.X)} feature rows vs {len(self.y)} labels"
            )

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class HyperParams:
    eta: float
    Q: int = 1
    T: int = 100
    K: int = 10
    batch_size: int = 64
    seed: int = 0
    # optional round -> learning-rate map; constant eta when unset
    schedule: Callable[[int], float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError("learning rate must be positive", "eta")
        for name in ("Q", "T", "K", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be >= 1", name)

    def lr(self, t: int) -> float:
        return float(self.schedule(t)) if self.schedule is not None else float(self.eta)


class Objective:
    """Per-sample loss with analytic gradient, averaged over a batch."""

    kind = "abstract"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def loss(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dim)

    def predict(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


class LeastSquares(Objective):
    """0.5 * (theta . x - y)^2"""

    kind = "synthetic-least-squares"

    def loss(self, theta, X, y):
        r = X @ theta - y
        return float(0.5 * np.mean(r * r))

    def grad(self, theta, X, y):
        r = X @ theta - y
        return X.T @ r / len(y)

    def predict(self, theta, X):
        return X @ theta


class Logistic(Objective):
    """Binary cross-entropy on labels in {0, 1}, logit ``theta . x``.

    ``l2`` adds ``0.5 * l2 * ||theta||^2`` to every sample's loss.
    """

    kind = "synthetic-logistic"

    def __init__(self, dim: int, l2: float = 0.0):
        super().__init__(dim)
        self.l2 = float(l2)

    def loss(self, theta, X, y):
        z = X @ theta
        return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * self.l2 * (theta @ theta))

    def grad(self, theta, X, y):
        z = X @ theta
        p = np.exp(-np.logaddexp(0.0, -z))
        g = X.T @ (p - y) / len(y)
        return g + self.l2 * theta if self.l2 else g

    def predict(self, theta, X):
        return (X @ theta > 0).astype(np.int64)


class MLP(Objective):
    """One hidden ReLU layer with a softmax output.

    ``theta`` packs ``W1 (n_in x n_hidden), b1, W2 (n_hidden x n_out), b2`` in
    that order; with 784 -> 100 -> 10 this is 79,510 parameters.
    """

    kind = "mnist-mlp"

    def __init__(self, n_in: int = 784, n_hidden: int = 100, n_out: int = 10):
        self.shapes = [(n_in, n_hidden), (n_hidden,), (n_hidden, n_out), (n_out,)]
        super().__init__(sum(int(np.prod(s)) for s in self.shapes))

    def unpack(self, theta):
        out, i = [], 0
        for s in self.shapes:
            n = int(np.prod(s))
            out.append(theta[i:i + n].reshape(s))
            i += n
        return out

    def init_params(self, rng):
        n_in, n_hidden = self.shapes[0]
        n_out = self.shapes[3][0]
        W1 = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_hidden))
        W2 = rng.normal(0.0, np.sqrt(1.0 / n_hidden), (n_hidden, n_out))
        return np.concatenate([W1.ravel(), np.zeros(n_hidden), W2.ravel(), np.zeros(n_out)])

    def _forward(self, theta, X):
        W1, b1, W2, b2 = self.unpack(theta)
        a = X @ W1 + b1
        h = np.maximum(a, 0.0)
        z = h @ W2 + b2
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return a, h, logp

    def loss(self, theta, X, y):
        _, _, logp = self._forward(theta, X)
        return float(-np.mean(logp[np.arange(len(y)), y]))

    def grad(self, theta, X, y):
        W1, b1, W2, b2 = self.unpack(theta)
        a, h, logp = self._forward(theta, X)
        n = len(y)
        dz = np.exp(logp)
        dz[np.arange(n), y] -= 1.0
        dz /= n
        dW2 = h.T @ dz
        db2 = dz.sum(axis=0)
        dh = dz @ W2.T
        dh[a <= 0] = 0.0
        dW1 = X.T @ dh
        db1 = dh.sum(axis=0)
        return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])

    def predict(self, theta, X):
        _, _, logp = self._forward(theta, X)
        return logp.argmax(axis=1)


OBJECTIVES = {
    LeastSquares.kind: LeastSquares,
    Logistic.kind: Logistic,
    MLP.kind: MLP,
}


def sample_batch(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices of one mini-batch, without replacement within the batch.

    A batch at least as large as the shard is the full shard in index order.
    """
    if batch_size >= n:
        return np.arange(n)
    return rng.choice(n, size=batch_size, replace=False)


def stochastic_gradient(obj: Objective, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    if len(y) == 0:
        raise ConfigError("mini-batch is empty", "batch")
    g = obj.grad(theta, X, y)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite stochastic gradient")
    return g


def local_sgd_round(
    obj: Objective,
    shard: DataShard,
    theta_global: np.ndarray,
    eta: float,
    Q: int,
    batch_size: int,
    rng: np.random.Generator,
    trace: list | None = None,
) -> np.ndarray:
    """Run ``Q`` SGD steps from ``theta_global`` and return the model difference.

    The returned vector is ``theta_global - theta_after_Q_steps``. If ``trace``
    is a list, the norm of every stochastic gradient is appended to it.
    """
    if len(shard) == 0:
        raise ConfigError("empty shard", "shard")
    theta = np.array(theta_global, dtype=np.float64, copy=True)
    for q in range(Q):
        idx = sample_batch(len(shard), batch_size, rng)
        try:
            g = stochastic_gradient(obj, theta, shard.X[idx], shard.y[idx])
        except NumericalError as exc:
            raise NumericalError(f"device {shard.owner}: {exc}", step=q) from None
        if trace is not None:
            trace.append(float(np.linalg.norm(g)))
        theta -= eta * g
    return theta_global - theta


def ordered_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Sum in list order so that results are reproducible bitwise."""
    total = np.array(vectors[0], dtype=np.float64, copy=True)
    for v in vectors[1:]:
        total += v
    return total


def fedavg_update(theta: np.ndarray, deltas: Sequence[np.ndarray]) -> np.ndarray:
    if len(deltas) == 0:
        raise DimensionError("no model differences to aggregate")
    d = len(theta)
    for k, v in enumerate(deltas):
        if len(v) != d:
            raise DimensionError(f"delta {k} has length {len(v)}, expected {d}")
    return theta - ordered_sum(deltas) / len(deltas)


def local_loss_grad(obj: Objective, theta: np.ndarray, shard: DataShard):
    return obj.loss(theta, shard.X, shard.y), obj.grad(theta, shard.X, shard.y)


def eval_loss_and_gradnorm(obj: Objective, theta: np.ndarray, shards: Sequence[DataShard]):
    """Global loss ``(1/K) sum_k f_k`` and squared norm of its full gradient."""
    losses, grads = zip(*(local_loss_grad(obj, theta, s) for s in shards))
    K = len(shards)
    g = ordered_sum(grads) / K
    return float(sum(losses) / K), float(g @ g)


def accuracy(obj: Objective, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(obj.predict(theta, X) == y))


def make_synthetic_federation(
    kind: str,
    K: int,
    d: int,
    heterogeneity: float,
    seed: int,
    n_per_device: int = 200,
    signal: float = 3.0,
    label_noise: float = 0.1,
    l2: float = 0.0,
):
    """Draw a K-device federated dataset with controllable client drift.

    Device k's data come from a generating parameter
    ``theta_star + heterogeneity * u_k`` where ``theta_star`` and ``u_k`` are
    i.i.d. normal with per-coordinate scale ``signal / sqrt(d)``; the spread of
    local optima grows linearly with ``heterogeneity``. Features are standard
    normal, so logits have scale ``signal`` for any ``d``.
    """
    from .rng import Streams

    if K < 1 or d < 1:
        raise ConfigError("K and d must be >= 1")
    if heterogeneity < 0:
        raise ConfigError("must be nonnegative", "heterogeneity")
    cls = OBJECTIVES.get(kind)
    if cls is None or cls is MLP:
        raise ConfigError(f"no synthetic generator for {kind!r}", "objective")
    rng = Streams(seed).get("data")
    scale = signal / np.sqrt(d)
    theta_star = rng.normal(0.0, scale, d)
    shards = []
    for k in range(K):
        centre = theta_star + heterogeneity * rng.normal(0.0, scale, d)
        X = rng.normal(0.0, 1.0, (n_per_device, d))
        z = X @ centre
        if cls is Logistic:
            p = np.exp(-np.logaddexp(0.0, -z))
            y = (rng.random(n_per_device) < p).astype(np.float64)
        else:
            y = z + label_noise * rng.normal(0.0, 1.0, n_per_device)
        shards.append(DataShard(X, y, owner=k))
    obj = cls(d, l2=l2) if cls is Logistic else cls(d)
    return obj, shards
