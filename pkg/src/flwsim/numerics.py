"""Vector arithmetic, loss models, gradients, sharding and seeded randomness.

Model and gradient vectors are plain 1-d ``numpy.float64`` arrays throughout;
every tolerance in the test suite assumes 64-bit precision.  All randomness
flows through :class:`RngStream`, which derives named, reproducible
sub-streams from a single master seed so that results never depend on
evaluation order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# seeded randomness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """A named random stream: identical (seed, label) gives identical draws."""

    seed: int
    label: str = "root"

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; repeated calls restart the sequence."""
        digest = hashlib.blake2b(self.label.encode("utf-8"), digest_size=16).digest()
        words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        return np.random.default_rng(np.random.SeedSequence([self.seed & _MASK64] + words))

    def child(self, *parts) -> "RngStream":
        """Sub-stream labelled by appending ``parts`` to this stream's label."""
        suffix = "/".join(str(p) for p in parts)
        return RngStream(self.seed, f"{self.label}/{suffix}")


def batch_rng(seed: int, device: int, round_index: int, local_step: int) -> np.random.Generator:
    """Generator used to draw device ``device``'s minibatch at a given step.

    Exposed so tests can replay the exact sample sequence of a training run.
    """
    return RngStream(seed, f"batch/d{device}/t{round_index}/h{local_step}").generator()


# ---------------------------------------------------------------------------
# deterministic reductions
# ---------------------------------------------------------------------------

def pairwise_sum(vectors):
    """Sum a sequence of equal-shape arrays by fixed-order pairwise reduction.

    The reduction tree is a function of the sequence length only, so results
    are independent of any parallel evaluation of the inputs.  For a power of
    two count of bitwise-identical vectors the result is exact (every partial
    sum is a power-of-two multiple).
    """
    items = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not items:
        raise ContractViolation("pairwise_sum needs at least one vector")
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt[-1] = nxt[-1] + items[-1] if nxt else items[-1]
        items = nxt if nxt else [items[-1]]
    return items[0]


def pairwise_mean(vectors):
    vectors = list(vectors)
    return pairwise_sum(vectors) / float(len(vectors))


def check_vector(v, dim=None, name="vector"):
    """Validate a dense vector: 1-d, float, finite; returns it as float64."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractViolation(f"{name} must be 1-d, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ContractViolation(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# loss models
# ---------------------------------------------------------------------------

class QuadraticLoss:
    """Least-squares model fit: dataset rows are (a_i, b_i).

    The per-sample loss carries the dataset size n as a weight,
    ``(n/2) * (a_i . theta - b_i)^2``, so that the dataset-mean loss equals
    ``0.5 * ||A theta - b||^2`` and the batch-mean gradient is an unbiased
    estimate of ``A^T (A theta - b)``.
    """

    kind = "quadratic"

    def __init__(self, n_samples: int, dim: int):
        if n_samples < 1 or dim < 1:
            raise ContractViolation("quadratic loss needs n_samples >= 1 and dim >= 1")
        self.n_samples = int(n_samples)
        self.dim = int(dim)

    def batch_loss(self, theta, X, y):
        r = X @ theta - y
        return float(0.5 * self.n_samples * np.mean(r * r))

    def batch_grad(self, theta, X, y):
        r = X @ theta - y
        return self.n_samples * (X.T @ r) / X.shape[0]

    def eval_metric(self, theta, X, y):
        """Mean squared residual on the evaluation split (lower is better)."""
        r = X @ theta - y
        return float(np.mean(r * r))


class LogisticLoss:
    """Binary cross-entropy with labels in {0, 1}."""

    kind = "logistic"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def batch_loss(self, theta, X, y):
        z = X @ theta
        # softplus(z) - y*z is the numerically stable cross-entropy
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def batch_grad(self, theta, X, y):
        z = X @ theta
        p = 1.0 / (1.0 + np.exp(-z))
        return X.T @ (p - y) / X.shape[0]

    def eval_metric(self, theta, X, y):
        """Classification accuracy at threshold 0.5."""
        pred = (X @ theta) >= 0.0
        return float(np.mean(pred == (y >= 0.5)))


class PerceptronLoss:
    """Tiny two-layer perceptron with tanh hidden units and squared loss.

    Parameters are packed into one flat vector ordered
    ``[W1 (hidden x inputs), b1, w2, b2]``.  Hidden width is capped so that
    brute-force gradient checks stay fast.
    """

    kind = "two-layer-perceptron"
    MAX_HIDDEN = 32

    def __init__(self, n_inputs: int, hidden: int):
        if hidden > self.MAX_HIDDEN:
            raise ContractViolation(f"hidden width capped at {self.MAX_HIDDEN}")
        self.n_inputs = int(n_inputs)
        self.hidden = int(hidden)
        self.dim = hidden * n_inputs + hidden + hidden + 1

    def _unpack(self, theta):
        h, p = self.hidden, self.n_inputs
        W1 = theta[: h * p].reshape(h, p)
        b1 = theta[h * p: h * p + h]
        w2 = theta[h * p + h: h * p + 2 * h]
        b2 = theta[-1]
        return W1, b1, w2, b2

    def _forward(self, theta, X):
        W1, b1, w2, b2 = self._unpack(theta)
        H = np.tanh(X @ W1.T + b1)
        return H, H @ w2 + b2

    def batch_loss(self, theta, X, y):
        _, f = self._forward(theta, X)
        return float(0.5 * np.mean((f - y) ** 2))

    def batch_grad(self, theta, X, y):
        W1, b1, w2, b2 = self._unpack(theta)
        H = np.tanh(X @ W1.T + b1)
        f = H @ w2 + b2
        r = (f - y) / X.shape[0]
        back = (r[:, None] * w2) * (1.0 - H * H)
        gW1 = back.T @ X
        gb1 = back.sum(axis=0)
        gw2 = H.T @ r
        gb2 = r.sum()
        return np.concatenate([gW1.ravel(), gb1, gw2, [gb2]])

    def eval_metric(self, theta, X, y):
        """Accuracy of thresholding the network output at 0.5."""
        _, f = self._forward(theta, X)
        return float(np.mean((f >= 0.5) == (y >= 0.5)))


# ---------------------------------------------------------------------------
# data shards
# ---------------------------------------------------------------------------

@dataclass
class DataShard:
    """One device's slice of the dataset."""

    X: np.ndarray
    y: np.ndarray
    owner: int = 0

    def __post_init__(self):
        if len(self.X) == 0:
            raise ContractViolation("shard must be non-empty")
        if len(self.X) != len(self.y):
            raise ContractViolation("features and labels disagree in length")

    def __len__(self):
        return len(self.X)


def make_shards(X, y, n_devices: int, mode: str = "iid", rng: RngStream | None = None):
    """Partition (X, y) into ``n_devices`` disjoint shards.

    ``iid`` shuffles uniformly before splitting; ``label-skew`` sorts by label
    and splits contiguously, so each shard covers a narrow label range.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(X)
    if n_devices < 1 or n < n_devices:
        raise ContractViolation(f"cannot split {n} samples into {n_devices} shards")
    if mode == "iid":
        gen = (rng or RngStream(0)).child("shards").generator()
        order = gen.permutation(n)
    elif mode == "label-skew":
        order = np.argsort(y, kind="stable")
    else:
        raise ContractViolation(f"unknown sharding mode {mode!r}")
    bounds = np.linspace(0, n, n_devices + 1).astype(int)
    return [
        DataShard(X[order[bounds[i]: bounds[i + 1]]], y[order[bounds[i]: bounds[i + 1]]], owner=i)
        for i in range(n_devices)
    ]


def draw_batch(shard: DataShard, batch_size: int, gen: np.random.Generator):
    """Uniform-with-replacement minibatch; ``batch_size == 0`` means the full shard."""
    if batch_size == 0:
        return shard.X, shard.y
    idx = gen.integers(0, len(shard), size=batch_size)
    return shard.X[idx], shard.y[idx]


# ---------------------------------------------------------------------------
# gradients and steps
# ---------------------------------------------------------------------------

def grad(loss, theta, batch):
    """Average gradient of the loss over the batch ``(X, y)``."""
    X, y = batch
    if len(X) == 0:
        raise ContractViolation("batch must be non-empty")
    theta = check_vector(theta, loss.dim, "theta")
    return loss.batch_grad(theta, np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64))


def sgd_step(theta, g, eta: float):
    """One descent step ``theta - eta * g``."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if theta.shape != g.shape:
        raise ContractViolation("theta and gradient dimensions differ")
    if not eta > 0:
        raise ContractViolation("learning rate must be positive")
    return theta - eta * g

def finite_diff_grad(loss, theta, batch, h: float = 1e-5):
    """Central-difference gradient of the batch loss, coordinate by coordinate."""
    if not h > 0:
        raise ContractViolation("step size must be positive")
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    theta = check_vector(theta, loss.dim, "theta")
    out = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (loss.batch_loss(up, X, y) - loss.batch_loss(dn, X, y)) / (2.0 * h)
    return out
