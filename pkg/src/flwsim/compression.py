"""Message-size-reduction operators: sparsifiers, quantizers, error feedback.

Conventions shared by every operator here:

* sparse coordinate indices are 1-based (matching the position codec);
* ``sign(0) = +1``;
* ties in magnitude-based selections break toward the lowest index;
* stochastic operators take an explicit ``numpy.random.Generator``.

Payload sizes are exact serialized sizes in bits: sparse messages use the
:mod:`flwsim.codec` wire format (header + positions + raw 64-bit values);
quantized messages count their scale scalars at 64 bits plus the per
coordinate code width.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import codec
from .errors import ContractViolation
from .numerics import check_vector


def sign_pm1(x):
    """Sign with the fixed convention sign(0) = +1."""
    return np.where(np.asarray(x) >= 0.0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# masks and sparse updates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mask:
    """Binary keep/drop vector over the model coordinates."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
            raise ContractViolation("mask must be a 1-d 0/1 vector")
        object.__setattr__(self, "bits", bits)

    @property
    def dim(self):
        return self.bits.shape[0]

    @property
    def nnz(self):
        return int(self.bits.sum())

    @property
    def level(self):
        """Fraction of coordinates kept."""
        return self.nnz / self.dim

    def indices(self):
        """1-based positions of the kept coordinates, ascending."""
        return np.flatnonzero(self.bits) + 1

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class SparseUpdate:
    """Sparse vector as strictly increasing 1-based indices plus values."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ContractViolation("indices and values must be 1-d and equal length")
        if idx.size and (idx[0] < 1 or idx[-1] > self.dim or np.any(np.diff(idx) <= 0)):
            raise ContractViolation("indices must be strictly increasing within [1, dim]")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def nnz(self):
        return self.indices.size

    def to_dense(self):
        out = np.zeros(self.dim)
        out[self.indices - 1] = self.values
        return out

    def to_mask(self):
        bits = np.zeros(self.dim, dtype=np.uint8)
        bits[self.indices - 1] = 1
        return Mask(bits)


@dataclass
class ErrorState:
    """Per-owner compression residual carried across rounds."""

    residual: np.ndarray
    owner: int = 0

    @classmethod
    def zeros(cls, dim, owner=0):
        return cls(np.zeros(dim), owner)


# ---------------------------------------------------------------------------
# sparsification operators
# ---------------------------------------------------------------------------

def solve_keep_probs(g, epsilon: float, p_min: float = 1e-12):
    """Keep probabilities minimizing expected nonzeros under the variance cap.

    Solves: minimize sum(p_i) subject to sum(g_i^2 / p_i) <= (1+eps) sum(g_i^2),
    whose solution is p_i = min(lam * |g_i|, 1) with the smallest feasible lam.
    Returns (p, lam).  lam is found by bisection on the monotone constraint,
    to absolute tolerance 1e-10; probabilities are clamped to [p_min, 1].
    """
    g = np.asarray(g, dtype=np.float64)
    a = np.abs(g)
    energy = float(np.sum(a * a))
    if energy == 0.0:
        return np.zeros_like(a), 0.0
    if not epsilon > 0:
        raise ContractViolation("epsilon must be positive")
    bound = (1.0 + epsilon) * energy
    nz = a > 0

    def constraint(lam):
        p = np.minimum(lam * a[nz], 1.0)
        return float(np.sum(a[nz] ** 2 / np.maximum(p, p_min)))

    lo, hi = 0.0, 1.0 / a[nz].min()  # at hi every p_i = 1, constraint surely met
    while hi - lo > 1e-10 * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if constraint(mid) <= bound:
            hi = mid
        else:
            lo = mid
    lam = hi
    p = np.zeros_like(a)
    p[nz] = np.clip(lam * a[nz], p_min, 1.0)
    return p, lam


def random_sparsify(g, epsilon: float, rng: np.random.Generator) -> SparseUpdate:
    """Keep coordinate i with probability p_i and rescale by 1/p_i (unbiased)."""
    g = check_vector(g, name="g")
    p, _ = solve_keep_probs(g, epsilon) if np.any(g) else (np.zeros_like(g), 0.0)
    if not np.any(g):
        return SparseUpdate(g.size, np.array([], dtype=np.int64), np.array([]))
    keep = rng.random(g.size) < p
    idx = np.flatnonzero(keep)
    return SparseUpdate(g.size, idx + 1, g[idx] / p[idx])


def top_k_mask(g, k: int) -> Mask:
    """Mask of the k largest-magnitude coordinates; ties go to the lowest index."""
    g = np.asarray(g, dtype=np.float64)
    d = g.size
    if not 1 <= k <= d:
        raise ContractViolation(f"k={k} out of range for dimension {d}")
    order = np.argsort(-np.abs(g), kind="stable")
    bits = np.zeros(d, dtype=np.uint8)
    bits[order[:k]] = 1
    return Mask(bits)


def rand_k_mask(d: int, k: int, rng: np.random.Generator) -> Mask:
    """Uniformly random mask with exactly k kept coordinates."""
    if not 1 <= k <= d:
        raise ContractViolation(f"k={k} out of range for dimension {d}")
    bits = np.zeros(d, dtype=np.uint8)
    bits[rng.choice(d, size=k, replace=False)] = 1
    return Mask(bits)


def r_top_k_mask(g, r: int, k: int, rng: np.random.Generator) -> Mask:
    """Uniform k-subset of the r largest-magnitude coordinates."""
    g = np.asarray(g, dtype=np.float64)
    if not 1 <= k <= r <= g.size:
        raise ContractViolation(f"need 1 <= k <= r <= d, got k={k} r={r} d={g.size}")
    top_r = np.argsort(-np.abs(g), kind="stable")[:r]
    bits = np.zeros(g.size, dtype=np.uint8)
    bits[rng.choice(top_r, size=k, replace=False)] = 1
    return Mask(bits)


def sync_mask_schedule(d: int, phi: float, tau_max: int, t: int) -> Mask:
    """Deterministic cyclic block mask for round t (1-based).

    Blocks of ``round(phi * d)`` coordinates slide cyclically, so every
    coordinate is selected at least once in any ``tau_max`` consecutive rounds.
    """
    if not 0 < phi <= 1:
        raise ContractViolation("phi must be in (0, 1]")
    if t < 1:
        raise ContractViolation("round index is 1-based")
    size = max(1, int(round(phi * d)))
    if tau_max < -(-d // size):  # ceil(d / size) rounds to cover everything
        raise ContractViolation(
            f"(phi={phi}, tau_max={tau_max}) cannot cover dimension {d}")
    start = ((t - 1) * size) % d
    bits = np.zeros(d, dtype=np.uint8)
    pos = (start + np.arange(size)) % d
    bits[pos] = 1
    return Mask(bits)


def apply_mask(g, mask: Mask) -> SparseUpdate:
    """Element-wise product of g with the mask, kept entries only."""
    g = np.asarray(g, dtype=np.float64)
    if g.size != mask.dim:
        raise ContractViolation("vector and mask dimensions differ")
    idx = np.flatnonzero(mask.bits)
    return SparseUpdate(g.size, idx + 1, g[idx])


# ---------------------------------------------------------------------------
# quantizers
# ---------------------------------------------------------------------------

def quant_stochastic_uniform(u, levels: int, rng: np.random.Generator):
    """Randomized uniform quantizer over [0, 1] in ``levels`` sub-intervals.

    Each |u_i|/||u|| is mapped to one of the two enclosing grid points with
    probabilities proportional to its distance from them, then rescaled by
    sign(u_i) * ||u||.  Unbiased: E[output] = u.
    """
    u = check_vector(u, name="u")
    if levels < 1:
        raise ContractViolation("need at least one quantization interval")
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        return np.zeros_like(u)
    scaled = np.abs(u) / norm
    lower = np.minimum(np.floor(scaled * levels), levels - 1)
    frac = scaled * levels - lower  # probability of rounding up
    up = rng.random(u.size) < frac
    q = (lower + up) / levels
    return sign_pm1(u) * q * norm


def quant_ternary(g, rng: np.random.Generator):
    """Bernoulli ternary quantizer: outputs in {-gmax, 0, +gmax}, unbiased."""
    g = check_vector(g, name="g")
    gmax = float(np.max(np.abs(g)))
    if gmax == 0.0:
        return np.zeros_like(g)
    b = rng.random(g.size) < (np.abs(g) / gmax)
    return gmax * sign_pm1(g) * b


def sign_quant(g, threshold: float = 0.0, mode: str = "sign"):
    """1-bit message: per-coordinate signs, or indicators of g_i >= threshold."""
    g = np.asarray(g, dtype=np.float64)
    if mode == "sign":
        return sign_pm1(g)
    if mode == "thresholded-1bit":
        return (g >= threshold).astype(np.float64)
    raise ContractViolation(f"unknown sign mode {mode!r}")


def scaled_sign(g):
    """Mean-magnitude-scaled sign vector: (||g||_1 / d) * sign(g)."""
    g = check_vector(g, name="g")
    return (np.sum(np.abs(g)) / g.size) * sign_pm1(g)


def block_scaled_sign(g, blocks):
    """Apply the scaled sign operator independently on each index block.

    ``blocks`` is a partition of the 1-based coordinate range; singleton
    blocks reproduce g exactly.
    """
    g = check_vector(g, name="g")
    seen = np.zeros(g.size, dtype=bool)
    out = np.empty_like(g)
    for block in blocks:
        idx = np.asarray(block, dtype=np.int64) - 1
        if idx.size == 0 or np.any(idx < 0) or np.any(idx >= g.size) or np.any(seen[idx]):
            raise ContractViolation("blocks must be a partition of [1..d]")
        seen[idx] = True
        part = g[idx]
        out[idx] = (np.sum(np.abs(part)) / part.size) * sign_pm1(part)
    if not np.all(seen):
        raise ContractViolation("blocks must cover every coordinate")
    return out


def delta_of(g):
    """The approximation factor ||g||_1^2 / (d ||g||_2^2) of the scaled sign operator."""
    g = np.asarray(g, dtype=np.float64)
    sq = float(np.sum(g * g))
    if sq == 0.0:
        return 1.0
    return float(np.sum(np.abs(g)) ** 2) / (g.size * sq)


# ---------------------------------------------------------------------------
# compressor specs and messages
# ---------------------------------------------------------------------------

SCHEMES = (
    "identity", "random-p", "top-k", "rand-k", "r-top-k", "sync-mask",
    "stochastic-uniform", "ternary", "sign", "thresholded-1bit",
    "scaled-sign", "block-scaled-sign",
)

_MASK_SCHEMES = {"top-k", "rand-k", "r-top-k", "sync-mask"}


@dataclass(frozen=True)
class CompressorSpec:
    """Parameters selecting and configuring one compression scheme."""

    scheme: str = "identity"
    k: int | None = None
    r: int | None = None
    levels: int | None = None
    epsilon: float | None = None
    phi: float | None = None
    tau_max: int | None = None
    threshold: float = 0.0
    block_size: int | None = None
    rescale: bool = False  # unbiased d/k rescale for rand-k; off by default

    def validate(self, dim: int):
        s = self.scheme
        if s not in SCHEMES:
            raise ContractViolation(f"unknown compression scheme {s!r}")
        if s in ("top-k", "rand-k", "r-top-k"):
            if self.k is None or not 1 <= self.k <= dim:
                raise ContractViolation(f"{s} needs 1 <= k <= {dim}")
        if s == "r-top-k" and (self.r is None or not self.k <= self.r <= dim):
            raise ContractViolation("r-top-k needs k <= r <= d")
        if s == "stochastic-uniform" and (self.levels is None or self.levels < 1):
            raise ContractViolation("stochastic-uniform needs levels >= 1")
        if s == "random-p" and (self.epsilon is None or not self.epsilon > 0):
            raise ContractViolation("random-p needs epsilon > 0")
        if s == "sync-mask":
            if self.phi is None or self.tau_max is None or self.tau_max < 1:
                raise ContractViolation("sync-mask needs phi and tau_max >= 1")
        if s == "block-scaled-sign" and (self.block_size is None or self.block_size < 1):
            raise ContractViolation("block-scaled-sign needs block_size >= 1")
        return self


class Compressed:
    """A compressed message: dense reconstruction plus its exact wire size."""

    def __init__(self, dense, payload_bits, wire=None):
        self.dense = np.asarray(dense, dtype=np.float64)
        self.payload_bits = int(payload_bits)
        self.wire = wire

    @property
    def payload_bytes(self):
        return -(-self.payload_bits // 8)


def _sparse_message(update: SparseUpdate) -> Compressed:
    blob = codec.encode_positions(update.to_mask(), codec.pick_block_level(update.dim, update.nnz))
    wire = codec.blob_to_bytes(blob, update.values)
    return Compressed(update.to_dense(), len(wire) * 8, wire)


class Compressor:
    """Wraps one scheme behind a uniform compress(x, rng, round) interface."""

    def __init__(self, spec: CompressorSpec, dim: int):
        self.spec = spec.validate(dim)
        self.dim = dim

    @property
    def scheme(self):
        return self.spec.scheme

    def nominal_bits(self, dim: int | None = None) -> int:
        """Serialized size the scheme produces for a typical dense input."""
        d = dim or self.dim
        s, spec = self.scheme, self.spec
        if s == "identity":
            return 64 * d
        if s in _MASK_SCHEMES:
            nnz = spec.k if s != "sync-mask" else max(1, int(round(spec.phi * d)))
            inv = codec.pick_block_level(d, nnz)
            return codec.wire_bits(d, inv, nnz)
        if s == "random-p":
            return 64 * d  # data dependent; worst case
        if s == "stochastic-uniform":
            return 64 + d * (1 + codec.bit_width(spec.levels + 1))
        if s == "ternary":
            return 64 + 2 * d
        if s in ("sign", "thresholded-1bit"):
            return d
        if s == "scaled-sign":
            return 64 + d
        if s == "block-scaled-sign":
            nblocks = -(-d // spec.block_size)
            return 64 * nblocks + d
        raise ContractViolation(f"unknown scheme {s!r}")

    def compress(self, x, rng: np.random.Generator | None = None, round_index: int = 1) -> Compressed:
        x = np.asarray(x, dtype=np.float64)
        s, spec, d = self.scheme, self.spec, x.size
        if s == "identity":
            return Compressed(x.copy(), 64 * d)
        if s == "top-k":
            return _sparse_message(apply_mask(x, top_k_mask(x, spec.k)))
        if s == "rand-k":
            upd = apply_mask(x, rand_k_mask(d, spec.k, rng))
            if spec.rescale:
                upd = SparseUpdate(d, upd.indices, upd.values * (d / spec.k))
            return _sparse_message(upd)
        if s == "r-top-k":
            return _sparse_message(apply_mask(x, r_top_k_mask(x, spec.r, spec.k, rng)))
        if s == "sync-mask":
            mask = sync_mask_schedule(d, spec.phi, spec.tau_max, round_index)
            return _sparse_message(apply_mask(x, mask))
        if s == "random-p":
            if not np.any(x):
                return _sparse_message(SparseUpdate(d, np.array([], dtype=np.int64), np.array([])))
            return _sparse_message(random_sparsify(x, spec.epsilon, rng))
        if s == "stochastic-uniform":
            bits = 64 + d * (1 + codec.bit_width(spec.levels + 1))
            return Compressed(quant_stochastic_uniform(x, spec.levels, rng), bits)
        if s == "ternary":
            return Compressed(quant_ternary(x, rng), 64 + 2 * d)
        if s == "sign":
            return Compressed(sign_quant(x), d)
        if s == "thresholded-1bit":
            return Compressed(sign_quant(x, spec.threshold, "thresholded-1bit"), d)
        if s == "scaled-sign":
            return Compressed(scaled_sign(x), 64 + d)
        if s == "block-scaled-sign":
            blocks = [range(i + 1, min(i + spec.block_size, d) + 1)
                      for i in range(0, d, spec.block_size)]
            return Compressed(block_scaled_sign(x, blocks), 64 * len(blocks) + d)
        raise ContractViolation(f"unknown scheme {s!r}")


def make_compressor(spec: CompressorSpec | None, dim: int) -> Compressor:
    return Compressor(spec or CompressorSpec(), dim)


def ef_compress(g, err: ErrorState, compressor: Compressor,
                rng: np.random.Generator | None = None, round_index: int = 1):
    """Compress g with error feedback.

    The message encodes ``g + e``; the new residual is what the message
    missed, ``(g + e) - dense(message)``.  The same operator serves the
    uplink and, when configured, the server's broadcast.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != err.residual.shape:
        raise ContractViolation("gradient and error residual dimensions differ")
    carried = g + err.residual
    msg = compressor.compress(carried, rng, round_index)
    return msg, ErrorState(carried - msg.dense, err.owner)


def contraction_check(spec: CompressorSpec, trials: int, rng: np.random.Generator,
                      dim: int = 16, inner: int = 1):
    """Worst observed E||x - comp(x)||^2 / ||x||^2 over random unit-scale x.

    ``inner`` controls how many compressor draws estimate the expectation for
    stochastic schemes; deterministic schemes need only one.
    """
    if trials < 1:
        raise ContractViolation("need at least one trial")
    comp = Compressor(spec, dim)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(dim)
        sq = float(x @ x)
        ratios = [float(np.sum((x - comp.compress(x, rng).dense) ** 2)) / sq
                  for _ in range(inner)]
        worst = max(worst, sum(ratios) / inner)
    return worst
