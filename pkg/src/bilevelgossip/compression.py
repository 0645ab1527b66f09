"""Message compression operators for gossip communication.

Every message a node transmits is a compressed vector: either a sparse
set of (index, value) pairs or a dense payload.  Payload accounting
treats one 32-bit scalar or index as one word, so a sparse message with
k entries costs 2k words and a dense message of dimension d costs d.

Operators:
  top_k     keep the k = max(1, floor(ratio * d)) largest-magnitude
            entries; deterministic and biased, squared error at most
            (1 - k/d) of the input energy on every call
  rand_k    keep k uniformly random entries scaled by d/k; unbiased,
            second moment (d/k - 1) of the input energy
  identity  transmit the vector unchanged (dense payload)
  rescaled  wrap another operator, shrinking its output by 1/(2 - delta_c)
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "Compressor",
    "CompressedVector",
    "compress",
    "compress_rows",
    "decompress",
    "payload_words",
    "rescale_biased",
    "contraction_suite",
    "SuiteRow",
]

KINDS = ("top_k", "rand_k", "identity", "rescaled")


@dataclass(frozen=True)
class CompressedVector:
    """One transmitted message."""

    dimension: int
    indices: np.ndarray  # sorted ascending, int64
    values: np.ndarray  # float64, aligned with indices
    payload_words: int
    dense: bool = False


@dataclass(frozen=True)
class Compressor:
    """A compression operator plus its nominal contraction parameter.

    delta_c is the parameter the step-size theory consumes: ratio for
    top_k and rand_k, 1.0 for identity, 1/(2 - inner.delta_c) for
    rescaled operators.  ``biased`` distinguishes operators whose output
    is systematically shrunk from unbiased randomized ones.
    """

    kind: str
    ratio: float = 1.0
    delta_c: float = 1.0
    biased: bool = True
    inner: "Compressor | None" = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown compressor kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("top_k", "rand_k") and not (0.0 < self.ratio <= 1.0):
            raise ConfigError(f"compression ratio must lie in (0, 1], got {self.ratio}")
        if self.kind == "rescaled" and self.inner is None:
            raise ConfigError("rescaled compressor requires an inner operator")
        if self.kind != "rescaled" and self.inner is not None:
            raise ConfigError(f"{self.kind} compressor does not take an inner operator")

    @classmethod
    def top_k(cls, ratio: float) -> "Compressor":
        return cls(kind="top_k", ratio=ratio, delta_c=ratio, biased=True)

    @classmethod
    def rand_k(cls, ratio: float) -> "Compressor":
        return cls(kind="rand_k", ratio=ratio, delta_c=ratio, biased=False)

    @classmethod
    def identity(cls) -> "Compressor":
        return cls(kind="identity", ratio=1.0, delta_c=1.0, biased=False)

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity" or (
            self.kind == "rescaled" and self.inner.kind == "identity"
        )

    def keep_count(self, dim: int) -> int:
        """Entries retained per message of dimension ``dim``."""
        if self.kind == "rescaled":
            return self.inner.keep_count(dim)
        if self.kind == "identity":
            return dim
        return max(1, math.floor(self.ratio * dim))

    def effective_delta(self, dim: int) -> float:
        """Contraction parameter realized at a concrete dimension
        (floor(ratio * d) / d for top_k; nominal otherwise)."""
        if self.kind == "top_k":
            return self.keep_count(dim) / dim
        if self.kind == "rescaled":
            return 1.0 / (2.0 - self.inner.effective_delta(dim))
        return self.delta_c

    def words_per_message(self, dim: int) -> int:
        if self.is_identity:
            return dim
        return 2 * self.keep_count(dim)


def rescale_biased(c: Compressor) -> Compressor:
    """Shrink ``c``'s output by 1/(2 - delta_c).

    The rescaled operator contracts with parameter 1/(2 - delta_c)
    whenever the wrapped one satisfies the (1 - delta_c) squared-error
    bound in expectation, which makes operators with unbiased noise
    usable where a contractive one is required.
    """
    if c.kind == "rescaled":
        raise ConfigError("compressor is already rescaled")
    return Compressor(
        kind="rescaled",
        ratio=c.ratio,
        delta_c=1.0 / (2.0 - c.delta_c),
        biased=True,
        inner=c,
    )


def _check_vector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ConfigError(f"compress expects a non-empty 1-d vector, got shape {v.shape}")
    return v


def compress(
    c: Compressor, v: np.ndarray, rng: np.random.Generator | None = None
) -> CompressedVector:
    """Apply ``c`` to ``v``.  rand_k requires ``rng``; top_k breaks
    magnitude ties toward the lower index, so it needs none."""
    v = _check_vector(v)
    d = v.size
    if c.kind == "identity":
        return CompressedVector(d, np.arange(d, dtype=np.int64), v.copy(), d, dense=True)
    if c.kind == "rescaled":
        msg = compress(c.inner, v, rng)
        scale = 1.0 / (2.0 - c.inner.delta_c)
        return CompressedVector(
            d, msg.indices, msg.values * scale, msg.payload_words, dense=msg.dense
        )
    k = c.keep_count(d)
    if c.kind == "top_k":
        # stable sort on -|v| keeps the lower index among equal magnitudes
        order = np.argsort(-np.abs(v), kind="stable")[:k]
        idx = np.sort(order)
        return CompressedVector(d, idx.astype(np.int64), v[idx].copy(), 2 * k)
    # rand_k, scaled by d/k so the reconstruction is unbiased
    if rng is None:
        raise ConfigError("rand_k compression requires a random generator")
    idx = np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)
    return CompressedVector(d, idx, v[idx] * (d / k), 2 * k)


def decompress(msg: CompressedVector) -> np.ndarray:
    out = np.zeros(msg.dimension, dtype=np.float64)
    out[msg.indices] = msg.values
    return out


def payload_words(msg: CompressedVector) -> int:
    return msg.payload_words


def compress_rows(
    c: Compressor,
    rows: np.ndarray,
    rngs: "list[np.random.Generator] | None" = None,
) -> tuple[np.ndarray, int]:
    """Compress each row of ``rows`` (one message per node) and return
    the scattered dense reconstruction plus total payload words.

    Bitwise identical to calling compress/decompress row by row; top_k
    takes a vectorized path since it needs no randomness.
    """
    rows = np.asarray(rows, dtype=np.float64)
    m, d = rows.shape
    if c.kind == "top_k":
        k = c.keep_count(d)
        order = np.argsort(-np.abs(rows), axis=1, kind="stable")[:, :k]
        out = np.zeros_like(rows)
        np.put_along_axis(out, order, np.take_along_axis(rows, order, axis=1), axis=1)
        return out, m * 2 * k
    if c.kind == "rescaled" and c.inner.kind == "top_k":
        out, words = compress_rows(c.inner, rows)
        out *= 1.0 / (2.0 - c.inner.delta_c)
        return out, words
    if c.is_identity:
        return rows.copy(), m * d
    out = np.zeros_like(rows)
    words = 0
    for i in range(m):
        msg = compress(c, rows[i], None if rngs is None else rngs[i])
        out[i, msg.indices] = msg.values
        words += msg.payload_words
    return out, words


@dataclass(frozen=True)
class SuiteRow:
    kind: str
    dim: int
    keep: int
    worst_ratio: float
    mean_ratio: float
    bound: float
    bound_type: str  # "per-draw" or "mean"
    violations: int


def _ratio_bound(c: Compressor, dim: int) -> tuple[float, str]:
    if c.kind == "identity":
        return 0.0, "per-draw"
    if c.kind == "top_k":
        return 1.0 - c.keep_count(dim) / dim, "per-draw"
    if c.kind == "rand_k":
        return dim / c.keep_count(dim) - 1.0, "mean"
    # rescaled: expectation bound from the nominal inner parameter
    return 1.0 - 1.0 / (2.0 - c.inner.delta_c), "mean"


def contraction_suite(
    c: Compressor,
    dims: tuple[int, ...] = (8, 64, 500),
    trials: int = 1000,
    seed: int = 0,
    slack: float = 0.05,
) -> list[SuiteRow]:
    """Monte-Carlo check of the squared-error contraction claim.

    Draws standard Gaussian vectors and measures ||Q(v) - v||^2 / ||v||^2.
    Deterministic operators are held to their bound on every draw;
    randomized and rescaled ones to the bound plus ``slack`` on the mean
    (their guarantee is an expectation).
    """
    rng = np.random.default_rng(seed)
    out = []
    for dim in dims:
        bound, bound_type = _ratio_bound(c, dim)
        ratios = np.empty(trials)
        for t in range(trials):
            v = rng.standard_normal(dim)
            err = decompress(compress(c, v, rng)) - v
            ratios[t] = (err @ err) / (v @ v)
        worst = float(ratios.max())
        mean = float(ratios.mean())
        if bound_type == "per-draw":
            violations = int(np.sum(ratios > bound + 1e-12))
        else:
            violations = int(mean > bound + slack)
        out.append(
            SuiteRow(c.kind, dim, c.keep_count(dim), worst, mean, bound, bound_type, violations)
        )
    return out
