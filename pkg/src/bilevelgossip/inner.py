"""Compressed gradient-tracking gossip for strongly convex averages.

The loop minimizes (1/m) sum_i r_i(d) over a network, keeping one
iterate d_i and one gradient tracker s_i per node.  Communication is
compressed against reference points: every node keeps a copy ref_d of
what its neighbors believe its iterate to be, transmits only the
compressed residual Q(d_new - ref_d), and accumulates the residuals it
receives into agg_d, a running neighbor-weighted sum of references
(own term included).  The tracker s uses the same machinery.  Per step
each node transmits exactly two messages.

Variants:
  reference      residual compression as above
  naive          transmit Q(d + e) directly, carrying the compression
                 error e locally to the next step (error feedback)
  uncompressed   plain gradient-tracking gossip; also what the other
                 two variants collapse to under the identity compressor,
                 so all three produce identical trajectories there

Two exact properties hold for every variant and compressor, because
row sums of W - I vanish: the network mean obeys
mean(d_new) = mean(d) - eta * mean(s), and mean(s) equals the mean of
the current gradients whenever the trackers start there.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .compression import Compressor, compress_rows
from .errors import ConfigError, DivergenceError, NumericError
from .metrics import PayloadLedger

__all__ = ["InnerState", "InnerReport", "inner_init", "inner_step", "inner_run", "refresh_tracker"]

_DIVERGENCE_WINDOW = 20
_DIVERGENCE_FACTOR = 10.0
_GAP_FLOOR = 1e-24


@dataclass
class InnerState:
    """Per-node solver state, all arrays (m, dim).

    reference variant: ref_d/ref_s are the references neighbors hold
    (seeded by one dense exchange at init), agg_d/agg_s the accumulated
    neighbor-weighted reference sums.
    naive variant: err_d/err_s are the error-feedback memories.
    uncompressed: no auxiliary state, gossip reads current values.
    """

    variant: str
    d: np.ndarray
    s: np.ndarray
    grad: np.ndarray
    ref_d: np.ndarray | None = None
    ref_s: np.ndarray | None = None
    agg_d: np.ndarray | None = None
    agg_s: np.ndarray | None = None
    err_d: np.ndarray | None = None
    err_s: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.d.shape[0]

    @property
    def dim(self) -> int:
        return self.d.shape[1]


@dataclass
class InnerReport:
    """Per-step diagnostics; entry 0 is the state before the first step.

    gap             (1/m) sum_i ||d_i - d*||^2 when the field knows its
                    optimum; includes consensus error, not just the mean
    ref_err_d/s     ||d - ref_d||^2 (error-feedback memory norm for the
                    naive variant; exactly zero for uncompressed)
    spread_d/s      ||d - mean(d)||^2, consensus errors
    payload_words   cumulative words transmitted by the steps; entry 0
                    is zero (the one-off dense init exchange of the
                    reference variant is charged to the caller's ledger)
    """

    gap: list = dataclass_field(default_factory=list)
    ref_err_d: list = dataclass_field(default_factory=list)
    spread_d: list = dataclass_field(default_factory=list)
    ref_err_s: list = dataclass_field(default_factory=list)
    spread_s: list = dataclass_field(default_factory=list)
    payload_words: list = dataclass_field(default_factory=list)

    def record(self, st: InnerState, target, words: int) -> None:
        # overflow to inf is fine here: diverging runs are caught by the
        # finiteness/divergence checks, the diagnostics just report
        with np.errstate(over="ignore", invalid="ignore"):
            dbar = st.d.mean(axis=0)
            if target is None:
                self.gap.append(np.nan)
            else:
                self.gap.append(float(np.mean(np.sum((st.d - target) ** 2, axis=1))))
            self.spread_d.append(float(np.sum((st.d - dbar) ** 2)))
            sbar = st.s.mean(axis=0)
            self.spread_s.append(float(np.sum((st.s - sbar) ** 2)))
            if st.variant == "naive":
                self.ref_err_d.append(float(np.sum(st.err_d**2)))
                self.ref_err_s.append(float(np.sum(st.err_s**2)))
            elif st.variant == "uncompressed":
                self.ref_err_d.append(0.0)
                self.ref_err_s.append(0.0)
            else:
                self.ref_err_d.append(float(np.sum((st.d - st.ref_d) ** 2)))
                self.ref_err_s.append(float(np.sum((st.s - st.ref_s) ** 2)))
        self.payload_words.append(words)


def _resolve_variant(variant: str, compressor: Compressor) -> str:
    if variant not in ("reference", "naive", "uncompressed"):
        raise ConfigError(f"unknown inner variant {variant!r}")
    # identity compression makes every variant the plain uncompressed loop
    if compressor.is_identity:
        return "uncompressed"
    return variant


def inner_init(
    grad_field,
    d0: np.ndarray,
    w: np.ndarray,
    compressor: Compressor,
    variant: str = "reference",
    ledger: PayloadLedger | None = None,
    channel: str = "inner",
) -> InnerState:
    """Cold start: trackers equal local gradients.

    The reference variant seeds its reference points with one dense
    exchange (each node broadcasts d and s once, counted in the ledger)
    so that later residuals are increments, never whole vectors.  The
    other variants keep no references and communicate nothing here.
    """
    d0 = np.asarray(d0, dtype=np.float64)
    if d0.ndim != 2:
        raise ConfigError(f"initial iterates must be (m, dim), got shape {d0.shape}")
    if w.shape[0] != d0.shape[0]:
        raise ConfigError(f"{w.shape[0]}-node mixing matrix vs {d0.shape[0]}-row state")
    variant = _resolve_variant(variant, compressor)
    grad = np.asarray(grad_field.grad_rows(d0), dtype=np.float64)
    st = InnerState(variant=variant, d=d0.copy(), s=grad.copy(), grad=grad.copy())
    if variant == "naive":
        st.err_d = np.zeros_like(st.d)
        st.err_s = np.zeros_like(st.s)
    elif variant == "reference":
        st.ref_d = st.d.copy()
        st.ref_s = st.s.copy()
        st.agg_d = w @ st.ref_d
        st.agg_s = w @ st.ref_s
        m, dim = st.d.shape
        if ledger is not None:
            ledger.add_many(channel, dim, m)
            ledger.add_many(channel, dim, m)
    return st


def refresh_tracker(st: InnerState, grad_field) -> None:
    """Point a warm state at a new objective: the trackers absorb the
    gradient change so their mean still equals the mean gradient.  No
    communication happens; reference copies stay where neighbors left
    them (the next residuals absorb the shift)."""
    grad = np.asarray(grad_field.grad_rows(st.d), dtype=np.float64)
    st.s += grad - st.grad
    st.grad = grad


def inner_step(
    st: InnerState,
    grad_field,
    w: np.ndarray,
    gamma: float,
    eta: float,
    compressor: Compressor,
    rngs=None,
    ledger: PayloadLedger | None = None,
    channel: str = "inner",
) -> int:
    """One gossip step; mutates ``st`` and returns words transmitted."""
    if not (0.0 < gamma <= 1.0):
        raise ConfigError(f"mixing step gamma must lie in (0, 1], got {gamma}")
    if eta <= 0.0:
        raise ConfigError(f"step size eta must be positive, got {eta}")
    if st.variant == "uncompressed":
        words = _step_uncompressed(st, grad_field, w, gamma, eta)
    elif st.variant == "naive":
        words = _step_naive(st, grad_field, w, gamma, eta, compressor, rngs)
    else:
        words = _step_reference(st, grad_field, w, gamma, eta, compressor, rngs)
    # double entry: what the messages actually carried must equal what
    # the operator shape predicts, 2m messages per step; the dense
    # baseline ignores the compressor and always sends full vectors
    if st.variant == "uncompressed":
        per_message = st.dim
    else:
        per_message = compressor.words_per_message(st.dim)
    if words != 2 * st.m * per_message:
        raise AssertionError(
            f"payload mismatch: counted {words} words, expected "
            f"{2 * st.m} messages of {per_message}"
        )
    if ledger is not None:
        ledger.add_many(channel, per_message, 2 * st.m)
    return words


def _step_reference(st, grad_field, w, gamma, eta, compressor, rngs) -> int:
    # iterate update sees only the accumulated references, never raw
    # neighbor values
    d_new = st.d + gamma * (st.agg_d - st.ref_d) - eta * st.s
    q_d, words_d = compress_rows(compressor, d_new - st.ref_d, rngs)
    st.ref_d += q_d
    st.agg_d += w @ q_d
    grad_new = grad_field.grad_rows(d_new)
    s_new = st.s + gamma * (st.agg_s - st.ref_s) + grad_new - st.grad
    q_s, words_s = compress_rows(compressor, s_new - st.ref_s, rngs)
    st.ref_s += q_s
    st.agg_s += w @ q_s
    st.d, st.s, st.grad = d_new, s_new, grad_new
    return words_d + words_s


def _step_uncompressed(st, grad_field, w, gamma, eta) -> int:
    # each node broadcasts its current d and s dense, two messages
    d_new = st.d + gamma * (w @ st.d - st.d) - eta * st.s
    grad_new = grad_field.grad_rows(d_new)
    s_new = st.s + gamma * (w @ st.s - st.s) + grad_new - st.grad
    st.d, st.s, st.grad = d_new, s_new, grad_new
    m, dim = st.d.shape
    return 2 * m * dim


def _step_naive(st, grad_field, w, gamma, eta, compressor, rngs) -> int:
    # compress the compensated parameters themselves; the leftover stays
    # in local memory for the next step
    p = st.d + st.err_d
    q_p, words_d = compress_rows(compressor, p, rngs)
    st.err_d = p - q_p
    d_new = st.d + gamma * (w @ q_p - q_p) - eta * st.s
    grad_new = grad_field.grad_rows(d_new)
    p_s = st.s + st.err_s
    q_ps, words_s = compress_rows(compressor, p_s, rngs)
    st.err_s = p_s - q_ps
    s_new = st.s + gamma * (w @ q_ps - q_ps) + grad_new - st.grad
    st.d, st.s, st.grad = d_new, s_new, grad_new
    return words_d + words_s


def _check_finite(st: InnerState, k: int) -> None:
    for name, arr in (("iterate", st.d), ("tracker", st.s), ("gradient", st.grad)):
        bad = ~np.isfinite(arr).all(axis=1)
        if bad.any():
            node = int(np.flatnonzero(bad)[0])
            raise NumericError(f"non-finite {name} at node {node}, inner step {k}")


def inner_run(
    grad_field,
    st: InnerState,
    w: np.ndarray,
    gamma: float,
    eta: float,
    steps: int,
    compressor: Compressor,
    rngs=None,
    ledger: PayloadLedger | None = None,
    channel: str = "inner",
    detect_divergence: bool = True,
) -> InnerReport:
    """Run ``steps`` gossip steps, recording diagnostics before the
    first step and after each one."""
    if steps < 1:
        raise ConfigError(f"step count must be at least 1, got {steps}")
    target = grad_field.target() if hasattr(grad_field, "target") else None
    report = InnerReport()
    words_total = 0
    report.record(st, target, words_total)
    for k in range(steps):
        words_total += inner_step(st, grad_field, w, gamma, eta, compressor, rngs, ledger, channel)
        _check_finite(st, k + 1)
        report.record(st, target, words_total)
        gaps = report.gap
        if (
            detect_divergence
            and target is not None
            and len(gaps) > _DIVERGENCE_WINDOW
            and gaps[-1] > _GAP_FLOOR
            and gaps[-1] > _DIVERGENCE_FACTOR * gaps[-1 - _DIVERGENCE_WINDOW]
        ):
            raise DivergenceError(
                f"inner gap grew {gaps[-1] / gaps[-1 - _DIVERGENCE_WINDOW]:.2g}x "
                f"over {_DIVERGENCE_WINDOW} steps (step {k + 1}); "
                "step sizes eta/gamma are likely too large"
            )
    return report
