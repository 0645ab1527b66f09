"""Outer loop: decentralized penalty-based bilevel optimization.

Each round every node takes one uncompressed gossip-plus-descent step
on its copy of the upper-level variable, re-solves the two lower-level
problems warm-started from the previous round (compressed gossip, see
``inner``), and refreshes a gradient tracker for the hypergradient

    u_i = grad_x f_i(x, y) + lam (grad_x g_i(x, y) - grad_x g_i(x, z))

where y approximates the penalized lower solution and z the plain one.
Upper-level messages (x and its tracker) are dense; all compression
happens inside the lower-level solves.

The network means obey exact recursions regardless of compression:
mean(x) moves by -eta_out * mean(s), and mean(s) equals the mean
hypergradient estimate as long as trackers start equal to it.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from .compression import Compressor
from .errors import ConfigError, DivergenceError, NumericError
from .inner import inner_init, inner_run, refresh_tracker
from .metrics import (
    CsvSink,
    PayloadLedger,
    RoundRecord,
    Stopwatch,
    snapshot_outer,
)
from .problems import BilevelProblem, ProblemConstants, hypergradient_estimate_all
from .rng import substream
from .topology import MixingMatrix

__all__ = [
    "RunConfig",
    "RunLog",
    "OuterState",
    "run",
    "default_schedule",
    "ScheduleCoefficients",
    "VARIANTS",
]

VARIANTS = ("c2dfb", "naive", "uncompressed")

# config variant token -> inner-loop communication scheme
_INNER_VARIANT = {"c2dfb": "reference", "naive": "naive", "uncompressed": "uncompressed"}


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters of one run.

    eta_in is the lower-level step size for the plain lower objective;
    the penalized solve uses eta_in / (1 + lam) since its smoothness
    grows with lam.  rounds = T outer rounds, inner_steps = K gossip
    steps per lower-level solve per round.
    """

    eta_in: float
    eta_out: float
    gamma_in: float
    gamma_out: float
    lam: float
    inner_steps: int
    rounds: int
    variant: str = "c2dfb"
    seed: int = 0
    init_scale: float = 0.5
    eps: float | None = None

    def validate(self) -> None:
        problems = []
        if not self.eta_in > 0:
            problems.append(f"eta_in must be positive, got {self.eta_in}")
        if not self.eta_out > 0:
            problems.append(f"eta_out must be positive, got {self.eta_out}")
        for name, g in (("gamma_in", self.gamma_in), ("gamma_out", self.gamma_out)):
            if not (0.0 < g <= 1.0):
                problems.append(f"{name} must lie in (0, 1], got {g}")
        if not self.lam > 0:
            problems.append(f"lam must be positive, got {self.lam}")
        if self.inner_steps < 1:
            problems.append(f"inner_steps must be at least 1, got {self.inner_steps}")
        if self.rounds < 0:
            problems.append(f"rounds must be nonnegative, got {self.rounds}")
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.init_scale < 0:
            problems.append(f"init_scale must be nonnegative, got {self.init_scale}")
        if self.eps is not None and not (0.0 < self.eps < 1.0):
            problems.append(f"eps must lie in (0, 1), got {self.eps}")
        if problems:
            raise ConfigError("; ".join(problems))

    def advisories(self, constants: ProblemConstants | None) -> list[str]:
        notes = []
        if constants is not None and self.lam < 2.0 * constants.smooth_upper / constants.mu:
            notes.append(
                f"lam = {self.lam:g} is below the recommended floor "
                f"2 L_upper / mu = {2.0 * constants.smooth_upper / constants.mu:g}; "
                "the penalty bias may dominate"
            )
        return notes

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScheduleCoefficients:
    """Proportionality constants of the default schedule."""

    c_lambda: float = 1.0
    c_steps: float = 1.0
    c_eta: float = 1.0
    c_gamma: float = 1.0


def default_schedule(
    eps: float,
    constants: ProblemConstants | None,
    rho: float,
    coeffs: ScheduleCoefficients = ScheduleCoefficients(),
) -> tuple[float, int, float, float]:
    """Accuracy-driven hyperparameters (lam, inner_steps, eta_out,
    gamma_out).

    lam grows like 1/eps so the penalty bias sits below the target;
    inner_steps ~ log(1/eps^4) holds the lower-level error at the same
    order; gamma_out ~ rho^2 and eta_out ~ gamma_out eps^2 / (l kappa)^..
    keep the consensus recursion contracting.  rho is the spectral gap
    of the mixing matrix.
    """
    if constants is None:
        raise ConfigError("constants unknown; supply manual hyperparameters")
    if not (0.0 < eps < 1.0):
        raise ConfigError(f"target accuracy eps must lie in (0, 1), got {eps}")
    if not (0.0 < rho <= 1.0):
        raise ConfigError(f"spectral gap rho must lie in (0, 1], got {rho}")
    ell = constants.ell()
    kappa = constants.kappa()
    lam = coeffs.c_lambda * ell * kappa**3 / eps
    steps = max(1, math.ceil(coeffs.c_steps * math.log(1.0 / eps**4)))
    gamma_out = min(1.0, coeffs.c_gamma * rho**2)
    eta_out = coeffs.c_eta * gamma_out * eps**2 / (ell**4 * kappa**6)
    return lam, steps, eta_out, gamma_out


class _PenaltyField:
    """Lower-level objective of the penalized solve: r_i(d) =
    f_i(x_i, d) + lam g_i(x_i, d), at frozen per-node x."""

    def __init__(self, problem: BilevelProblem, x_rows: np.ndarray, lam: float):
        self.problem = problem
        self.x_rows = x_rows
        self.lam = lam

    def grad_rows(self, d_rows: np.ndarray) -> np.ndarray:
        return self.problem.grad_y_penalty_rows(self.x_rows, d_rows, self.lam)

    def target(self):
        if not self.problem.has_oracle:
            return None
        return self.problem.penalty_solution(self.x_rows, self.lam)


class _LowerField:
    """Plain lower objective r_i(d) = g_i(x_i, d) at frozen x."""

    def __init__(self, problem: BilevelProblem, x_rows: np.ndarray):
        self.problem = problem
        self.x_rows = x_rows

    def grad_rows(self, d_rows: np.ndarray) -> np.ndarray:
        return self.problem.grad_y_lower_rows(self.x_rows, d_rows)

    def target(self):
        if not self.problem.has_oracle:
            return None
        return self.problem.lower_solution(self.x_rows)


@dataclass
class OuterState:
    x: np.ndarray  # (m, dim_x) upper-level iterates
    s: np.ndarray  # (m, dim_x) hypergradient trackers
    u: np.ndarray  # (m, dim_x) last hypergradient estimates
    y_state: object  # InnerState of the penalized solve
    z_state: object  # InnerState of the plain lower solve
    t: int = 0


@dataclass
class RunLog:
    records: list
    config: RunConfig
    ledger: PayloadLedger
    state: OuterState
    problem: BilevelProblem

    def x_bar(self) -> np.ndarray:
        return self.state.x.mean(axis=0)

    def summary(self) -> dict:
        last = self.records[-1]
        out = {
            "rounds": self.state.t,
            "payload_words": {
                "outer": self.ledger.total("outer"),
                "inner_y": self.ledger.total("inner_y"),
                "inner_z": self.ledger.total("inner_z"),
                "total": self.ledger.grand_total(),
            },
            "final": {
                name: getattr(last, name)
                for name in (
                    "omega1_outer",
                    "omega2_outer",
                    "value_surrogate",
                    "grad_norm_oracle",
                    "tracker_norm",
                    "train_loss",
                    "val_loss",
                    "val_accuracy",
                )
            },
            "wall_seconds": last.wall_seconds,
        }
        if self.problem.has_oracle:
            x_bar = self.x_bar()
            bias = self.problem.penalty_gradient(x_bar, self.config.lam) - self.problem.oracle_gradient(x_bar)
            out["final"]["hypergrad_bias"] = float(np.linalg.norm(bias))
        return out


def _value_part(problem: BilevelProblem, st: OuterState, lam: float) -> float:
    """Objective value at the consensus means: the exact nested value
    when an oracle exists, otherwise the penalty value at the current
    lower-level iterates (labeled a surrogate in the log schema)."""
    x_bar = st.x.mean(axis=0)
    if problem.has_oracle:
        return problem.oracle_value(x_bar)
    y_bar = st.y_state.d.mean(axis=0)
    z_bar = st.z_state.d.mean(axis=0)
    x_rows = np.broadcast_to(x_bar, (problem.m, x_bar.size))
    y_rows = np.broadcast_to(y_bar, (problem.m, y_bar.size))
    z_rows = np.broadcast_to(z_bar, (problem.m, z_bar.size))
    return problem.upper_value_mean(x_rows, y_rows) + lam * (
        problem.lower_value_mean(x_rows, y_rows) - problem.lower_value_mean(x_rows, z_rows)
    )


def _record(problem, st, cfg, ledger, watch) -> RoundRecord:
    snap = snapshot_outer(st.x, st.s, _value_part(problem, st, cfg.lam), cfg.eta_out)
    x_bar = st.x.mean(axis=0)
    grad_norm = None
    if problem.has_oracle:
        grad_norm = float(np.linalg.norm(problem.oracle_gradient(x_bar)))
    task = problem.task_metrics(x_bar, st.y_state.d.mean(axis=0))
    return RoundRecord(
        t=st.t,
        payload_words_outer=ledger.total("outer"),
        payload_words_inner_y=ledger.total("inner_y"),
        payload_words_inner_z=ledger.total("inner_z"),
        payload_words_total=ledger.grand_total(),
        wall_seconds=watch.seconds(),
        omega1_outer=snap.spread_x,
        omega2_outer=snap.spread_s,
        value_surrogate=snap.value,
        grad_norm_oracle=grad_norm,
        tracker_norm=snap.tracker_norm,
        train_loss=task.get("train_loss"),
        val_loss=task.get("val_loss"),
        val_accuracy=task.get("val_accuracy"),
    )


def _compressor_rngs(compressor: Compressor, seed: int, channel: str, t: int, m: int):
    if not (
        compressor.kind == "rand_k"
        or (compressor.kind == "rescaled" and compressor.inner.kind == "rand_k")
    ):
        return None
    return [substream(seed, "compressor", channel, t, i) for i in range(m)]


def run(
    cfg: RunConfig,
    problem: BilevelProblem,
    w: MixingMatrix,
    compressor: Compressor,
    sink: CsvSink | None = None,
) -> RunLog:
    """Simulate ``cfg.rounds`` outer rounds and return the full log.

    Identical (cfg, problem, topology) reproduce the trajectory exactly;
    only the wall_seconds column varies between repeats.
    """
    cfg.validate()
    watch = Stopwatch()
    ledger = PayloadLedger()
    m = problem.m
    if w.m != m:
        raise ConfigError(f"{w.m}-node mixing matrix for {m}-node problem")
    wm = w.matrix
    inner_variant = _INNER_VARIANT[cfg.variant]

    # every node starts from the same point: disagreement at t=0 would be
    # amplified by the penalty weight in the hypergradients before any
    # gossip can damp it, so spread is left to build up only from the
    # (tracked, compressed) heterogeneity between local objectives
    x = np.tile(cfg.init_scale * substream(cfg.seed, "init", "x").standard_normal(problem.dim_x), (m, 1))
    y0 = np.tile(cfg.init_scale * substream(cfg.seed, "init", "y").standard_normal(problem.dim_y), (m, 1))
    y_state = inner_init(
        _PenaltyField(problem, x, cfg.lam), y0, wm, compressor, inner_variant,
        ledger, "inner_y",
    )
    # the plain lower solve starts from the same point, which makes the
    # initial hypergradient collapse to grad_x f exactly
    z_state = inner_init(
        _LowerField(problem, x), y0.copy(), wm, compressor, inner_variant,
        ledger, "inner_z",
    )
    u = hypergradient_estimate_all(problem, x, y_state.d, z_state.d, cfg.lam)
    st = OuterState(x=x, s=u.copy(), u=u, y_state=y_state, z_state=z_state, t=0)

    records = [_record(problem, st, cfg, ledger, watch)]
    if sink is not None:
        sink.write(records[-1])

    for t in range(1, cfg.rounds + 1):
        # upper-level gossip step; x and its tracker travel dense
        x_new = st.x + cfg.gamma_out * (wm @ st.x - st.x) - cfg.eta_out * st.s
        ledger.add_many("outer", problem.dim_x, m)
        if not np.isfinite(x_new).all():
            node = int(np.flatnonzero(~np.isfinite(x_new).all(axis=1))[0])
            raise NumericError(f"non-finite upper iterate at node {node}, round {t}")

        y_field = _PenaltyField(problem, x_new, cfg.lam)
        z_field = _LowerField(problem, x_new)
        try:
            refresh_tracker(st.y_state, y_field)
            inner_run(
                y_field,
                st.y_state,
                wm,
                cfg.gamma_in,
                cfg.eta_in / (1.0 + cfg.lam),
                cfg.inner_steps,
                compressor,
                _compressor_rngs(compressor, cfg.seed, "y", t, m),
                ledger,
                "inner_y",
            )
            refresh_tracker(st.z_state, z_field)
            inner_run(
                z_field,
                st.z_state,
                wm,
                cfg.gamma_in,
                cfg.eta_in,
                cfg.inner_steps,
                compressor,
                _compressor_rngs(compressor, cfg.seed, "z", t, m),
                ledger,
                "inner_z",
            )
        except DivergenceError as e:
            raise DivergenceError(f"round {t}: {e}") from e

        u_new = hypergradient_estimate_all(problem, x_new, st.y_state.d, st.z_state.d, cfg.lam)
        s_new = st.s + cfg.gamma_out * (wm @ st.s - st.s) + u_new - st.u
        ledger.add_many("outer", problem.dim_x, m)

        st.x, st.s, st.u, st.t = x_new, s_new, u_new, t
        records.append(_record(problem, st, cfg, ledger, watch))
        if sink is not None:
            sink.write(records[-1])

    ledger.audit()
    return RunLog(records=records, config=cfg, ledger=ledger, state=st, problem=problem)
