"""Gossip topologies and their mixing matrices.

A mixing matrix W encodes one communication round: node i averages the
values of its neighbors with weights W[i, j].  All solvers in this
package assume W is symmetric, doubly stochastic, has a positive
diagonal, and corresponds to a connected graph, so the second-largest
eigenvalue magnitude is strictly below one.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import substream

__all__ = [
    "TopologySpec",
    "MixingMatrix",
    "build_mixing_matrix",
    "spectral_gap",
    "effective_matrix",
]

KINDS = ("ring", "two_hop", "erdos_renyi", "complete", "custom")

# Tolerances for accepting a matrix as doubly stochastic / symmetric.
_STOCHASTIC_TOL = 1e-12
_CONNECTIVITY_TOL = 1e-12

_ER_MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class TopologySpec:
    """Declarative description of a communication graph.

    kind         one of "ring", "two_hop", "erdos_renyi", "complete", "custom"
    m            number of nodes, m >= 1
    p            edge probability, required for erdos_renyi
    seed         seed for random graphs, required for erdos_renyi
    custom_edges explicit undirected edge list, required for kind "custom"
    """

    kind: str
    m: int
    p: float | None = None
    seed: int | None = None
    custom_edges: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(
                f"unknown topology kind {self.kind!r}; expected one of {KINDS}"
            )
        if not isinstance(self.m, (int, np.integer)) or isinstance(self.m, bool):
            raise ConfigError(f"node count m must be an integer, got {self.m!r}")
        if self.m < 1:
            raise ConfigError(f"node count m must be >= 1, got {self.m}")
        if self.kind == "erdos_renyi":
            if self.p is None or not (0.0 < float(self.p) <= 1.0):
                raise ConfigError(
                    f"erdos_renyi requires edge probability p in (0, 1], got {self.p!r}"
                )
            if self.seed is None:
                raise ConfigError("erdos_renyi requires an explicit seed")
        if self.kind == "custom":
            if not self.custom_edges:
                raise ConfigError("custom topology requires a non-empty edge list")
            for e in self.custom_edges:
                if len(e) != 2:
                    raise ConfigError(f"edge {e!r} is not a pair")
                i, j = e
                if not (0 <= i < self.m and 0 <= j < self.m):
                    raise ConfigError(f"edge {e!r} out of range for m={self.m}")
                if i == j:
                    raise ConfigError(f"self-loop {e!r} not allowed in edge list")


def _ring_edges(m: int) -> set[frozenset[int]]:
    return {frozenset((i, (i + 1) % m)) for i in range(m) if i != (i + 1) % m}


def _two_hop_edges(m: int) -> set[frozenset[int]]:
    edges = _ring_edges(m)
    edges |= {frozenset((i, (i + 2) % m)) for i in range(m) if i != (i + 2) % m}
    return edges


def _complete_edges(m: int) -> set[frozenset[int]]:
    return {frozenset((i, j)) for i in range(m) for j in range(i + 1, m)}


def _er_edges(m: int, p: float, rng: np.random.Generator) -> set[frozenset[int]]:
    edges = set()
    for i in range(m):
        for j in range(i + 1, m):
            if rng.random() < p:
                edges.add(frozenset((i, j)))
    return edges


def _is_connected(m: int, edges: set[frozenset[int]]) -> bool:
    if m == 1:
        return True
    adj = [[] for _ in range(m)]
    for e in edges:
        i, j = tuple(e)
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == m


def _edge_set(spec: TopologySpec) -> set[frozenset[int]]:
    if spec.kind == "ring":
        return _ring_edges(spec.m)
    if spec.kind == "two_hop":
        return _two_hop_edges(spec.m)
    if spec.kind == "complete":
        return _complete_edges(spec.m)
    if spec.kind == "custom":
        edges = {frozenset(e) for e in spec.custom_edges}
        if not _is_connected(spec.m, edges):
            raise ConfigError("custom edge list does not form a connected graph")
        return edges
    # erdos_renyi: resample until connected, each attempt on its own stream
    for attempt in range(_ER_MAX_ATTEMPTS):
        edges = _er_edges(spec.m, float(spec.p), substream(spec.seed, "er", attempt))
        if _is_connected(spec.m, edges):
            return edges
    raise ConfigError(
        f"no connected Erdos-Renyi graph with m={spec.m}, p={spec.p} "
        f"after {_ER_MAX_ATTEMPTS} attempts (seed {spec.seed})"
    )


@dataclass(frozen=True)
class MixingMatrix:
    """A validated gossip matrix with its spectral summary.

    second_eigen  max(|lambda_2|, |lambda_m|), strictly below 1 for
                  connected graphs
    spectral_gap  1 - second_eigen
    mixing_norm   squared operator norm of W - I, at most 4
    """

    matrix: np.ndarray
    second_eigen: float
    spectral_gap: float
    mixing_norm: float
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, w: np.ndarray) -> "MixingMatrix":
        w = np.asarray(w, dtype=np.float64)
        _validate_stochastic(w)
        eig = np.linalg.eigvalsh(w)
        delta = _second_eigen(eig)
        if delta >= 1.0 - _CONNECTIVITY_TOL:
            raise ConfigError(
                "mixing matrix has unit second eigenvalue magnitude "
                "(disconnected graph or W = I)"
            )
        return cls(
            matrix=w,
            second_eigen=float(delta),
            spectral_gap=float(1.0 - delta),
            mixing_norm=float(np.max(np.abs(eig - 1.0)) ** 2),
            eigenvalues=eig,
        )


def _validate_stochastic(w: np.ndarray) -> None:
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ConfigError(f"mixing matrix must be square, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ConfigError("mixing matrix contains non-finite entries")
    if np.max(np.abs(w - w.T)) > _STOCHASTIC_TOL:
        raise ConfigError("mixing matrix is not symmetric")
    if np.min(w) < -_STOCHASTIC_TOL:
        raise ConfigError("mixing matrix has negative entries")
    rows = w.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > _STOCHASTIC_TOL:
        raise ConfigError("mixing matrix rows do not sum to 1")
    if np.min(np.diag(w)) <= 0.0:
        raise ConfigError("mixing matrix diagonal must be strictly positive")


def _second_eigen(eig: np.ndarray) -> float:
    # eigvalsh returns ascending order; drop the single leading eigenvalue 1
    if eig.size == 1:
        return 0.0
    return max(abs(float(eig[0])), abs(float(eig[-2])))


def build_mixing_matrix(spec: TopologySpec) -> MixingMatrix:
    """Metropolis weights on the graph described by ``spec``.

    Edge (i, j) gets weight 1 / (1 + max(deg_i, deg_j)); the diagonal
    absorbs the remainder, which keeps it strictly positive.  The result
    is symmetric and doubly stochastic by construction.
    """
    edges = _edge_set(spec)
    m = spec.m
    deg = np.zeros(m, dtype=np.int64)
    for e in edges:
        i, j = tuple(e)
        deg[i] += 1
        deg[j] += 1
    w = np.zeros((m, m), dtype=np.float64)
    for e in edges:
        i, j = tuple(e)
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    for i in range(m):
        w[i, i] = 1.0 - w[i].sum()
    return MixingMatrix.from_matrix(w)


def spectral_gap(w: np.ndarray | MixingMatrix) -> float:
    """1 minus the second-largest eigenvalue magnitude of ``w``.

    Returns 0.0 for matrices with no mixing (e.g. the identity); raises
    ConfigError for non-symmetric input.
    """
    if isinstance(w, MixingMatrix):
        return w.spectral_gap
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {w.shape}")
    if np.max(np.abs(w - w.T)) > _STOCHASTIC_TOL:
        raise ConfigError("spectral_gap requires a symmetric matrix")
    return float(1.0 - _second_eigen(np.linalg.eigvalsh(w)))


def effective_matrix(w: MixingMatrix, gamma: float) -> MixingMatrix:
    """The matrix actually applied by a damped gossip step,
    I + gamma (W - I), revalidated with fresh spectral data.

    For gamma in (0, 1] its spectral gap is at least gamma times the
    gap of W (eigenvalues map to 1 - gamma (1 - lambda)).
    """
    if not (0.0 < gamma <= 1.0):
        raise ConfigError(f"mixing step gamma must lie in (0, 1], got {gamma}")
    m = w.matrix.shape[0]
    return MixingMatrix.from_matrix(np.eye(m) + gamma * (w.matrix - np.eye(m)))
