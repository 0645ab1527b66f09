"""Bilevel problem families.

Each node i holds a private pair of objectives: an upper-level loss
f_i(x, y) and a lower-level loss g_i(x, y), both smooth, with the
network-average lower objective strongly convex in y.  The network
minimizes

    (1/m) sum_i f_i(x, y*(x)),   y*(x) = argmin_y (1/m) sum_i g_i(x, y).

Solvers never see second derivatives.  The penalty trick replaces the
nested objective by min_y [f + lam (g - g*)], whose x-gradient needs
only first-order oracles evaluated at two lower-level solutions: the
penalized one (y) and the plain one (z):

    u_i = grad_x f_i(x, y) + lam (grad_x g_i(x, y) - grad_x g_i(x, z)).

Families:
  QuadraticBilevel     closed forms for every quantity; the verification
                       instance all oracle tests run against
  CoefficientTuning    per-feature ridge weights (upper) for a linear
                       classifier (lower), grad_x f = 0
  HyperRepresentation  shared linear backbone (upper) with per-node
                       classifier heads (lower)
"""

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset, HeterogeneousSplit, make_synthetic_classification, partition_heterogeneous
from .errors import ConfigError
from .rng import substream

__all__ = [
    "ProblemConstants",
    "BilevelProblem",
    "QuadraticBilevel",
    "CoefficientTuning",
    "HyperRepresentation",
    "make_quadratic_problem",
    "make_coefficient_tuning_problem",
    "make_hyper_representation_problem",
    "hypergradient_estimate",
    "hypergradient_estimate_all",
]

# exp() of anything above this would overflow float64; the regularizer
# gradient saturates instead
_EXP_CAP = 40.0


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness data consumed by the step-size schedule.

    mu                strong convexity of the average lower objective in y
    smooth_upper      gradient Lipschitz constant of f_i
    smooth_lower      gradient Lipschitz constant of g_i
    grad_bound_upper  bound on ||grad_y f_i|| over the region of interest
    hess_lip_lower    Lipschitz constant of the lower-level Hessian
    """

    mu: float
    smooth_upper: float
    smooth_lower: float
    grad_bound_upper: float
    hess_lip_lower: float = 0.0

    def ell(self) -> float:
        return max(
            self.grad_bound_upper, self.smooth_upper, self.smooth_lower, self.hess_lip_lower
        )

    def kappa(self) -> float:
        return self.ell() / self.mu


class BilevelProblem:
    """Interface shared by all families.  Subclasses fill in the
    per-node oracles; the stacked *_rows helpers default to loops."""

    m: int
    dim_x: int
    dim_y: int
    constants: "ProblemConstants | None" = None
    has_oracle: bool = False  # exact y*, psi, grad psi available

    # per-node values and gradients ------------------------------------
    def upper_value(self, i: int, x: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def lower_value(self, i: int, x: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def grad_x_upper(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_y_upper(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_x_lower(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_y_lower(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # stacked forms: row i evaluated at (X[i], Y[i]) --------------------
    def grad_y_lower_rows(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return np.stack([self.grad_y_lower(i, X[i], Y[i]) for i in range(self.m)])

    def grad_y_penalty_rows(self, X: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
        return np.stack(
            [
                self.grad_y_upper(i, X[i], Y[i]) + lam * self.grad_y_lower(i, X[i], Y[i])
                for i in range(self.m)
            ]
        )

    def grad_x_upper_rows(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return np.stack([self.grad_x_upper(i, X[i], Y[i]) for i in range(self.m)])

    def grad_x_lower_rows(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return np.stack([self.grad_x_lower(i, X[i], Y[i]) for i in range(self.m)])

    def upper_value_mean(self, X: np.ndarray, Y: np.ndarray) -> float:
        return float(np.mean([self.upper_value(i, X[i], Y[i]) for i in range(self.m)]))

    def lower_value_mean(self, X: np.ndarray, Y: np.ndarray) -> float:
        return float(np.mean([self.lower_value(i, X[i], Y[i]) for i in range(self.m)]))

    # exact oracles (quadratic family only) -----------------------------
    def lower_solution(self, X: np.ndarray) -> np.ndarray:
        """argmin_y (1/m) sum_i g_i(X[i], y); X may be (m, dim_x) or (dim_x,)."""
        raise NotImplementedError(f"{type(self).__name__} has no closed-form lower solution")

    def penalty_solution(self, X: np.ndarray, lam: float) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form penalty solution")

    def oracle_value(self, x: np.ndarray) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no exact objective oracle")

    def oracle_gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no exact gradient oracle")

    def penalty_value(self, x: np.ndarray, lam: float) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no exact penalty oracle")

    def penalty_gradient(self, x: np.ndarray, lam: float) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no exact penalty oracle")

    def task_metrics(self, x: np.ndarray, y: np.ndarray) -> dict:
        """Train/val loss and accuracy at the consensus point, when the
        family has data attached.  Empty dict otherwise."""
        return {}

    def _stack_x(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            return np.broadcast_to(X, (self.m, self.dim_x))
        return X


def hypergradient_estimate(
    problem: BilevelProblem, i: int, x: np.ndarray, y: np.ndarray, z: np.ndarray, lam: float
) -> np.ndarray:
    """Node i's first-order hypergradient from the two lower solutions.

    With y = z this reduces to grad_x f_i exactly; with exact solves the
    network mean differs from the true nested gradient by O(1/lam).
    """
    if lam <= 0:
        raise ConfigError(f"penalty coefficient must be positive, got {lam}")
    return problem.grad_x_upper(i, x, y) + lam * (
        problem.grad_x_lower(i, x, y) - problem.grad_x_lower(i, x, z)
    )


def hypergradient_estimate_all(
    problem: BilevelProblem, X: np.ndarray, Y: np.ndarray, Z: np.ndarray, lam: float
) -> np.ndarray:
    if lam <= 0:
        raise ConfigError(f"penalty coefficient must be positive, got {lam}")
    return problem.grad_x_upper_rows(X, Y) + lam * (
        problem.grad_x_lower_rows(X, Y) - problem.grad_x_lower_rows(X, Z)
    )


# ---------------------------------------------------------------------------
# quadratic verification instance


class QuadraticBilevel(BilevelProblem):
    """f_i = ||y - c_i||^2 / 2 + ||x||^2 / 2,  g_i = ||y - B_i x||^2 / 2.

    Everything is available in closed form:
      y*(x)            = Bbar x                     (consensus x)
      psi(x)           = ||x||^2/2 + (1/2m) sum_i ||Bbar x - c_i||^2
      grad psi(x)      = x + Bbar^T (Bbar x - cbar)
      y_lam*(x)        = (cbar + lam Bbar x) / (1 + lam)
      grad psi_lam(x)  = x + lam/(1+lam) Bbar^T (Bbar x - cbar)
    so the penalty bias is Bbar^T(Bbar x - cbar)/(1+lam), shrinking
    like 1/lam.  Heterogeneous per-node x is supported by replacing
    Bbar x with mean_i B_i x_i.
    """

    has_oracle = True

    def __init__(self, B: np.ndarray, c: np.ndarray):
        B = np.asarray(B, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        if B.ndim != 3 or c.ndim != 2 or B.shape[0] != c.shape[0] or B.shape[1] != c.shape[1]:
            raise ConfigError(f"inconsistent shapes B {B.shape}, c {c.shape}")
        self.B = B
        self.c = c
        self.m, self.dim_y, self.dim_x = B.shape
        self.B_bar = B.mean(axis=0)
        self.c_bar = c.mean(axis=0)
        smax = max(float(np.linalg.norm(B[i], 2)) for i in range(self.m))
        self.constants = ProblemConstants(
            mu=1.0,
            smooth_upper=1.0,
            smooth_lower=1.0 + smax**2,
            # ||grad_y f|| over the unit ball around the node targets
            grad_bound_upper=float(max(np.linalg.norm(c, axis=1).max(), 1.0)) + 1.0,
            hess_lip_lower=0.0,
        )

    # per-node oracles
    def upper_value(self, i, x, y):
        r = y - self.c[i]
        return 0.5 * float(r @ r) + 0.5 * float(x @ x)

    def lower_value(self, i, x, y):
        r = y - self.B[i] @ x
        return 0.5 * float(r @ r)

    def grad_x_upper(self, i, x, y):
        return np.asarray(x, dtype=np.float64).copy()

    def grad_y_upper(self, i, x, y):
        return y - self.c[i]

    def grad_x_lower(self, i, x, y):
        return -self.B[i].T @ (y - self.B[i] @ x)

    def grad_y_lower(self, i, x, y):
        return y - self.B[i] @ x

    # stacked fast paths
    def _Bx_rows(self, X):
        X = self._stack_x(X)
        return np.einsum("iyx,ix->iy", self.B, X)

    def grad_y_lower_rows(self, X, Y):
        return Y - self._Bx_rows(X)

    def grad_y_penalty_rows(self, X, Y, lam):
        return (Y - self.c) + lam * (Y - self._Bx_rows(X))

    def grad_x_upper_rows(self, X, Y):
        return self._stack_x(X).copy()

    def grad_x_lower_rows(self, X, Y):
        return -np.einsum("iyx,iy->ix", self.B, Y - self._Bx_rows(X))

    # exact oracles
    def lower_solution(self, X):
        return self._Bx_rows(X).mean(axis=0)

    def penalty_solution(self, X, lam):
        return (self.c_bar + lam * self._Bx_rows(X).mean(axis=0)) / (1.0 + lam)

    def oracle_value(self, x):
        res = self.B_bar @ x - self.c
        return 0.5 * float(x @ x) + 0.5 * float(np.mean(np.sum(res**2, axis=1)))

    def oracle_gradient(self, x):
        return x + self.B_bar.T @ (self.B_bar @ x - self.c_bar)

    def penalty_gradient(self, x, lam):
        return x + (lam / (1.0 + lam)) * self.B_bar.T @ (self.B_bar @ x - self.c_bar)

    def penalty_value(self, x, lam):
        X = self._stack_x(x)
        y_pen = self.penalty_solution(X, lam)
        y_low = self.lower_solution(X)
        val = 0.0
        for i in range(self.m):
            val += self.upper_value(i, X[i], y_pen) + lam * (
                self.lower_value(i, X[i], y_pen) - self.lower_value(i, X[i], y_low)
            )
        return val / self.m


def make_quadratic_problem(
    m: int = 10,
    dim_x: int = 8,
    dim_y: int = 6,
    seed: int = 0,
    coupling_spread: float = 0.3,
    target_spread: float = 0.5,
) -> QuadraticBilevel:
    """Seeded instance: per-node coupling B_i is a shared base plus node
    noise; per-node targets c_i are spread around zero."""
    rng = substream(seed, "problem", "quadratic")
    base = rng.standard_normal((dim_y, dim_x)) / np.sqrt(dim_x)
    B = base + coupling_spread * rng.standard_normal((m, dim_y, dim_x)) / np.sqrt(dim_x)
    c = target_spread * rng.standard_normal((m, dim_y))
    return QuadraticBilevel(B, c)


# ---------------------------------------------------------------------------
# cross-entropy machinery shared by the data-driven families


def _softmax_ce(A: np.ndarray, labels: np.ndarray, W: np.ndarray):
    """Mean cross-entropy of logits A @ W and its gradient in W."""
    n = A.shape[0]
    logits = A @ W
    logits -= logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    ll = logits[np.arange(n), labels] - np.log(expl.sum(axis=1))
    probs[np.arange(n), labels] -= 1.0
    return -float(ll.mean()), (A.T @ probs) / n


def _sigmoid_ce(A: np.ndarray, labels: np.ndarray, w: np.ndarray):
    """Binary cross-entropy of sigmoid(A @ w) against labels in {0, 1}."""
    n = A.shape[0]
    z = A @ w
    # log(1 + e^-|z|) + max(z, 0) - z*label, stable for large |z|
    val = float(np.mean(np.logaddexp(0.0, z) - z * labels))
    p = 1.0 / (1.0 + np.exp(-z))
    return val, A.T @ (p - labels) / n


def _estimate_sq_norm(mats) -> float:
    return max(float(np.linalg.norm(a, 2)) ** 2 for a in mats)


class _NodeData:
    """Per-node train/val feature blocks for one split."""

    def __init__(self, ds: Dataset, split: HeterogeneousSplit, val_fraction: float, seed: int):
        self.train_X, self.train_y = [], []
        self.val_X, self.val_y = [], []
        for i in range(split.m):
            idx = split.indices(i)
            rng = substream(seed, "valsplit", i)
            idx = idx[rng.permutation(idx.size)]
            n_val = max(1, int(round(val_fraction * idx.size))) if idx.size > 1 else 0
            val, train = idx[:n_val], idx[n_val:]
            if train.size == 0:  # tiny node: reuse the sample for both roles
                train = val
            self.train_X.append(ds.features[train])
            self.train_y.append(ds.labels[train])
            self.val_X.append(ds.features[val] if val.size else ds.features[train])
            self.val_y.append(ds.labels[val] if val.size else ds.labels[train])


# ---------------------------------------------------------------------------
# regularization-coefficient tuning


class CoefficientTuning(BilevelProblem):
    """Upper level tunes per-feature ridge strengths exp(x); lower level
    fits a linear classifier under them.

    g_i(x, y) = mean CE on node i's train split + y^T diag(exp(x)) y
    f_i(x, y) = mean CE on node i's validation split

    f has no direct x-dependence, so grad_x f_i = 0 and the entire
    hypergradient flows through the two lower-level solves.  For two
    classes y is a single sigmoid weight vector; otherwise one column
    per class, flattened.
    """

    def __init__(self, ds: Dataset, split: HeterogeneousSplit, val_fraction: float = 0.5, seed: int = 0):
        self.m = split.m
        self.n_classes = ds.n_classes
        self.n_features = ds.n_features
        self.binary = ds.n_classes == 2
        self.dim_x = ds.n_features
        self.dim_y = ds.n_features if self.binary else ds.n_features * ds.n_classes
        self.data = _NodeData(ds, split, val_fraction, seed)
        smooth_ce = _estimate_sq_norm(
            self.data.train_X[i] for i in range(self.m)
        ) / (2.0 * min(x.shape[0] for x in self.data.train_X))
        # mu, L quoted at the reference point x = 0 where exp(x) = 1
        self.constants = ProblemConstants(
            mu=2.0,
            smooth_upper=smooth_ce,
            smooth_lower=smooth_ce + 2.0,
            grad_bound_upper=float(
                max(np.abs(x).sum(axis=1).max() for x in self.data.val_X)
            ),
            hess_lip_lower=6.0 * smooth_ce,  # crude cubic-term estimate
        )

    def _mat(self, y):
        return y if self.binary else y.reshape(self.n_features, self.n_classes)

    def _ce(self, A, labels, y):
        if self.binary:
            return _sigmoid_ce(A, labels, y)
        val, grad = _softmax_ce(A, labels, self._mat(y))
        return val, grad.ravel()

    def _reg_weights(self, x):
        return np.exp(np.minimum(x, _EXP_CAP))

    def _reg_value(self, x, y) -> float:
        w = self._reg_weights(x)
        ym = self._mat(y)
        sq = ym**2 if self.binary else (ym**2).sum(axis=1)
        return float(w @ sq)

    def upper_value(self, i, x, y):
        return self._ce(self.data.val_X[i], self.data.val_y[i], y)[0]

    def lower_value(self, i, x, y):
        ce, _ = self._ce(self.data.train_X[i], self.data.train_y[i], y)
        return ce + self._reg_value(x, y)

    def grad_x_upper(self, i, x, y):
        return np.zeros(self.dim_x)

    def grad_y_upper(self, i, x, y):
        return self._ce(self.data.val_X[i], self.data.val_y[i], y)[1]

    def grad_x_lower(self, i, x, y):
        ym = self._mat(y)
        sq = ym**2 if self.binary else (ym**2).sum(axis=1)
        return self._reg_weights(x) * sq

    def grad_y_lower(self, i, x, y):
        _, g = self._ce(self.data.train_X[i], self.data.train_y[i], y)
        w = self._reg_weights(x)
        ym = self._mat(y)
        reg = 2.0 * w * ym if self.binary else (2.0 * w[:, None] * ym).ravel()
        return g + reg

    def task_metrics(self, x, y):
        train = np.mean(
            [self._ce(self.data.train_X[i], self.data.train_y[i], y)[0] for i in range(self.m)]
        )
        val = np.mean(
            [self._ce(self.data.val_X[i], self.data.val_y[i], y)[0] for i in range(self.m)]
        )
        hits = total = 0
        ym = self._mat(y)
        for i in range(self.m):
            A, lbl = self.data.val_X[i], self.data.val_y[i]
            pred = (A @ ym > 0).astype(np.int64) if self.binary else np.argmax(A @ ym, axis=1)
            hits += int((pred == lbl).sum())
            total += lbl.size
        return {
            "train_loss": float(train),
            "val_loss": float(val),
            "val_accuracy": hits / total,
        }


def make_coefficient_tuning_problem(
    m: int = 10,
    h: float = 0.8,
    n_samples: int = 2000,
    n_features: int = 500,
    n_classes: int = 10,
    seed: int = 0,
) -> CoefficientTuning:
    ds = make_synthetic_classification(
        n_samples=n_samples, n_features=n_features, n_classes=n_classes, seed=seed
    )
    split = partition_heterogeneous(ds.labels, m, h, seed)
    return CoefficientTuning(ds, split, seed=seed)


# ---------------------------------------------------------------------------
# hyper-representation


class HyperRepresentation(BilevelProblem):
    """Upper level learns a shared linear backbone, lower level fits a
    small classifier head on the shared representation.

    x flattens the backbone (hidden x features), y the head (hidden x
    classes).  g_i = train CE + ridge tau ||y||^2, f_i = val CE; unlike
    coefficient tuning, grad_x f_i is nonzero here.
    """

    def __init__(
        self,
        ds: Dataset,
        split: HeterogeneousSplit,
        hidden: int = 8,
        ridge: float = 1e-2,
        val_fraction: float = 0.5,
        seed: int = 0,
    ):
        self.m = split.m
        self.hidden = hidden
        self.n_classes = ds.n_classes
        self.n_features = ds.n_features
        self.ridge = float(ridge)
        self.dim_x = hidden * ds.n_features
        self.dim_y = hidden * ds.n_classes
        self.data = _NodeData(ds, split, val_fraction, seed)
        smooth_ce = _estimate_sq_norm(self.data.train_X[i] for i in range(self.m)) / (
            2.0 * min(x.shape[0] for x in self.data.train_X)
        )
        self.constants = ProblemConstants(
            mu=2.0 * self.ridge,
            smooth_upper=smooth_ce,
            smooth_lower=smooth_ce + 2.0 * self.ridge,
            grad_bound_upper=float(max(np.abs(x).sum(axis=1).max() for x in self.data.val_X)),
            hess_lip_lower=6.0 * smooth_ce,
        )

    def _backbone(self, x):
        return x.reshape(self.hidden, self.n_features)

    def _head(self, y):
        return y.reshape(self.hidden, self.n_classes)

    def _ce_and_grads(self, A, labels, x, y):
        """Returns (ce, grad_x, grad_y) of the mean CE term."""
        n = A.shape[0]
        Bk = self._backbone(x)
        H = self._head(y)
        R = A @ Bk.T
        logits = R @ H
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        probs = expl / expl.sum(axis=1, keepdims=True)
        ll = logits[np.arange(n), labels] - np.log(expl.sum(axis=1))
        probs[np.arange(n), labels] -= 1.0
        grad_head = R.T @ probs / n
        grad_backbone = (probs @ H.T).T @ A / n
        return -float(ll.mean()), grad_backbone.ravel(), grad_head.ravel()

    def upper_value(self, i, x, y):
        return self._ce_and_grads(self.data.val_X[i], self.data.val_y[i], x, y)[0]

    def lower_value(self, i, x, y):
        ce = self._ce_and_grads(self.data.train_X[i], self.data.train_y[i], x, y)[0]
        return ce + self.ridge * float(y @ y)

    def grad_x_upper(self, i, x, y):
        return self._ce_and_grads(self.data.val_X[i], self.data.val_y[i], x, y)[1]

    def grad_y_upper(self, i, x, y):
        return self._ce_and_grads(self.data.val_X[i], self.data.val_y[i], x, y)[2]

    def grad_x_lower(self, i, x, y):
        return self._ce_and_grads(self.data.train_X[i], self.data.train_y[i], x, y)[1]

    def grad_y_lower(self, i, x, y):
        g = self._ce_and_grads(self.data.train_X[i], self.data.train_y[i], x, y)[2]
        return g + 2.0 * self.ridge * y

    def task_metrics(self, x, y):
        Bk, H = self._backbone(x), self._head(y)
        train = np.mean(
            [
                self._ce_and_grads(self.data.train_X[i], self.data.train_y[i], x, y)[0]
                for i in range(self.m)
            ]
        )
        val = hits = total = 0.0
        vals = []
        for i in range(self.m):
            A, lbl = self.data.val_X[i], self.data.val_y[i]
            vals.append(self._ce_and_grads(A, lbl, x, y)[0])
            pred = np.argmax((A @ Bk.T) @ H, axis=1)
            hits += int((pred == lbl).sum())
            total += lbl.size
        return {
            "train_loss": float(train),
            "val_loss": float(np.mean(vals)),
            "val_accuracy": hits / total,
        }


def make_hyper_representation_problem(
    m: int = 10,
    h: float = 0.8,
    n_samples: int = 800,
    n_features: int = 20,
    n_classes: int = 8,
    hidden: int = 8,
    ridge: float = 1e-2,
    seed: int = 0,
) -> HyperRepresentation:
    ds = make_synthetic_classification(
        n_samples=n_samples,
        n_features=n_features,
        n_classes=n_classes,
        density=0.2,
        seed=seed,
    )
    split = partition_heterogeneous(ds.labels, m, h, seed)
    return HyperRepresentation(ds, split, hidden=hidden, ridge=ridge, seed=seed)
