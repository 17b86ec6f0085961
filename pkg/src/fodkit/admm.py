"""ADMM for the inequality-constrained lasso.

Solves::

    minimize    0.5 * ||A x - b||^2 + lam * sum_i p_i |x_i|
    subject to  C x <= d

with per-coordinate penalty weights ``p`` (all ones unless given)
and the splitting ``x - z = 0``, ``C x + w - d = 0``, ``w >= 0`` and scaled
duals ``u`` and ``t``. Stopping uses the primal/dual residual norms against
``eps_pri`` / ``eps_dual`` built from absolute and relative tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, NumericalError

__all__ = [
    "FactoredMatrix",
    "ConstrainedLasso",
    "AdmmConfig",
    "AdmmSolution",
    "Factorization",
    "factorize",
    "soft_threshold",
    "solve",
]


class FactoredMatrix:
    """Dense product ``left @ right`` kept in factored form.

    Supports ``@`` with vectors and matrices, ``.T`` and ``.shape`` so the
    solver can treat it like an ``ndarray``.
    """

    __array_priority__ = 20

    def __init__(self, left, right):
        self.left = np.asarray(left, dtype=float)
        self.right = np.asarray(right, dtype=float)
        if self.left.ndim != 2 or self.right.ndim != 2 or self.left.shape[1] != self.right.shape[0]:
            raise ConfigurationError("factor shapes do not chain")
        self._gram = None

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[1])

    @property
    def T(self) -> "FactoredMatrix":
        return FactoredMatrix(self.right.T, self.left.T)

    def __matmul__(self, other):
        return self.left @ (self.right @ other)

    def toarray(self) -> np.ndarray:
        return self.left @ self.right

    def left_gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = self.left.T @ self.left
        return self._gram


def _dense(m) -> np.ndarray:
    return m.toarray() if isinstance(m, FactoredMatrix) else np.asarray(m, dtype=float)


@dataclass(frozen=True, eq=False)
class ConstrainedLasso:
    a: object
    b: np.ndarray
    c: object
    d: np.ndarray
    penalty_weights: np.ndarray | None = None

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        d = np.asarray(self.d, dtype=float)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "d", d)
        if not isinstance(self.a, FactoredMatrix):
            object.__setattr__(self, "a", np.atleast_2d(np.asarray(self.a, dtype=float)))
        if not isinstance(self.c, FactoredMatrix):
            object.__setattr__(self, "c", np.atleast_2d(np.asarray(self.c, dtype=float)))
        m, n = self.a.shape
        l, n2 = self.c.shape
        if min(m, n, l) < 1 or n2 != n or b.shape != (m,) or d.shape != (l,):
            raise ConfigurationError(
                f"inconsistent dimensions: A{self.a.shape} b{b.shape} C{self.c.shape} d{d.shape}"
            )
        if self.penalty_weights is not None:
            pw = np.asarray(self.penalty_weights, dtype=float)
            if pw.shape != (n,) or np.any(pw < 0):
                raise ConfigurationError("penalty weights must be a nonnegative n-vector")
            object.__setattr__(self, "penalty_weights", pw)

    @property
    def shape(self):
        """``(m, n, l)``: rows of A, unknowns, constraints."""
        return self.a.shape[0], self.a.shape[1], self.c.shape[0]

    def objective(self, x, lam: float) -> float:
        r = self.a @ x - self.b
        ax = np.abs(x) if self.penalty_weights is None else self.penalty_weights * np.abs(x)
        return 0.5 * float(r @ r) + lam * float(ax.sum())

    def violation(self, x) -> float:
        return float(np.max(self.c @ x - self.d))

    def check_finite(self):
        for name in ("a", "b", "c", "d", "penalty_weights"):
            v = getattr(self, name)
            if v is None:
                continue
            arrays = (v.left, v.right) if isinstance(v, FactoredMatrix) else (v,)
            if not all(np.all(np.isfinite(arr)) for arr in arrays):
                raise ConfigurationError(f"non-finite entries in {name}")


@dataclass(frozen=True)
class AdmmConfig:
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    max_iter: int = 5000
    rho: float | None = None  # None: rho = lam (floored)
    rho_floor: float = 1e-8

    def __post_init__(self):
        if not (self.eps_abs > 0 and self.eps_rel > 0 and self.max_iter >= 1):
            raise ConfigurationError(f"invalid ADMM settings {self}")

    def rho_for(self, lam: float) -> float:
        if self.rho is not None:
            return float(self.rho)
        return max(float(lam), self.rho_floor)


@dataclass(eq=False)
class AdmmSolution:
    """Final iterates and diagnostics.

    ``x`` is the primal iterate (feasible up to the primal residual); ``z`` is
    its soft-thresholded copy and carries the exact zeros.
    """

    x: np.ndarray
    z: np.ndarray
    w: np.ndarray
    u: np.ndarray
    t: np.ndarray
    rho: float
    lam: float
    iterations: int
    primal_residual: float
    dual_residual: float
    eps_pri: float
    eps_dual: float
    converged: bool


@dataclass(eq=False)
class Factorization:
    """Reusable solver for ``(A^T A + rho I + rho C^T C) x = q`` at a fixed ``rho``."""

    rho: float
    method: str
    n: int
    _data: tuple = field(repr=False, default=())

    def solve(self, q: np.ndarray) -> np.ndarray:
        rho = self.rho
        if self.method == "direct":
            return linalg.cho_solve(self._data[0], q)
        if self.method == "woodbury":
            bmat, cho = self._data
            return (q - bmat.T @ linalg.cho_solve(cho, bmat @ q)) / rho
        right, lu, h = self._data
        rq = right @ q
        return (q - right.T @ linalg.lu_solve(lu, h @ rq)) / rho


def _shared_right(problem: ConstrainedLasso):
    a, c = problem.a, problem.c
    if isinstance(a, FactoredMatrix) and isinstance(c, FactoredMatrix):
        if a.right is c.right or (a.right.shape == c.right.shape and np.array_equal(a.right, c.right)):
            return a, c
    return None


def factorize(problem: ConstrainedLasso, rho: float, method: str | None = None) -> Factorization:
    """Factor the x-update system for fixed ``(A, C, rho)``.

    ``method``:
      * ``"direct"`` -- Cholesky of ``A^T A + rho I + rho C^T C`` (default when m + l >= n);
      * ``"woodbury"`` -- Cholesky of ``B B^T + rho I`` with ``B = [A; sqrt(rho) C]``
        (default when m + l < n);
      * ``"lowrank"`` -- both matrices share a right factor ``R`` (``A = P R``,
        ``C = Q R``); uses ``(rho I + R^T H R)^{-1} = (I - R^T (rho I + H K)^{-1} H R) / rho``
        with ``H = P^T P + rho Q^T Q`` and ``K = R R^T``. Chosen automatically
        when applicable.

    The handle is tied to ``rho``; :func:`solve` refuses a handle built for a
    different value.
    """
    if not rho > 0:
        raise ConfigurationError("rho must be positive")
    m, n, l = problem.shape
    shared = _shared_right(problem)
    if method is None:
        method = "lowrank" if shared is not None else ("direct" if m + l >= n else "woodbury")
    try:
        if method == "lowrank":
            if shared is None:
                raise ConfigurationError("lowrank factorization needs A and C sharing a right factor")
            a, c = shared
            right = a.right
            h = a.left_gram() + rho * c.left_gram()
            k = right @ right.T
            system = rho * np.eye(len(k)) + h @ k
            lu = linalg.lu_factor(system, check_finite=False)
            if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0.0:
                raise NumericalError("singular x-update system")
            return Factorization(rho, method, n, (right, lu, h))
        a, c = _dense(problem.a), _dense(problem.c)
        if method == "direct":
            system = a.T @ a + rho * np.eye(n) + rho * (c.T @ c)
            return Factorization(rho, method, n, (linalg.cho_factor(system),))
        if method == "woodbury":
            bmat = np.vstack([a, math.sqrt(rho) * c])
            system = bmat @ bmat.T + rho * np.eye(m + l)
            return Factorization(rho, method, n, (bmat, linalg.cho_factor(system)))
    except linalg.LinAlgError as exc:
        raise NumericalError(f"x-update factorization failed: {exc}") from exc
    raise ConfigurationError(f"unknown factorization method {method!r}")


def soft_threshold(v, kappa) -> np.ndarray:
    """Elementwise ``sign(v) * max(|v| - kappa, 0)``; ``kappa`` may be per-element."""
    if np.any(np.asarray(kappa) < 0):
        raise ConfigurationError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)


def solve(
    problem: ConstrainedLasso,
    lam: float,
    config: AdmmConfig | None = None,
    warm_start: AdmmSolution | None = None,
    factorization: Factorization | None = None,
) -> AdmmSolution:
    """Run ADMM from zeros (``w = max(0, d)``) or from a previous solution.

    Warm-started scaled duals are rescaled by ``rho_old / rho`` so that the
    unscaled multipliers carry over when ``rho`` follows ``lam``.
    Reaching ``max_iter`` returns ``converged=False`` instead of raising.
    """
    config = config or AdmmConfig()
    if not (lam >= 0 and math.isfinite(lam)):
        raise ConfigurationError(f"penalty must be a finite nonnegative number, got {lam}")
    problem.check_finite()
    rho = config.rho_for(lam)
    if factorization is None:
        factorization = factorize(problem, rho)
    elif factorization.rho != rho:
        raise ConfigurationError(
            f"factorization was built for rho={factorization.rho}, solve needs rho={rho}; refactorize"
        )

    a, b, c, d = problem.a, problem.b, problem.c, problem.d
    m, n, l = problem.shape
    ct = c.T
    atb = a.T @ b
    ctd = ct @ d
    d_norm = float(np.linalg.norm(d))
    kappa = lam / rho if problem.penalty_weights is None else (lam / rho) * problem.penalty_weights
    sqrt_nl = math.sqrt(n + l) * config.eps_abs
    sqrt_n = math.sqrt(n) * config.eps_abs

    if warm_start is None:
        x = np.zeros(n)
        z = np.zeros(n)
        u = np.zeros(n)
        w = np.maximum(0.0, d)
        t = np.zeros(l)
    else:
        scale = warm_start.rho / rho
        x = warm_start.x.copy()
        z = warm_start.z.copy()
        w = warm_start.w.copy()
        u = warm_start.u * scale
        t = warm_start.t * scale
    ct_wt = ct @ np.column_stack([w, t])
    ct_w, ct_t = ct_wt[:, 0], ct_wt[:, 1]

    r_norm = s_norm = eps_pri = eps_dual = math.inf
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        q = atb + rho * (z - u) + rho * (ctd - ct_w - ct_t)
        x = factorization.solve(q)
        cx = c @ x

        z_old, ct_w_old = z, ct_w
        z = soft_threshold(x + u, kappa)
        w = np.maximum(0.0, d - cx - t)
        u = u + x - z
        prim_c = cx + w - d
        t = t + prim_c

        ct_wt = ct @ np.column_stack([w, t])
        ct_w, ct_t = ct_wt[:, 0], ct_wt[:, 1]

        r_norm = math.sqrt(float((x - z) @ (x - z)) + float(prim_c @ prim_c))
        s_norm = rho * float(np.linalg.norm(z - z_old - (ct_w - ct_w_old)))
        eps_pri = sqrt_nl + config.eps_rel * max(
            math.sqrt(float(x @ x) + float(cx @ cx)),
            math.sqrt(float(z @ z) + float(w @ w)),
            d_norm,
        )
        eps_dual = sqrt_n + config.eps_rel * rho * float(np.linalg.norm(u + ct_t))
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break

    return AdmmSolution(
        x=x, z=z, w=w, u=u, t=t, rho=rho, lam=float(lam), iterations=it,
        primal_residual=r_norm, dual_residual=s_norm,
        eps_pri=eps_pri, eps_dual=eps_dual, converged=converged,
    )
