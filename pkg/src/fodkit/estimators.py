"""FOD estimators: sparse needlet lasso, SH ridge and super-resolved CSD."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import admm
from .admm import AdmmConfig, ConstrainedLasso, _dense
from .convolution import DesignProblem
from .errors import ConfigurationError, NumericalError
from .sphere import SHBasis

logger = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "FODEstimate",
    "LambdaGrid",
    "SelectionParams",
    "fit_sn_lasso",
    "select_lambda",
    "fit_sh_ridge",
    "fit_super_csd",
    "lift_coefficients",
    "normalize_fod",
    "roughness_penalty",
    "RSS_FLOOR",
    "REFINE",
]

METHODS = ("sn_lasso", "sh_ridge", "super_csd")
RSS_FLOOR = 1e-300
DEGENERATE_INTEGRAL = 1e-12
# tolerances for the final solve at the selected penalty
REFINE = AdmmConfig(eps_abs=1e-5, eps_rel=3e-4, max_iter=50_000)


@dataclass(eq=False)
class FODEstimate:
    """A fitted FOD.

    ``f`` holds SH coefficients (basis of degree ``l_max``), ``grid_values`` the
    evaluation-grid values ``Phi_eval f``. ``scale`` accumulates the factor
    applied by :func:`normalize_fod`.
    """

    method: str
    f: np.ndarray
    grid_values: np.ndarray | None
    lam: float
    l_max: int
    beta: np.ndarray | None = None
    rss_path: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    degenerate: bool = False
    scale: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")

    @property
    def n_active(self) -> int:
        return 0 if self.beta is None else int(np.count_nonzero(self.beta))

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "lambda": self.lam,
            "l_max": self.l_max,
            "f": self.f.tolist(),
            "scale": self.scale,
            "degenerate": self.degenerate,
            "diagnostics": self.diagnostics,
        }
        if self.beta is not None:
            support = np.flatnonzero(self.beta)
            out["beta"] = {
                "size": int(self.beta.size),
                "support": support.tolist(),
                "values": self.beta[support].tolist(),
            }
        if self.rss_path is not None:
            out["rss_path"] = self.rss_path.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict, grid_values=None) -> "FODEstimate":
        beta = None
        if "beta" in data:
            beta = np.zeros(data["beta"]["size"])
            beta[np.asarray(data["beta"]["support"], dtype=int)] = data["beta"]["values"]
        rss = data.get("rss_path")
        return cls(
            method=data["method"],
            f=np.asarray(data["f"], dtype=float),
            grid_values=None if grid_values is None else np.asarray(grid_values, dtype=float),
            lam=float(data["lambda"]),
            l_max=int(data["l_max"]),
            beta=beta,
            rss_path=None if rss is None else np.asarray(rss, dtype=float),
            diagnostics=dict(data.get("diagnostics", {})),
            degenerate=bool(data.get("degenerate", False)),
            scale=float(data.get("scale", 1.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    """Strictly decreasing positive penalties."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1 or np.any(v <= 0) or np.any(np.diff(v) >= 0):
            raise ConfigurationError("lambda grid must be strictly decreasing and positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def log_spaced(cls, lo: float = 1e-5, hi: float = 1e-2, k: int = 500) -> "LambdaGrid":
        if not (0 < lo < hi) or k < 2:
            raise ConfigurationError(f"invalid lambda range [{lo}, {hi}] with {k} points")
        return cls(np.geomspace(hi, lo, k))

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class SelectionParams:
    window: int = 25  # T
    eps: float = 2e-4

    def __post_init__(self):
        if self.window < 1 or not self.eps > 0:
            raise ConfigurationError(f"invalid selection parameters {self}")


def _path_deltas(lams, rss) -> np.ndarray:
    """``delta[k] = |dlog RSS / dlog lam|`` between points ``k-1`` and ``k`` (``delta[0]`` unused)."""
    lr = np.log(np.maximum(np.asarray(rss, dtype=float), RSS_FLOOR))
    ll = np.log(np.asarray(lams, dtype=float))
    delta = np.full(lr.size, np.nan)
    delta[1:] = np.abs(np.diff(lr) / np.diff(ll))
    return delta


def _window_ok(delta: np.ndarray, k: int, window: int, eps: float) -> bool:
    # k is 1-based; the window holds the deltas ending at point k that exist
    lo = max(1, k - window)
    vals = delta[lo:k]
    return vals.size > 0 and float(np.mean(vals)) < eps


def select_lambda(rss_path, window: int = 25, eps: float = 2e-4) -> int:
    """Flattening rule for the lasso path.

    ``rss_path`` is a ``(K, 2)`` array of ``(lambda, RSS)`` in path order.
    Returns the 1-based index ``k* = min{k >= T : mean of the last T deltas < eps}``
    or ``K`` when no index qualifies.
    """
    path = np.asarray(rss_path, dtype=float)
    if path.ndim != 2 or path.shape[1] != 2:
        raise ConfigurationError("rss_path must have shape (K, 2)")
    k_total = path.shape[0]
    if k_total < window:
        raise ConfigurationError(f"path has {k_total} points, selection window needs {window}")
    delta = _path_deltas(path[:, 0], path[:, 1])
    for k in range(window, k_total + 1):
        if _window_ok(delta, k, window, eps):
            return k
    return k_total


def normalize_fod(estimate: FODEstimate, weights) -> FODEstimate:
    """Rescale so the positive part of the grid values integrates to one."""
    if estimate.grid_values is None:
        raise ConfigurationError("normalization needs grid values")
    weights = np.asarray(weights, dtype=float)
    integral = float(weights @ np.maximum(estimate.grid_values, 0.0))
    if not integral >= DEGENERATE_INTEGRAL:
        estimate.degenerate = True
        return estimate
    s = 1.0 / integral
    estimate.f = estimate.f * s
    estimate.grid_values = estimate.grid_values * s
    if estimate.beta is not None:
        estimate.beta = estimate.beta * s
    estimate.scale *= s
    return estimate


def _isotropic_solution(problem: ConstrainedLasso, config: AdmmConfig):
    """Closed-form solution with only the unpenalized coefficients active.

    With ``f`` constant and positive no constraint binds, so the fit is optimal
    for every penalty at or above ``lam_entry = max_i |a_i^T r| / p_i`` over the
    penalized columns. Returns ``(solution, lam_entry)``, or ``(None, inf)`` when
    the closed form does not apply.
    """
    pw = problem.penalty_weights
    if pw is None:
        return None, math.inf
    free = np.flatnonzero(pw == 0)
    a = _dense(problem.a)
    x = np.zeros(a.shape[1])
    if free.size:
        x[free] = np.linalg.lstsq(a[:, free], problem.b, rcond=None)[0]
    slack = problem.d - problem.c @ x
    if free.size == 0 or np.min(slack) <= 0:
        return None, math.inf
    grad = a.T @ (problem.b - a @ x)
    pen = pw > 0
    lam_entry = float(np.max(np.abs(grad[pen]) / pw[pen])) if np.any(pen) else 0.0
    rho = config.rho_for(max(lam_entry, config.rho_floor))
    u = np.zeros_like(x)
    u[pen] = grad[pen] / rho
    sol = admm.AdmmSolution(
        x=x, z=x.copy(), w=slack, u=u, t=np.zeros(slack.size), rho=rho, lam=lam_entry,
        iterations=0, primal_residual=0.0, dual_residual=0.0, eps_pri=0.0, eps_dual=0.0,
        converged=True,
    )
    return sol, lam_entry


def fit_sn_lasso(
    y,
    design: DesignProblem,
    grid: LambdaGrid | None = None,
    sel: SelectionParams | None = None,
    config: AdmmConfig | None = None,
    early_stop: bool = True,
    normalize: bool = True,
    refine: AdmmConfig | None = REFINE,
) -> FODEstimate:
    """Nonnegativity-constrained needlet lasso along a descending penalty path.

    Each penalty is solved by ADMM warm-started from the previous one; the
    RSS path is scored with :func:`select_lambda`. With ``early_stop`` the
    path is cut at the first admissible index, which is the index the rule
    selects on the full path. ``refine`` re-solves the selected penalty from
    its path iterate with tighter tolerances so the returned FOD meets the
    nonnegativity constraint to within about ``10 * eps_abs``; the path itself
    (and so the selection) is unaffected. Pass ``None`` to skip it.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ConfigurationError(f"signal has shape {y.shape}, design expects ({design.n},)")
    if not np.all(np.isfinite(y)):
        raise ConfigurationError("signal contains non-finite values")
    grid = grid or LambdaGrid.log_spaced()
    sel = sel or SelectionParams()
    config = config or AdmmConfig()
    lams = grid.values
    if lams.size < sel.window:
        raise ConfigurationError(f"lambda grid has {lams.size} points, selection window needs {sel.window}")

    if not np.any(y):
        beta = np.zeros(design.size)
        return FODEstimate(
            "sn_lasso", design.c @ beta, np.zeros(len(design.eval_grid)), float(lams[0]),
            design.basis.l_max, beta=beta, rss_path=np.column_stack([lams[:1], [0.0]]),
            diagnostics={"selected_index": 1, "iterations": 0, "converged": True},
            degenerate=True,
        )

    # per-observation loss: (1/2n)||y - A beta||^2 + lam ||beta||_1
    root_n = math.sqrt(design.n)
    a_scaled = admm.FactoredMatrix(design.phi_r / root_n, design.c)
    # the penalty runs over needlets only; the isotropic coefficient is free
    weights = np.ones(design.size)
    weights[0] = 0.0
    problem = ConstrainedLasso(
        a_scaled, y / root_n, design.constraint_factored, np.zeros(len(design.eval_grid)), weights
    )
    a = problem.a
    null, lam_entry = _isotropic_solution(problem, config)
    rss = np.empty(lams.size)
    delta = np.full(lams.size, np.nan)
    sols = []
    iters = []
    k_star = None
    warm = None
    for i, lam in enumerate(lams):
        if null is not None and lam >= lam_entry:
            # the isotropic fit satisfies the optimality conditions exactly here
            sol = dataclasses.replace(null, lam=float(lam))
        else:
            rho = config.rho_for(lam)
            fact = admm.factorize(problem, rho)
            sol = admm.solve(problem, lam, config, warm_start=warm or null, factorization=fact)
            warm = sol
        # RSS of the least-squares iterate; z differs from it by the primal residual
        r = a @ sol.x - problem.b
        rss[i] = design.n * float(r @ r)
        sols.append(sol)
        iters.append(sol.iterations)
        if i > 0:
            delta[i] = abs(
                (math.log(max(rss[i], RSS_FLOOR)) - math.log(max(rss[i - 1], RSS_FLOOR)))
                / (math.log(lam) - math.log(lams[i - 1]))
            )
        k = i + 1
        if k >= sel.window and _window_ok(delta, k, sel.window, sel.eps):
            k_star = k
            if early_stop:
                break
    n_done = len(sols)
    if k_star is None:
        k_star = n_done
    path = np.column_stack([lams[:n_done], rss[:n_done]])
    chosen = sols[k_star - 1]
    path_iterations = chosen.iterations
    refined = False
    if refine is not None and chosen.iterations > 0:
        fact = admm.factorize(problem, refine.rho_for(chosen.lam))
        chosen = admm.solve(problem, chosen.lam, refine, warm_start=chosen, factorization=fact)
        refined = True
    beta = chosen.z.copy()
    f = design.c @ beta
    values = design.phi_eval @ f
    if not chosen.converged:
        logger.warning("ADMM did not converge at the selected penalty %.3g", chosen.lam)
    est = FODEstimate(
        "sn_lasso", f, values, float(chosen.lam), design.basis.l_max, beta=beta, rss_path=path,
        diagnostics={
            "selected_index": int(k_star),
            "path_length": int(n_done),
            "iterations": int(path_iterations),
            "refined": refined,
            "refine_iterations": int(chosen.iterations) if refined else 0,
            "total_iterations": int(sum(iters)) + (int(chosen.iterations) if refined else 0),
            "converged": bool(chosen.converged),
            "primal_residual": float(chosen.primal_residual),
            "dual_residual": float(chosen.dual_residual),
        },
    )
    if normalize:
        normalize_fod(est, design.eval_grid.weights)
    return est


def roughness_penalty(basis: SHBasis) -> np.ndarray:
    """Diagonal of the Laplace-Beltrami roughness penalty ``l^2 (l+1)^2``."""
    l = basis.degrees.astype(float)
    return (l * (l + 1.0)) ** 2


def default_ridge_grid() -> np.ndarray:
    return np.logspace(-8, 0, 81)


def _ridge_solution(m, mty, pen, lam):
    system = m + lam * np.diag(pen)
    try:
        cho = linalg.cho_factor(system)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"ridge system is singular at lambda={lam}: {exc}") from exc
    return cho, linalg.cho_solve(cho, mty)


def fit_sh_ridge(
    y,
    phi,
    r_diag,
    lambdas=None,
    eval_matrix=None,
    eval_weights=None,
    normalize: bool = True,
) -> FODEstimate:
    """SH least squares with a Laplace-Beltrami roughness penalty.

    ``f = (R Phi^T Phi R + lam P)^{-1} R Phi^T y``. ``lambdas`` may be a scalar
    (fixed penalty) or a sequence scored by BIC with the hat-matrix trace as
    degrees of freedom. ``r_diag`` is the diagonal as a vector or matrix.
    """
    y = np.asarray(y, dtype=float)
    phi = np.asarray(phi, dtype=float)
    r = np.asarray(r_diag, dtype=float)
    if r.ndim == 2:
        r = np.diag(r)
    n, size = phi.shape
    if y.shape != (n,) or r.shape != (size,):
        raise ConfigurationError(f"inconsistent ridge inputs: y{y.shape} phi{phi.shape} r{r.shape}")
    basis = SHBasis(int(round((math.sqrt(8 * size + 1) - 3) / 2)))
    if basis.size != size:
        raise ConfigurationError(f"{size} columns is not a symmetric SH basis size")
    pen = roughness_penalty(basis)
    x = phi * r
    m = x.T @ x
    xty = x.T @ y
    lam_arr = np.atleast_1d(default_ridge_grid() if lambdas is None else np.asarray(lambdas, dtype=float))
    if np.any(lam_arr < 0):
        raise ConfigurationError("ridge penalties must be nonnegative")

    bic = np.empty(lam_arr.size)
    best = None
    for i, lam in enumerate(lam_arr):
        cho, f = _ridge_solution(m, xty, pen, lam)
        res = y - x @ f
        rss = max(float(res @ res), RSS_FLOOR)
        df = float(np.trace(linalg.cho_solve(cho, m)))
        bic[i] = n * math.log(rss / n) + math.log(n) * df
        if best is None or bic[i] < bic[best[0]]:
            best = (i, f, df, rss)
    i, f, df, rss = best
    values = None if eval_matrix is None else np.asarray(eval_matrix) @ f
    est = FODEstimate(
        "sh_ridge", f, values, float(lam_arr[i]), basis.l_max,
        diagnostics={"bic": bic.tolist(), "lambdas": lam_arr.tolist(), "df": df, "rss": rss},
    )
    if normalize and values is not None and eval_weights is not None:
        normalize_fod(est, eval_weights)
    return est


def _robust_solve(system, rhs):
    # an almost empty mask leaves the super-resolved system rank deficient
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            return linalg.solve(system, rhs, assume_a="sym")
        except (linalg.LinAlgError, linalg.LinAlgWarning):
            pass
    sol = linalg.lstsq(system, rhs)[0]
    if not np.all(np.isfinite(sol)):
        raise NumericalError("super-CSD system has no finite solution")
    return sol


def lift_coefficients(f, l_max_to: int, keep_l_max: int | None = None) -> np.ndarray:
    """Embed coefficients into a larger symmetric basis, optionally truncating to ``l <= keep_l_max``."""
    f = np.asarray(f, dtype=float)
    out = np.zeros(SHBasis(l_max_to).size)
    keep = f.size if keep_l_max is None else min(f.size, SHBasis(keep_l_max).size)
    if keep > out.size:
        raise ConfigurationError("target basis is smaller than the source")
    # column order depends only on (l, m), so the smaller basis is a prefix
    out[:keep] = f[:keep]
    return out


def fit_super_csd(
    initial: FODEstimate,
    y,
    phi_s,
    r_diag_s,
    eval_s,
    eval_weights,
    tau: float = 0.1,
    lam: float = 1.0,
    max_iter: int = 50,
    filter_l_max: int = 4,
    normalize: bool = True,
) -> FODEstimate:
    """Iteratively reweighted CSD in a basis of degree ``l_max_s``.

    ``phi_s`` / ``eval_s`` are SH matrices of the super-resolved basis on the
    gradient and evaluation grids, ``r_diag_s`` the matching response diagonal.
    The initial estimate is lifted, filtered to ``l <= filter_l_max`` and then
    refined; rows of ``eval_s`` whose current value is at most ``tau`` times the
    mean amplitude of the filtered start are penalized.
    """
    y = np.asarray(y, dtype=float)
    phi_s = np.asarray(phi_s, dtype=float)
    eval_s = np.asarray(eval_s, dtype=float)
    r = np.asarray(r_diag_s, dtype=float)
    if r.ndim == 2:
        r = np.diag(r)
    size = phi_s.shape[1]
    if eval_s.shape[1] != size or r.shape != (size,) or y.shape != (phi_s.shape[0],):
        raise ConfigurationError("inconsistent super-CSD inputs")
    if tau < 0 or lam < 0 or max_iter < 1:
        raise ConfigurationError("tau, lambda must be nonnegative and max_iter positive")
    basis = SHBasis(int(round((math.sqrt(8 * size + 1) - 3) / 2)))
    # the initial estimate is fitted on the raw signal scale: undo any normalization
    f0 = np.asarray(initial.f, dtype=float) / initial.scale
    f = lift_coefficients(f0, basis.l_max, keep_l_max=filter_l_max)
    weights = np.asarray(eval_weights, dtype=float)
    # tau is relative to the mean amplitude of the filtered start, f_00 Y_00
    threshold = tau * f[0] / (2.0 * math.sqrt(math.pi))
    if not threshold > 0:
        threshold = tau * float(weights @ np.abs(eval_s @ f)) / (4.0 * math.pi)

    x = phi_s * r
    m = x.T @ x
    xty = x.T @ y
    mask = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        values = eval_s @ f
        new_mask = values <= threshold
        if mask is not None and np.array_equal(new_mask, mask):
            converged = True
            break
        mask = new_mask
        p = eval_s[mask]
        system = m + lam * (p.T @ p)
        f = _robust_solve(system, xty)
    est = FODEstimate(
        "super_csd", f, eval_s @ f, float(lam), basis.l_max,
        diagnostics={
            "iterations": int(it),
            "converged": bool(converged),
            "tau": float(tau),
            "threshold": float(threshold),
            "masked_points": int(mask.sum()),
            "initial_method": initial.method,
        },
    )
    if normalize:
        normalize_fod(est, weights)
    return est
