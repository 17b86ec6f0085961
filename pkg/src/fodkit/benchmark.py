"""Simulate, fit, detect and score: the end-to-end benchmark pipeline."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .admm import AdmmConfig
from .config import RunConfig
from .convolution import DesignProblem, assemble_design, response_diag, rotational_harmonics
from .errors import ConfigurationError, FodkitError
from .estimators import (
    REFINE,
    FODEstimate,
    LambdaGrid,
    SelectionParams,
    fit_sh_ridge,
    fit_sn_lasso,
    fit_super_csd,
)
from .evaluation import TrialResult, score_trial
from .peaks import detect_peaks
from .simulation import (
    Scenario,
    noiseless_signal,
    project_truth,
    scenario_by_id,
    simulate_replicate,
    truth_grid_values,
    with_reps,
)
from .sphere import SHBasis, SphericalGrid, grid_from_id, gradient_grid, sh_matrix

logger = logging.getLogger(__name__)

__all__ = [
    "SCSD_ORDERS",
    "ScenarioContext",
    "build_context",
    "fit_method",
    "run_trial",
    "run_scenario",
    "run_benchmark",
    "resolve_scenarios",
]

SCSD_ORDERS = {"scsd8": 8, "scsd12": 12, "scsd16": 16}
_LABELS = {"sn-lasso": "sn-lasso", "sh-ridge": "sh-ridge", **{k: k for k in SCSD_ORDERS}}


@lru_cache(maxsize=8)
def _eval_grid(name: str) -> SphericalGrid:
    return grid_from_id(name)


@lru_cache(maxsize=8)
def _gradients(n: int, name: str | None) -> SphericalGrid:
    return grid_from_id(name) if name else gradient_grid(n)


@dataclass(frozen=True, eq=False)
class ScenarioContext:
    """Immutable per-scenario data shared by all replicates and methods."""

    scenario: Scenario
    design: DesignProblem
    clean: np.ndarray
    truth_values: np.ndarray
    super_bases: dict  # l_max_s -> (phi_s, r_s, eval_s)

    @property
    def eval_grid(self) -> SphericalGrid:
        return self.design.eval_grid

    @property
    def weights(self) -> np.ndarray:
        return self.design.eval_grid.weights


def build_context(scenario: Scenario, config: RunConfig | None = None, methods=()) -> ScenarioContext:
    config = config or RunConfig()
    grads = _gradients(scenario.n_gradients, config.gradient_grid)
    ev = _eval_grid(config.eval_grid)
    basis = SHBasis(config.l_max)
    resp = scenario.response
    design = assemble_design(basis, None, resp, grads, ev)
    truth = project_truth(scenario, SHBasis(8))
    truth_values = truth_grid_values(truth, sh_matrix(SHBasis(8), ev))
    supers = {}
    for m in methods:
        if m in SCSD_ORDERS:
            ls = SCSD_ORDERS[m]
            bs = SHBasis(ls)
            rot = rotational_harmonics(resp, ls)
            supers[ls] = (sh_matrix(bs, grads), np.diag(response_diag(rot, bs)), sh_matrix(bs, ev))
    return ScenarioContext(scenario, design, noiseless_signal(scenario, grads), truth_values, supers)


def _admm_config(config: RunConfig) -> AdmmConfig:
    return AdmmConfig(eps_abs=config.eps_abs, eps_rel=config.eps_rel, max_iter=config.max_iter)


def fit_method(method: str, y, ctx: ScenarioContext, config: RunConfig | None = None) -> FODEstimate:
    """Fit one estimator to one signal vector."""
    config = config or RunConfig()
    d = ctx.design
    if method == "sn-lasso":
        return fit_sn_lasso(
            y, d,
            LambdaGrid.log_spaced(config.lambda_min, config.lambda_max, config.lambda_count),
            SelectionParams(config.window, config.eps),
            _admm_config(config),
            refine=REFINE if config.refine else None,
        )
    ridge = fit_sh_ridge(y, d.phi, d.r_diag, eval_matrix=d.phi_eval, eval_weights=ctx.weights)
    if method == "sh-ridge":
        return ridge
    if method in SCSD_ORDERS:
        ls = SCSD_ORDERS[method]
        if ls not in ctx.super_bases:
            raise ConfigurationError(f"context was built without the l_max={ls} basis")
        phi_s, r_s, eval_s = ctx.super_bases[ls]
        return fit_super_csd(ridge, y, phi_s, r_s, eval_s, ctx.weights, tau=config.tau, lam=config.scsd_lambda)
    raise ConfigurationError(f"unknown method {method!r}")


def run_trial(ctx: ScenarioContext, method: str, replicate: int, config: RunConfig | None = None) -> TrialResult:
    """One replicate through simulate, fit, detect and score; solver failures become 'failed' rows."""
    config = config or RunConfig()
    sc = ctx.scenario
    y = simulate_replicate(sc, ctx.design.gradient_grid, replicate, clean=ctx.clean)
    t0 = time.perf_counter()
    try:
        est = fit_method(method, y, ctx, config)
    except FodkitError as exc:
        logger.warning("%s %s replicate %d failed: %s", sc.id, method, replicate, exc)
        return TrialResult(sc.id, replicate, _LABELS[method], "failed", note=str(exc))
    runtime = time.perf_counter() - t0
    peaks = detect_peaks(
        est.grid_values, ctx.eval_grid,
        config.peak_neighborhood_deg, config.peak_alpha, config.peak_cluster_deg,
    )
    res = score_trial(est, peaks, sc, ctx.truth_values, ctx.weights, replicate, runtime)
    res.method = _LABELS[method]
    if est.diagnostics.get("converged") is False:
        res.note = (res.note + ";" if res.note else "") + "not-converged"
    return res


# worker state for the process pool; built once per worker
_WORKER: dict = {}


def _init_worker(scenario: Scenario, config: RunConfig, methods: tuple):
    _WORKER["ctx"] = build_context(scenario, config, methods)
    _WORKER["config"] = config


def _work(item):
    method, rep = item
    return run_trial(_WORKER["ctx"], method, rep, _WORKER["config"])


def run_scenario(scenario: Scenario, methods, config: RunConfig | None = None, jobs: int = 1,
                 reps: int | None = None) -> list[TrialResult]:
    """All (method, replicate) trials of one scenario, in (method, replicate) order."""
    config = config or RunConfig()
    methods = tuple(methods)
    reps = scenario.reps if reps is None else int(reps)
    items = [(m, r) for m in methods for r in range(reps)]
    if jobs <= 1 or len(items) < 2:
        ctx = build_context(scenario, config, methods)
        return [run_trial(ctx, m, r, config) for m, r in items]
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(scenario, config, methods)
    ) as pool:
        # map preserves submission order, so results do not depend on scheduling
        return list(pool.map(_work, items, chunksize=max(1, len(items) // (4 * jobs))))


def resolve_scenarios(config: RunConfig) -> list[Scenario]:
    from .simulation import standard_scenarios

    if config.scenarios:
        out = [scenario_by_id(s, seed=config.seed) for s in config.scenarios]
    else:
        out = standard_scenarios(seed=config.seed)
    if config.reps is not None:
        out = [with_reps(s, config.reps) for s in out]
    return out


def run_benchmark(config: RunConfig, jobs: int | None = None) -> list[TrialResult]:
    jobs = jobs or os.cpu_count() or 1
    trials = []
    for sc in resolve_scenarios(config):
        logger.info("scenario %s (%d reps)", sc.id, sc.reps)
        trials.extend(run_scenario(sc, config.methods, config, jobs))
    return trials
