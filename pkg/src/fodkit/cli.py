"""Command-line entry point: ``fodkit <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 missing precomputed artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .admm import AdmmConfig
from .benchmark import resolve_scenarios, run_scenario
from .config import METHODS, RunConfig, load_config
from .convolution import DesignProblem, ResponseFunction, _response_vector, frame_matrices, rotational_harmonics
from .errors import ConfigurationError, FodkitError, MissingArtifactError, NumericalError
from .estimators import (
    REFINE,
    FODEstimate,
    LambdaGrid,
    SelectionParams,
    fit_sh_ridge,
    fit_sn_lasso,
    fit_super_csd,
)
from .evaluation import summarize_all, write_summary_csv, write_trials_csv
from .needlets import max_level
from .peaks import detect_peaks
from .simulation import (
    noiseless_signal,
    project_truth,
    scenario_by_id,
    simulate_replicate,
    truncation_error,
    with_reps,
)
from .sphere import SHBasis, UnitDirection, grid_from_id, gradient_grid, sh_matrix

logger = logging.getLogger("fodkit")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL = 0, 2, 3, 4
MATRIX_EXT = ".fkm"


# -- shared helpers --------------------------------------------------------

def _gradient_id(cfg: RunConfig) -> str:
    if cfg.gradient_grid:
        return cfg.gradient_grid
    from .sphere import GRADIENT_GRID_IDS

    try:
        return GRADIENT_GRID_IDS[cfg.n_gradients]
    except KeyError:
        raise ConfigurationError(f"no gradient grid with {cfg.n_gradients} directions") from None


def _response(cfg: RunConfig, b: float | None = None) -> ResponseFunction:
    return ResponseFunction.from_ratio(cfg.b_value if b is None else b, cfg.diffusivity, cfg.response_ratio)


def _artifact_names(cfg: RunConfig, b: float | None = None) -> dict:
    g = _gradient_id(cfg)
    b = cfg.b_value if b is None else b
    l = cfg.l_max
    return {
        "phi": f"phi_{g}_l{l}",
        "phi_eval": f"phi_eval_{cfg.eval_grid}_l{l}",
        "c": f"c_l{l}",
        "c_star": f"cstar_l{l}",
        "r": f"r_b{b:g}_ratio{cfg.response_ratio:g}_l{l}",
        "a": f"a_{g}_b{b:g}_ratio{cfg.response_ratio:g}_l{l}",
    }


def _cache(args) -> Path:
    return io.cache_dir(getattr(args, "cache_dir", None))


def _write_provenance(out: Path, cfg: RunConfig, command: str, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "provenance.json", io.provenance(cfg.sha256(), cfg.seed, command, extra))


def _compute_artifacts(cfg: RunConfig, b: float | None = None) -> dict:
    basis = SHBasis(cfg.l_max)
    _, c_star, c = frame_matrices(cfg.l_max)
    grads = grid_from_id(_gradient_id(cfg))
    ev = grid_from_id(cfg.eval_grid)
    phi = sh_matrix(basis, grads)
    r = _response_vector(rotational_harmonics(_response(cfg, b), cfg.l_max), basis)
    names = _artifact_names(cfg, b)
    return {
        names["phi"]: phi,
        names["phi_eval"]: sh_matrix(basis, ev),
        names["c"]: c,
        names["c_star"]: c_star,
        names["r"]: r,
        names["a"]: (phi * r) @ c,
    }


def _load_design(cfg: RunConfig, cache: Path, b: float) -> DesignProblem:
    names = _artifact_names(cfg, b)
    missing = [n for n in names.values() if not (cache / (n + MATRIX_EXT)).exists()]
    if missing:
        raise MissingArtifactError(
            f"precomputed artifacts {missing} not found in {cache}; "
            f"run `fodkit precompute --b {b:g}` (or set FODKIT_CACHE_DIR) first"
        )
    mats = {k: io.read_matrix(cache / (n + MATRIX_EXT)) for k, n in names.items()}
    frame, _, _ = frame_matrices(cfg.l_max)
    return DesignProblem(
        basis=SHBasis(cfg.l_max),
        frame=frame,
        response=_response(cfg, b),
        gradient_grid=grid_from_id(_gradient_id(cfg)),
        eval_grid=grid_from_id(cfg.eval_grid),
        phi=mats["phi"],
        r_diag=mats["r"].ravel(),
        c=mats["c"],
        c_star=mats["c_star"],
        phi_eval=mats["phi_eval"],
        meta={"cache": str(cache)},
    )


# -- commands ----------------------------------------------------------------

def cmd_precompute(cfg: RunConfig, args) -> int:
    cache = _cache(args)
    try:
        cache.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create cache directory {cache}: {exc}") from exc
    statuses = {}
    arrays = None
    for name in _artifact_names(cfg).values():
        path = cache / (name + MATRIX_EXT)
        side = cache / (name + ".json")
        if path.exists() and side.exists():
            try:
                recorded = io.read_json(side).get("sha256")
                ok = recorded == io.sha256_file(path)
                if ok:
                    io.read_matrix(path)
            except (FodkitError, ValueError):
                ok = False
            if ok:
                statuses[name] = "cached"
                continue
            if args.strict:
                raise ConfigurationError(f"artifact {path} does not match its recorded hash")
            logger.warning("artifact %s is corrupt; rebuilding", path)
        if arrays is None:
            arrays = _compute_artifacts(cfg)
        mat = np.atleast_2d(arrays[name]) if arrays[name].ndim == 1 else arrays[name]
        digest = io.write_matrix(path, mat)
        io.write_json(side, {
            "name": name, "rows": int(mat.shape[0]), "cols": int(mat.shape[1]), "sha256": digest,
            "l_max": cfg.l_max, "j_max": max_level(cfg.l_max), "gradient_grid": _gradient_id(cfg), "eval_grid": cfg.eval_grid,
            "b": cfg.b_value, "response_ratio": cfg.response_ratio,
        })
        statuses[name] = "written"
    for name, status in statuses.items():
        print(f"{status:8s} {cache / (name + MATRIX_EXT)}")
    _write_provenance(Path(cfg.out), cfg, "precompute", {"artifacts": statuses, "cache": str(cache)})
    return EXIT_OK


SIGNAL_COLUMNS = ["replicate", "gradient_index", "theta", "phi", "y"]


def _signal_csv(grads, y, replicate: int = 0) -> str:
    """One row per gradient; angles in radians, floats written round-trip exact."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(SIGNAL_COLUMNS)
    for i, (p, v) in enumerate(zip(grads.xyz, y)):
        u = UnitDirection.from_xyz(p)
        w.writerow([replicate, i, repr(float(u.theta)), repr(float(u.phi)), repr(float(v))])
    return buf.getvalue()


def _read_signal_csv(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "y" not in rows[0]:
        raise ConfigurationError(f"{path} is not a signal file")
    return np.array([float(r["y"]) for r in rows])


def cmd_simulate(cfg: RunConfig, args) -> int:
    sc = scenario_by_id(args.scenario, seed=cfg.seed)
    if cfg.reps is not None:
        sc = with_reps(sc, cfg.reps)
    out = Path(cfg.out) / sc.id
    out.mkdir(parents=True, exist_ok=True)
    grads = gradient_grid(sc.n_gradients)
    clean = noiseless_signal(sc, grads)
    for rep in range(sc.reps):
        y = simulate_replicate(sc, grads, rep, clean=clean)
        (out / f"signal_rep{rep:03d}.csv").write_bytes(_signal_csv(grads, y, rep).encode("utf-8"))
    truth = sc.to_dict()
    truth["f_star_l8"] = project_truth(sc, SHBasis(8)).f_star.tolist()
    truth["gradient_grid"] = grads.name
    truth["truncation_rms_l8"] = truncation_error(sc, grads, 8)
    io.write_json(out / "truth.json", truth)
    _write_provenance(out, cfg, "simulate", {"scenario": sc.id, "reps": sc.reps})
    print(f"wrote {sc.reps} signal files to {out}")
    return EXIT_OK


def _dataset_files(dataset: Path):
    if dataset.is_file():
        return dataset.parent, [dataset]
    files = sorted(dataset.glob("signal_rep*.csv"))
    if not files:
        raise ConfigurationError(f"no signal_rep*.csv files in {dataset}")
    return dataset, files


def cmd_fit(cfg: RunConfig, args) -> int:
    method = args.method
    if method == "super-csd" and args.lmax_s not in (8, 12, 16):
        raise ConfigurationError("super-csd needs --lmax-s 8, 12 or 16")
    root, files = _dataset_files(Path(args.dataset))
    truth_path = root / "truth.json"
    b = cfg.b_value
    if truth_path.exists():
        truth = io.read_json(truth_path)
        b = float(truth["b"])
        cfg = cfg.replace(gradient_grid=truth.get("gradient_grid", cfg.gradient_grid))
    design = _load_design(cfg, _cache(args), b)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    weights = design.eval_grid.weights
    supers = None
    if method == "super-csd":
        bs = SHBasis(args.lmax_s)
        r_s = _response_vector(rotational_harmonics(_response(cfg, b), args.lmax_s), bs)
        supers = (sh_matrix(bs, design.gradient_grid), r_s, sh_matrix(bs, design.eval_grid))
    admm_cfg = AdmmConfig(eps_abs=cfg.eps_abs, eps_rel=cfg.eps_rel, max_iter=cfg.max_iter)
    for path in files:
        y = _read_signal_csv(path)
        if method == "sn-lasso":
            est = fit_sn_lasso(
                y, design, LambdaGrid.log_spaced(cfg.lambda_min, cfg.lambda_max, cfg.lambda_count),
                SelectionParams(cfg.window, cfg.eps), admm_cfg,
                refine=REFINE if cfg.refine else None,
            )
        else:
            est = fit_sh_ridge(y, design.phi, design.r_diag, eval_matrix=design.phi_eval, eval_weights=weights)
            if method == "super-csd":
                est = fit_super_csd(est, y, *supers, weights, tau=cfg.tau, lam=cfg.scsd_lambda)
                est.diagnostics["l_max_s"] = args.lmax_s
        stem = path.stem.replace("signal", "estimate")
        data = est.to_dict()
        data["source"] = path.name
        data["eval_grid"] = cfg.eval_grid
        data["grid_values"] = est.grid_values.tolist()
        io.write_json(out / f"{stem}.json", data)
        if args.grid_binary:
            io.write_matrix(out / f"{stem}_grid{MATRIX_EXT}", est.grid_values)
        if est.diagnostics.get("converged") is False:
            logger.warning("%s: solver did not converge (recorded in the estimate)", path.name)
    _write_provenance(out, cfg, "fit", {"method": method, "dataset": str(args.dataset), "files": len(files)})
    print(f"wrote {len(files)} estimates to {out}")
    return EXIT_OK


def _load_estimate(path: Path):
    data = io.read_json(path)
    if "grid_values" not in data:
        raise ConfigurationError(f"{path} has no grid values")
    grid = grid_from_id(data.get("eval_grid", "ico4"))
    return FODEstimate.from_dict(data, data["grid_values"]), grid


def cmd_peaks(cfg: RunConfig, args) -> int:
    src = Path(args.estimates)
    files = sorted(src.glob("estimate_*.json")) if src.is_dir() else [src]
    if not files:
        raise ConfigurationError(f"no estimate files in {src}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in files:
        est, grid = _load_estimate(path)
        ps = detect_peaks(est.grid_values, grid, cfg.peak_neighborhood_deg, cfg.peak_alpha, cfg.peak_cluster_deg)
        data = ps.to_dict()
        data["source"] = path.name
        io.write_json(out / path.name.replace("estimate", "peaks"), data)
        print(f"{path.name}: {len(ps)} peak(s)")
    _write_provenance(out, cfg, "peaks", {"files": len(files)})
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig, args) -> int:
    scenarios = resolve_scenarios(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    trials = []
    for sc in scenarios:
        print(f"{sc.id}: {sc.reps} replicates x {len(cfg.methods)} methods", flush=True)
        trials.extend(run_scenario(sc, cfg.methods, cfg, jobs=args.jobs))
    seps = {sc.id: sc.sep for sc in scenarios}
    summaries = summarize_all(trials, seps)
    write_trials_csv(trials, out / "trials.csv")
    write_summary_csv(summaries, out / "summary.csv")
    failed = sum(t.classification == "failed" for t in trials)
    _write_provenance(out, cfg, "benchmark", {"scenarios": [s.id for s in scenarios], "failed_trials": failed})
    print(f"wrote {out / 'summary.csv'} ({len(trials)} trials, {failed} failed)")
    return EXIT_OK


def mesh_obj(grid, values) -> str:
    """Wavefront OBJ text with each vertex pushed to radius ``max(value, 0)``."""
    if grid.faces is None:
        raise ConfigurationError(f"grid {grid.name} has no triangle topology")
    radius = np.maximum(np.asarray(values, dtype=float), 0.0)
    lines = [f"# fodkit FOD glyph: {len(grid)} vertices, {len(grid.faces)} faces"]
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in grid.xyz * radius[:, None]]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in grid.faces]
    return "\n".join(lines) + "\n"


def cmd_export_mesh(cfg: RunConfig, args) -> int:
    est, grid = _load_estimate(Path(args.estimate))
    values = est.grid_values
    if est.degenerate or not np.any(values > 0):
        warnings.warn("degenerate estimate: writing the unit sphere", RuntimeWarning, stacklevel=1)
        logger.warning("degenerate estimate %s: writing the unit sphere", args.estimate)
        values = np.ones(len(grid))
    target = Path(args.mesh) if args.mesh else Path(cfg.out) / (Path(args.estimate).stem + ".obj")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(mesh_obj(grid, values), encoding="utf-8")
    _write_provenance(target.parent, cfg, "export-mesh", {"estimate": str(args.estimate)})
    print(f"wrote {target}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")
    common.add_argument("--cache-dir", help="artifact cache (default: $FODKIT_CACHE_DIR or ~/.cache/fodkit)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fodkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("precompute", parents=[common], help="persist basis, frame and design matrices")
    s.add_argument("--b", type=float, dest="b_value", help="b-value of the design matrix")
    s.add_argument("--strict", action="store_true", help="fail on corrupted artifacts instead of rebuilding")

    s = sub.add_parser("simulate", parents=[common], help="write noisy signals for one scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--reps", type=int)

    s = sub.add_parser("fit", parents=[common], help="fit an estimator to simulated signals")
    s.add_argument("--method", required=True, choices=("sn-lasso", "sh-ridge", "super-csd"))
    s.add_argument("--dataset", required=True, help="directory written by simulate, or one signal CSV")
    s.add_argument("--lmax-s", type=int, default=None, help="super-CSD basis degree (8, 12 or 16)")
    s.add_argument("--grid-binary", action="store_true", help="also write grid values as a binary matrix")

    s = sub.add_parser("peaks", parents=[common], help="detect peaks in fitted estimates")
    s.add_argument("--estimates", required=True, help="estimate JSON file or directory")

    s = sub.add_parser("benchmark", parents=[common], help="simulate, fit and score scenarios")
    s.add_argument("--scenario", action="append", dest="scenarios", help="scenario id (repeatable)")
    s.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    s.add_argument("--reps", type=int)

    s = sub.add_parser("export-mesh", parents=[common], help="write an OBJ glyph of an estimate")
    s.add_argument("--estimate", required=True)
    s.add_argument("--mesh", help="output OBJ path (default: <out>/<estimate>.obj)")
    return p


def _config_from_args(args) -> RunConfig:
    overrides = {"seed": args.seed, "out": args.out}
    for key in ("b_value", "reps"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "scenarios", None):
        overrides["scenarios"] = tuple(args.scenarios)
    if getattr(args, "methods", None):
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    return load_config(args.config, **overrides)


COMMANDS = {
    "precompute": cmd_precompute,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "peaks": cmd_peaks,
    "benchmark": cmd_benchmark,
    "export-mesh": cmd_export_mesh,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs is None:
        args.jobs = os.cpu_count() or 1
    try:
        cfg = _config_from_args(args)
        return COMMANDS[args.command](cfg, args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
