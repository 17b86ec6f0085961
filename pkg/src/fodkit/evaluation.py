"""Trial scoring, aggregation and CSV reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .peaks import PeakSet, match_peaks
from .simulation import Scenario

__all__ = [
    "CLASSES",
    "hellinger",
    "TrialResult",
    "ScenarioSummary",
    "score_trial",
    "summarize",
    "summarize_all",
    "trials_csv",
    "summary_csv",
    "write_trials_csv",
    "write_summary_csv",
]

CLASSES = ("correct", "under", "over", "failed")
MAX_FIBRES = 3


def _density(values, weights):
    p = np.maximum(np.asarray(values, dtype=float), 0.0)
    mass = float(weights @ p)
    return (p / mass, True) if mass >= 1e-12 else (p, False)


def hellinger(fhat_grid, fstar_grid, weights, return_flag: bool = False):
    """Hellinger distance between two clipped, renormalized densities on a weighted grid.

    A field with (numerically) zero positive mass gives ``H = 1``; with
    ``return_flag`` the second return value marks that case.
    """
    w = np.asarray(weights, dtype=float)
    if np.shape(fhat_grid) != w.shape or np.shape(fstar_grid) != w.shape:
        raise ConfigurationError("fields and weights must share the grid")
    p, ok_p = _density(fhat_grid, w)
    q, ok_q = _density(fstar_grid, w)
    if ok_p and ok_q:
        bc = float(w @ np.sqrt(p * q))
        h = math.sqrt(min(1.0, max(0.0, 1.0 - bc)))
    else:
        h = 1.0
    return (h, not (ok_p and ok_q)) if return_flag else h


@dataclass
class TrialResult:
    scenario_id: str
    replicate: int
    method: str
    classification: str
    n_detected: int = 0
    errors: tuple = ()  # per true fibre, nan when unmatched
    separations: tuple = ()
    hellinger: float = float("nan")
    runtime: float = 0.0
    note: str = ""

    def __post_init__(self):
        if self.classification not in CLASSES:
            raise ConfigurationError(f"unknown classification {self.classification!r}")


def classify(n_detected: int, k: int) -> str:
    if n_detected == k:
        return "correct"
    return "under" if n_detected < k else "over"


def score_trial(
    estimate,
    peaks: PeakSet,
    scenario: Scenario,
    truth_values,
    weights,
    replicate: int = 0,
    runtime: float = 0.0,
) -> TrialResult:
    """Classify by peak count, match axes, measure separations and Hellinger distance.

    ``truth_values`` is the SH-projected true FOD on the same grid as
    ``estimate.grid_values``.
    """
    k = scenario.k
    nd = len(peaks)
    errors = [float("nan")] * k
    if k and nd:
        for _, t, e in match_peaks(peaks, scenario.directions).pairs:
            errors[t] = e
    h, flagged = hellinger(estimate.grid_values, truth_values, weights, return_flag=True)
    return TrialResult(
        scenario_id=scenario.id,
        replicate=int(replicate),
        method=estimate.method,
        classification=classify(nd, k),
        n_detected=nd,
        errors=tuple(errors),
        separations=tuple(peaks.separations()),
        hellinger=h,
        runtime=float(runtime),
        note="degenerate" if (flagged or estimate.degenerate) else "",
    )


@dataclass
class ScenarioSummary:
    scenario_id: str
    method: str
    reps: int
    correct: float
    under: float
    over: float
    mean_errors: tuple = ()
    mean_separation: float = float("nan")
    true_separation: float | None = None
    hellinger_mean: float = float("nan")
    hellinger_sd: float = float("nan")
    failed: int = 0
    runtime_mean: float = float("nan")

    @property
    def separation_bias(self) -> float:
        if self.true_separation is None:
            return float("nan")
        return self.mean_separation - self.true_separation

    @property
    def separation_bias_pct(self) -> float:
        if not self.true_separation:
            return float("nan")
        return 100.0 * self.separation_bias / self.true_separation


def _mean(vals) -> float:
    vals = [v for v in vals if not math.isnan(v)]
    return float(math.fsum(vals) / len(vals)) if vals else float("nan")


def summarize(trials, true_separation: float | None = None) -> ScenarioSummary:
    """Rates over scored trials; angular means over correct trials only.

    Trials are sorted by replicate first so the result does not depend on
    input order. Failed trials are counted but excluded from the rates.
    """
    trials = sorted(trials, key=lambda t: (t.replicate, t.classification))
    if not trials:
        raise ConfigurationError("no trials to summarize")
    ids = {(t.scenario_id, t.method) for t in trials}
    if len(ids) != 1:
        raise ConfigurationError(f"trials mix scenarios/methods: {sorted(ids)}")
    sid, method = ids.pop()
    scored = [t for t in trials if t.classification != "failed"]
    n = len(scored)
    failed = len(trials) - n
    if n == 0:
        return ScenarioSummary(sid, method, 0, float("nan"), float("nan"), float("nan"), failed=failed)
    counts = {c: sum(t.classification == c for t in scored) for c in ("correct", "under", "over")}
    good = [t for t in scored if t.classification == "correct"]
    k = max((len(t.errors) for t in scored), default=0)
    errs = tuple(_mean(t.errors[i] for t in good) for i in range(k))
    seps = [s for t in good for s in t.separations[:1]] if k == 2 else []
    h = np.array([t.hellinger for t in scored])
    return ScenarioSummary(
        scenario_id=sid,
        method=method,
        reps=n,
        correct=counts["correct"] / n,
        under=counts["under"] / n,
        over=counts["over"] / n,
        mean_errors=errs,
        mean_separation=_mean(seps),
        true_separation=true_separation,
        hellinger_mean=float(h.mean()),
        hellinger_sd=float(h.std(ddof=1)) if n > 1 else 0.0,
        failed=failed,
        runtime_mean=_mean(t.runtime for t in scored),
    )


def summarize_all(trials, separations: dict | None = None) -> list[ScenarioSummary]:
    """One summary per (scenario, method), in sorted key order."""
    groups: dict = {}
    for t in trials:
        groups.setdefault((t.scenario_id, t.method), []).append(t)
    separations = separations or {}
    return [summarize(groups[key], separations.get(key[0])) for key in sorted(groups)]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else f"{x:.6f}"


TRIAL_COLUMNS = [
    "scenario", "replicate", "method", "classification", "n_detected",
    "error_1", "error_2", "error_3", "separations", "hellinger", "runtime_s", "note",
]
SUMMARY_COLUMNS = [
    "scenario", "method", "reps", "Correct", "Under", "Over",
    "Error-1", "Error-2", "Error-3", "Mean Sep.", "Sep. bias", "Sep. bias %",
    "Mean H-dist.", "SD H-dist.", "failed",
]


def _write(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trials_csv(trials, include_runtime: bool = True) -> str:
    rows = []
    for t in sorted(trials, key=lambda t: (t.scenario_id, t.method, t.replicate)):
        errs = list(t.errors) + [float("nan")] * (MAX_FIBRES - len(t.errors))
        rows.append([
            t.scenario_id, t.replicate, t.method, t.classification, t.n_detected,
            *(_fmt(e) for e in errs[:MAX_FIBRES]),
            ";".join(_fmt(s) for s in t.separations),
            _fmt(t.hellinger),
            _fmt(t.runtime) if include_runtime else "",
            t.note,
        ])
    return _write(rows, TRIAL_COLUMNS)


def summary_csv(summaries) -> str:
    rows = []
    for s in summaries:
        errs = list(s.mean_errors) + [float("nan")] * (MAX_FIBRES - len(s.mean_errors))
        rows.append([
            s.scenario_id, s.method, s.reps,
            _fmt(s.correct), _fmt(s.under), _fmt(s.over),
            *(_fmt(e) for e in errs[:MAX_FIBRES]),
            _fmt(s.mean_separation), _fmt(s.separation_bias), _fmt(s.separation_bias_pct),
            _fmt(s.hellinger_mean), _fmt(s.hellinger_sd), s.failed,
        ])
    return _write(rows, SUMMARY_COLUMNS)


def write_trials_csv(trials, path, include_runtime: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(trials_csv(trials, include_runtime))


def write_summary_csv(summaries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(summary_csv(summaries))
