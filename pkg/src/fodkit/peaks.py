"""Peak detection on densely sampled FODs and axial geometry helpers."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError
from .sphere import SphericalGrid, UnitDirection, axial_angle

__all__ = [
    "PeakSet",
    "Match",
    "detect_peaks",
    "angular_error",
    "match_peaks",
    "canonical_axis",
    "neighbourhoods",
]

CONSTANT_RTOL = 1e-10


def canonical_axis(v) -> np.ndarray:
    """Representative of ``+-v`` on the upper hemisphere (z > 0, then x > 0, then y > 0)."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    for c in (v[2], v[0], v[1]):
        if abs(c) > 1e-12:
            return v if c > 0 else -v
    return v


@dataclass(frozen=True, eq=False)
class PeakSet:
    """Detected fibre axes sorted by descending height."""

    directions: np.ndarray  # (k, 3) unit vectors on the canonical hemisphere
    heights: np.ndarray
    params: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.heights)

    @property
    def peaks(self) -> list:
        return [(UnitDirection.from_xyz(d), float(h)) for d, h in zip(self.directions, self.heights)]

    def separations(self) -> list[float]:
        """Axial angles between all detected pairs."""
        return [
            float(axial_angle(self.directions[i], self.directions[j]))
            for i, j in itertools.combinations(range(len(self)), 2)
        ]

    def to_dict(self) -> dict:
        out = []
        for (u, h), d in zip(self.peaks, self.directions):
            out.append({
                "theta_deg": math.degrees(u.theta),
                "phi_deg": math.degrees(u.phi),
                "xyz": d.tolist(),
                "height": h,
            })
        return {"peaks": out, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "PeakSet":
        d = np.array([p["xyz"] for p in data["peaks"]], dtype=float).reshape(-1, 3)
        h = np.array([p["height"] for p in data["peaks"]], dtype=float)
        return cls(d, h, dict(data.get("params", {})))


@lru_cache(maxsize=16)
def _neighbour_table(grid: SphericalGrid, radius_deg: float) -> np.ndarray:
    chord = 2.0 * math.sin(math.radians(radius_deg) / 2.0)
    tree = cKDTree(grid.xyz)
    lists = tree.query_ball_point(grid.xyz, chord)
    width = max(len(l) for l in lists)
    table = np.empty((len(lists), width), dtype=np.intp)
    for i, l in enumerate(lists):
        table[i, : len(l)] = l
        table[i, len(l):] = i  # pad with self
    table.setflags(write=False)
    return table


def neighbourhoods(grid: SphericalGrid, neighborhood_deg: float = 25.0) -> np.ndarray:
    """Padded index table of grid points within ``neighborhood_deg / 2`` of each point."""
    return _neighbour_table(grid, float(neighborhood_deg) / 2.0)


def _cluster(xyz: np.ndarray, heights: np.ndarray, cluster_deg: float):
    """Greedy axial clustering in height order; returns (directions, heights)."""
    order = np.argsort(-heights, kind="stable")
    seeds, members = [], []
    for i in order:
        v = xyz[i]
        for c, seed in enumerate(seeds):
            if axial_angle(v, seed) <= cluster_deg:
                members[c].append(i)
                break
        else:
            seeds.append(v)
            members.append([i])
    dirs, hts = [], []
    for seed, idx in zip(seeds, members):
        vs = xyz[idx]
        signs = np.where(vs @ seed < 0, -1.0, 1.0)
        dirs.append(canonical_axis((vs * signs[:, None]).sum(axis=0)))
        hts.append(float(heights[idx].max()))
    return np.array(dirs).reshape(-1, 3), np.array(hts)


def detect_peaks(
    grid_values,
    grid: SphericalGrid,
    neighborhood_deg: float = 25.0,
    alpha: float = 0.25,
    cluster_deg: float = 5.0,
) -> PeakSet:
    """Local maxima over a ~``neighborhood_deg`` window, pruned and clustered.

    A point is a candidate when its value is at least every neighbour's. Candidates
    below ``alpha`` times the global maximum are dropped, the rest clustered
    within ``cluster_deg`` (axially) and folded to one hemisphere. Constant
    fields give no peaks.
    """
    v = np.asarray(grid_values, dtype=float)
    if len(grid) == 0:
        raise ConfigurationError("empty grid")
    if v.shape != (len(grid),):
        raise ConfigurationError(f"{v.size} values for a grid of {len(grid)} points")
    params = {"neighborhood_deg": neighborhood_deg, "alpha": alpha, "cluster_deg": cluster_deg}
    vmax, vmin = float(v.max()), float(v.min())
    if vmax <= 0.0 or vmax - vmin <= CONSTANT_RTOL * max(abs(vmax), abs(vmin)):
        return PeakSet(np.zeros((0, 3)), np.zeros(0), params)
    table = neighbourhoods(grid, neighborhood_deg)
    is_max = np.all(v[:, None] >= v[table], axis=1)
    cand = np.flatnonzero(is_max & (v >= alpha * vmax))
    dirs, hts = _cluster(grid.xyz[cand], v[cand], cluster_deg)
    # cluster means can drift together; merge until separated
    while len(hts) > 1:
        pairs = [
            (i, j) for i, j in itertools.combinations(range(len(hts)), 2)
            if axial_angle(dirs[i], dirs[j]) <= cluster_deg
        ]
        if not pairs:
            break
        dirs, hts = _cluster(dirs, hts, cluster_deg)
    order = np.argsort(-hts, kind="stable")
    return PeakSet(dirs[order], hts[order], params)


def angular_error(estimate, truth) -> float:
    """Axial angle in degrees between two directions."""
    def xyz(u):
        return u.xyz if isinstance(u, UnitDirection) else np.asarray(u, dtype=float)

    return float(axial_angle(xyz(estimate), xyz(truth)))


@dataclass(frozen=True)
class Match:
    pairs: tuple  # (detected index, truth index, error in degrees)
    missed: tuple  # unmatched truth indices
    extra: tuple  # unmatched detected indices

    @property
    def errors_by_truth(self) -> dict:
        return {t: e for _, t, e in self.pairs}

    @property
    def total_error(self) -> float:
        return float(sum(e for _, _, e in self.pairs))


def match_peaks(detected, truth) -> Match:
    """Minimum total axial error one-to-one assignment (exhaustive search)."""
    det = detected.directions if isinstance(detected, PeakSet) else np.asarray(detected, dtype=float)
    det = np.asarray(det, dtype=float).reshape(-1, 3)
    tru = np.array([u.xyz if isinstance(u, UnitDirection) else u for u in truth], dtype=float).reshape(-1, 3)
    nd, nt = len(det), len(tru)
    err = axial_angle(det[:, None, :], tru[None, :, :]) if nd and nt else np.zeros((nd, nt))
    best, best_cost = (), math.inf
    if nd >= nt:
        for perm in itertools.permutations(range(nd), nt):
            cost = sum(err[d, t] for t, d in enumerate(perm))
            if cost < best_cost - 1e-12:
                best, best_cost = tuple((d, t) for t, d in enumerate(perm)), cost
    else:
        for perm in itertools.permutations(range(nt), nd):
            cost = sum(err[d, t] for d, t in enumerate(perm))
            if cost < best_cost - 1e-12:
                best, best_cost = tuple((d, t) for d, t in enumerate(perm)), cost
    pairs = tuple(sorted((d, t, float(err[d, t])) for d, t in best))
    used_d = {d for d, _, _ in pairs}
    used_t = {t for _, t, _ in pairs}
    return Match(
        pairs=pairs,
        missed=tuple(t for t in range(nt) if t not in used_t),
        extra=tuple(d for d in range(nd) if d not in used_d),
    )
