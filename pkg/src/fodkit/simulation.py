"""Synthetic fibre configurations, noiseless signals and Rician noise."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .convolution import ResponseFunction
from .errors import ConfigurationError
from .sphere import SHBasis, UnitDirection, _as_xyz, eval_real_sym_sh

__all__ = [
    "Scenario",
    "TruthProjection",
    "fiber_directions",
    "make_scenario",
    "project_truth",
    "truth_grid_values",
    "noiseless_signal",
    "add_rician_noise",
    "standard_scenarios",
    "scenario_by_id",
    "replicate_rng",
    "simulate_replicate",
    "truncation_error",
    "LAMBDA3",
    "DIFFUSIVITY_RATIO",
]

LAMBDA3 = 1e-3
DIFFUSIVITY_RATIO = 10.0
K1_DIRECTION = (60.0, 20.0)  # (theta, phi) in degrees
K3_SEPARATIONS = (90.0, 75.0, 60.0)
SEPARATIONS = (90.0, 75.0, 60.0, 45.0, 30.0)
HIGH_B_SEPARATIONS = (45.0, 30.0)


@dataclass(frozen=True)
class Scenario:
    """One simulation setting. ``fibers`` holds ``(UnitDirection, weight)`` pairs."""

    id: str
    fibers: tuple = ()
    b: float = 1000.0
    snr: float = 20.0
    s0: float = 1.0
    n_gradients: int = 41
    l_max: int = 8
    reps: int = 100
    seed: int = 0
    sep: float | None = None
    response: ResponseFunction = field(default=None)

    def __post_init__(self):
        if self.response is None:
            object.__setattr__(
                self, "response", ResponseFunction.from_ratio(self.b, LAMBDA3, DIFFUSIVITY_RATIO, self.s0)
            )
        if not self.snr > 0:
            raise ConfigurationError("snr must be positive")
        if self.reps < 1:
            raise ConfigurationError("reps must be positive")
        if self.fibers:
            w = np.array([wk for _, wk in self.fibers], dtype=float)
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ConfigurationError(f"fibre weights must be positive and sum to 1, got {w}")

    @property
    def k(self) -> int:
        return len(self.fibers)

    @property
    def sigma(self) -> float:
        return self.s0 / self.snr

    @property
    def directions(self) -> list[UnitDirection]:
        return [u for u, _ in self.fibers]

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.fibers], dtype=float)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "k": self.k,
            "fibers": [
                {"theta": u.theta, "phi": u.phi, "xyz": u.xyz.tolist(), "weight": w} for u, w in self.fibers
            ],
            "sep": self.sep,
            "b": self.b,
            "snr": self.snr,
            "s0": self.s0,
            "n_gradients": self.n_gradients,
            "l_max": self.l_max,
            "reps": self.reps,
            "seed": self.seed,
            "response": self.response.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        fibers = tuple((UnitDirection(f["theta"], f["phi"]), float(f["weight"])) for f in data["fibers"])
        return cls(
            id=data["id"], fibers=fibers, b=data["b"], snr=data["snr"], s0=data["s0"],
            n_gradients=data["n_gradients"], l_max=data["l_max"], reps=data["reps"],
            seed=data["seed"], sep=data.get("sep"), response=ResponseFunction(**data["response"]),
        )


@dataclass(frozen=True, eq=False)
class TruthProjection:
    f_star: np.ndarray
    l_max: int


def fiber_directions(k: int, sep: float | None = None) -> list[UnitDirection]:
    """Fibre axes for the standard configurations.

    ``k=1``: theta=60, phi=20 degrees, an axis off every coordinate plane whose
    distance to the nearest evaluation-grid vertex (1.57 deg) is typical for
    a random axis, so peak quantization is neither zero nor worst case.
    ``k=2``: equatorial axes at ``+-sep/2`` about x.
    ``k=3``: x, y and a third axis at 75 deg from x and 60 deg from y.
    """
    if k == 0:
        return []
    if k == 1:
        return [UnitDirection.from_degrees(*K1_DIRECTION)]
    if k == 2:
        if sep is None or not 0 < sep <= 90:
            raise ConfigurationError("two-fibre configurations need 0 < sep <= 90")
        return [UnitDirection.from_degrees(90.0, sep / 2.0), UnitDirection.from_degrees(90.0, -sep / 2.0)]
    if k == 3:
        a12, a13, a23 = (math.radians(s) for s in K3_SEPARATIONS)
        u1 = np.array([1.0, 0.0, 0.0])
        u2 = np.array([math.cos(a12), math.sin(a12), 0.0])
        c1, c2 = math.cos(a13), math.cos(a23)
        y3 = (c2 - c1 * u2[0]) / u2[1]
        u3 = np.array([c1, y3, math.sqrt(1.0 - c1 * c1 - y3 * y3)])
        return [UnitDirection.from_xyz(u) for u in (u1, u2, u3)]
    raise ConfigurationError(f"unsupported fibre count {k}")


def _weights(k: int) -> tuple:
    return {0: (), 1: (1.0,), 2: (0.5, 0.5), 3: (0.3, 0.3, 0.4)}[k]


def scenario_id(k: int, b: float, n: int, snr: float, sep: float | None = None) -> str:
    sep_part = f"_sep{sep:g}" if k == 2 else ""
    return f"{k}fib{sep_part}_b{b:g}_n{n}_snr{snr:g}"


def make_scenario(
    k: int, b: float = 1000.0, n: int = 41, snr: float = 20.0, sep: float | None = None,
    reps: int = 100, seed: int = 0, s0: float = 1.0, l_max: int = 8,
) -> Scenario:
    dirs = fiber_directions(k, sep)
    return Scenario(
        id=scenario_id(k, b, n, snr, sep),
        fibers=tuple(zip(dirs, _weights(k))),
        b=float(b), snr=float(snr), s0=float(s0), n_gradients=int(n), l_max=int(l_max),
        reps=int(reps), seed=int(seed), sep=None if k != 2 else float(sep),
    )


def standard_scenarios(reps: int = 100, seed: int = 0) -> list[Scenario]:
    """Full simulation grid.

    b = 5000 is run only for the small separations (45 and 30 deg).
    """
    out = []
    for n in (41, 81, 321):
        for snr in (20.0, 50.0):
            for b in (1000.0, 3000.0, 5000.0):
                if b != 5000.0:
                    out.append(make_scenario(0, b, n, snr, reps=reps, seed=seed))
                    out.append(make_scenario(1, b, n, snr, reps=reps, seed=seed))
                    out.append(make_scenario(3, b, n, snr, reps=reps, seed=seed))
                seps = HIGH_B_SEPARATIONS if b == 5000.0 else SEPARATIONS
                for sep in seps:
                    out.append(make_scenario(2, b, n, snr, sep=sep, reps=reps, seed=seed))
    return out


def scenario_by_id(sid: str, reps: int = 100, seed: int = 0) -> Scenario:
    for sc in standard_scenarios(reps, seed):
        if sc.id == sid:
            return sc
    raise ConfigurationError(f"unknown scenario id {sid!r}")


def project_truth(scenario: Scenario, basis: SHBasis | None = None) -> TruthProjection:
    """SH coefficients of the delta mixture (or of the uniform density when K = 0)."""
    basis = basis or SHBasis(scenario.l_max)
    f = np.zeros(basis.size)
    if scenario.k == 0:
        f[0] = 1.0 / (2.0 * math.sqrt(math.pi))
    else:
        xyz = np.array([u.xyz for u in scenario.directions])
        f = scenario.weights @ eval_real_sym_sh(basis, xyz).reshape(len(xyz), -1)
    return TruthProjection(f, basis.l_max)


def truth_grid_values(truth: TruthProjection, eval_matrix) -> np.ndarray:
    return np.asarray(eval_matrix) @ truth.f_star


def noiseless_signal(scenario: Scenario, gradients) -> np.ndarray:
    """Closed-form convolution of the fibre mixture with the response kernel."""
    g = _as_xyz(gradients.xyz if hasattr(gradients, "xyz") else gradients)
    resp = scenario.response
    if scenario.k == 0:
        t, w = np.polynomial.legendre.leggauss(64)
        return np.full(len(g), 0.5 * float(w @ resp(t)))
    xyz = np.array([u.xyz for u in scenario.directions])
    return resp(g @ xyz.T) @ scenario.weights


def truncation_error(scenario: Scenario, gradients, l_max: int = 8) -> float:
    """RMS gap between the exact signal and the signal of the degree-``l_max`` truth.

    This is the model error a band-limited fit cannot remove even without noise.
    """
    from .convolution import forward_signal

    g = gradients.xyz if hasattr(gradients, "xyz") else gradients
    exact = noiseless_signal(scenario, g)
    approx = forward_signal(project_truth(scenario, SHBasis(l_max)).f_star, scenario.response, _as_xyz(g))
    return float(np.sqrt(np.mean((exact - approx) ** 2)))


def add_rician_noise(signal, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Magnitude of the signal plus complex Gaussian noise of scale ``sigma`` per channel."""
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive")
    s = np.asarray(signal, dtype=float)
    e = rng.standard_normal((2,) + s.shape) * sigma
    return np.hypot(s + e[0], e[1])


def replicate_rng(scenario_id_: str, replicate: int, master_seed: int = 0) -> np.random.Generator:
    """PCG64 stream keyed by ``(master seed, crc32(scenario id), replicate)``."""
    key = zlib.crc32(scenario_id_.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), key, int(replicate)]))


def simulate_replicate(scenario: Scenario, gradients, replicate: int, clean=None) -> np.ndarray:
    if clean is None:
        clean = noiseless_signal(scenario, gradients)
    rng = replicate_rng(scenario.id, replicate, scenario.seed)
    return add_rician_noise(clean, scenario.sigma, rng)


def with_reps(scenario: Scenario, reps: int) -> Scenario:
    return replace(scenario, reps=int(reps))
