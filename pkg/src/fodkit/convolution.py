"""Axially symmetric response kernels and the needlet regression design.

The signal along gradient ``g`` is ``S(g) = int R(<g, y>) F(y) dy``. In the
real symmetric SH basis this is diagonal: ``s_lm = sqrt(4pi/(2l+1)) r_l f_lm``
with ``r_l = <R, Phi_l0>``, which gives the linear model ``y = Phi R C beta``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .admm import FactoredMatrix
from .errors import ConfigurationError
from .needlets import NeedletFrame, build_frame, c_star_matrix, transition_matrix
from .sphere import SHBasis, SphericalGrid, legendre_table, sh_matrix

logger = logging.getLogger(__name__)

__all__ = [
    "ResponseFunction",
    "RotationalCoeffs",
    "DesignProblem",
    "rotational_harmonics",
    "response_diag",
    "assemble_design",
    "forward_signal",
    "frame_matrices",
]

GAUSS_NODES = 64


@dataclass(frozen=True)
class ResponseFunction:
    """Single-tensor kernel ``R(t) = s0 exp(-b (lambda1 (1 - t^2) + lambda3 t^2))``.

    Diffusivities in mm^2/s, ``b`` in s/mm^2. ``t`` is the cosine between the
    gradient and the fibre axis.
    """

    s0: float = 1.0
    b: float = 1000.0
    lambda1: float = 1e-4
    lambda3: float = 1e-3

    def __post_init__(self):
        if not (self.s0 > 0 and self.b > 0 and self.lambda1 > 0 and self.lambda3 >= self.lambda1):
            raise ConfigurationError(f"invalid response parameters {self}")

    @classmethod
    def from_ratio(cls, b: float, lambda3: float = 1e-3, ratio: float = 10.0, s0: float = 1.0):
        return cls(s0=s0, b=b, lambda1=lambda3 / ratio, lambda3=lambda3)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.s0 * np.exp(-self.b * (self.lambda1 * (1.0 - t * t) + self.lambda3 * t * t))

    def to_dict(self) -> dict:
        return {"s0": self.s0, "b": self.b, "lambda1": self.lambda1, "lambda3": self.lambda3}


@dataclass(frozen=True, eq=False)
class RotationalCoeffs:
    """``r[l] = <R, Phi_l0>`` for ``l = 0..l_max`` (odd entries are zero)."""

    r: np.ndarray

    @property
    def l_max(self) -> int:
        return len(self.r) - 1


def rotational_harmonics(resp, l_max: int, nodes: int = GAUSS_NODES) -> RotationalCoeffs:
    """``r_l = 2 pi int_{-1}^{1} R(t) sqrt((2l+1)/4pi) P_l(t) dt`` by Gauss-Legendre.

    ``resp`` is any callable kernel of ``t``.
    """
    t, w = np.polynomial.legendre.leggauss(nodes)
    p = legendre_table(l_max, t)
    l = np.arange(l_max + 1)
    r = 2.0 * math.pi * np.sqrt((2 * l + 1) / (4.0 * math.pi)) * (p @ (w * resp(t)))
    r[1::2] = 0.0
    r.setflags(write=False)
    return RotationalCoeffs(r)


def _response_vector(r: RotationalCoeffs, basis: SHBasis) -> np.ndarray:
    if r.l_max < basis.l_max:
        raise ConfigurationError(f"rotational harmonics cover l <= {r.l_max}, basis needs {basis.l_max}")
    l = basis.degrees
    return np.sqrt(4.0 * math.pi / (2 * l + 1)) * r.r[l]


def response_diag(r: RotationalCoeffs, basis: SHBasis | None = None) -> np.ndarray:
    """Diagonal ``L x L`` matrix with ``sqrt(4pi/(2l+1)) r_l`` repeated per block."""
    basis = basis or SHBasis(r.l_max - r.l_max % 2)
    return np.diag(_response_vector(r, basis))


@lru_cache(maxsize=8)
def frame_matrices(l_max: int):
    """``(frame, C*, C)`` for a given ``l_max``; cached, arrays read-only."""
    frame = build_frame(l_max)
    c_star = c_star_matrix(frame, SHBasis(l_max))
    c = transition_matrix(c_star)
    c_star.setflags(write=False)
    c.setflags(write=False)
    return frame, c_star, c


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """Everything needed to fit needlet coefficients for one acquisition.

    Both ``a = Phi R C`` and the evaluation map ``Phi_eval C`` share the right
    factor ``C`` (``L x N``); solvers receive them in that factored form. The
    nonnegativity constraint reads ``-Phi_eval C beta <= 0``.
    """

    basis: SHBasis
    frame: NeedletFrame
    response: ResponseFunction
    gradient_grid: SphericalGrid
    eval_grid: SphericalGrid
    phi: np.ndarray
    r_diag: np.ndarray
    c: np.ndarray
    c_star: np.ndarray
    phi_eval: np.ndarray
    y: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def size(self) -> int:
        return self.c.shape[1]

    @property
    def phi_r(self) -> np.ndarray:
        return self.phi * self.r_diag

    @property
    def a_factored(self) -> FactoredMatrix:
        return FactoredMatrix(self.phi_r, self.c)

    @property
    def constraint_factored(self) -> FactoredMatrix:
        """``-Phi_eval C`` in factored form (the ``C x <= d`` matrix with ``d = 0``)."""
        return FactoredMatrix(-self.phi_eval, self.c)

    @property
    def a(self) -> np.ndarray:
        return self.phi_r @ self.c

    @property
    def evaluation(self) -> np.ndarray:
        """``Phi_eval C``: needlet coefficients to evaluation-grid values."""
        return self.phi_eval @ self.c

    @property
    def constraint(self) -> np.ndarray:
        return -self.evaluation

    def with_signal(self, y) -> "DesignProblem":
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise ConfigurationError(f"signal has shape {y.shape}, design expects ({self.n},)")
        return DesignProblem(**{**self.__dict__, "y": y})

    def condition_number(self) -> float:
        s = np.linalg.svd(self.a, compute_uv=False)
        s = s[s > s[0] * 1e-14]
        return float(s[0] / s[-1])


def assemble_design(
    basis: SHBasis,
    frame: NeedletFrame | None,
    resp: ResponseFunction,
    gradient_grid: SphericalGrid,
    eval_grid: SphericalGrid,
    nodes: int = GAUSS_NODES,
) -> DesignProblem:
    """Build the (signal-free) regression problem ``y = Phi R C beta``."""
    if frame is None:
        frame = build_frame(basis.l_max)
    if frame.l_max != basis.l_max:
        raise ConfigurationError(f"frame built for l_max={frame.l_max}, basis has l_max={basis.l_max}")
    _, c_star, c = frame_matrices(basis.l_max)
    phi = sh_matrix(basis, gradient_grid)
    r_diag = _response_vector(rotational_harmonics(resp, basis.l_max, nodes), basis)
    phi_eval = sh_matrix(basis, eval_grid)
    for arr in (phi, r_diag, phi_eval):
        arr.setflags(write=False)
    design = DesignProblem(
        basis=basis,
        frame=frame,
        response=resp,
        gradient_grid=gradient_grid,
        eval_grid=eval_grid,
        phi=phi,
        r_diag=r_diag,
        c=c,
        c_star=c_star,
        phi_eval=phi_eval,
        meta={
            "l_max": basis.l_max,
            "j_max": frame.j_max,
            "gradient_grid": gradient_grid.name,
            "eval_grid": eval_grid.name,
            "response": resp.to_dict(),
        },
    )
    kappa = design.condition_number()
    design.meta["condition_number"] = kappa
    logger.debug("design %s: condition number %.3g", gradient_grid.name, kappa)
    if kappa > 1e8:
        logger.warning("design matrix is ill-conditioned (kappa = %.3g)", kappa)
    return design


def forward_signal(f, resp, gradient_grid: SphericalGrid, basis: SHBasis | None = None) -> np.ndarray:
    """Noiseless signal ``Phi R f`` of an FOD given by SH coefficients ``f``."""
    f = np.asarray(f, dtype=float)
    if basis is None:
        l_max = int(round((math.sqrt(8 * f.size + 1) - 3) / 2))
        basis = SHBasis(l_max)
    if f.size != basis.size:
        raise ConfigurationError(f"coefficient vector has length {f.size}, basis has {basis.size}")
    r = rotational_harmonics(resp, basis.l_max)
    return sh_matrix(basis, gradient_grid) @ (_response_vector(r, basis) * f)
