"""Symmetrized spherical needlet frame and its SH transition matrices.

The frame consists of the constant harmonic followed, level by level, by one
needlet per antipodal pair of HEALPix pixel centres. For a symmetric function
``F`` with SH coefficients ``f`` the needlet coefficients are ``beta = C* f``
and ``f = C beta`` recovers ``f`` with ``C`` the left pseudo-inverse of ``C*``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg

from .errors import ConfigurationError, DomainError, NumericalError
from .sphere import SHBasis, UnitDirection, _as_xyz, legendre_table, sh_matrix, sph2cart

__all__ = [
    "NeedletWindow",
    "QuadratureSet",
    "NeedletFrame",
    "build_window",
    "healpix_centers",
    "build_frame",
    "eval_needlet",
    "needlet_matrix",
    "c_star_matrix",
    "transition_matrix",
]


# -- Littlewood-Paley window ---------------------------------------------------


def _bump(t):
    return math.exp(-1.0 / (1.0 - t * t)) if -1.0 < t < 1.0 else 0.0


@lru_cache(maxsize=1)
def _bump_mass() -> float:
    return integrate.quad(_bump, -1.0, 1.0, epsabs=1e-15, epsrel=1e-13)[0]


@lru_cache(maxsize=4096)
def _bump_cdf(u: float) -> float:
    if u <= -1.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return integrate.quad(_bump, -1.0, u, epsabs=1e-15, epsrel=1e-13)[0] / _bump_mass()


def _plateau(t: float, base: float) -> float:
    # 1 on [0, 1/B], smooth descent on [1/B, 1], 0 beyond
    if t <= 1.0 / base:
        return 1.0
    if t >= 1.0:
        return 0.0
    return _bump_cdf(1.0 - 2.0 * base / (base - 1.0) * (t - 1.0 / base))


@dataclass(frozen=True)
class NeedletWindow:
    """Smooth window ``b`` with ``b^2(y) = phi(y/B) - phi(y)``.

    ``phi`` is the normalized integral of the bump ``exp(-1/(1-t^2))`` mapped
    onto ``[1/B, 1]``, so ``b`` is ``C^inf``, positive exactly on ``(1/B, B)``
    and the squares telescope: ``sum_j b^2(y / B^j) = 1`` for ``y >= 1``.
    """

    base: float = 2.0

    def squared(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        flat = [
            max(_plateau(v / self.base, self.base) - _plateau(v, self.base), 0.0) if v >= 0 else 0.0
            for v in y.ravel()
        ]
        return np.array(flat).reshape(y.shape)

    def __call__(self, y):
        out = np.sqrt(self.squared(y))
        return out if out.ndim else float(out)


def build_window() -> NeedletWindow:
    return NeedletWindow(2.0)


# -- HEALPix pixel centres -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadratureSet:
    j: int
    xyz: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.xyz)

    def point(self, k: int) -> UnitDirection:
        return UnitDirection.from_xyz(self.xyz[k])


def _healpix_ring_centres(nside: int) -> np.ndarray:
    z, phi = [], []
    for i in range(1, 4 * nside):
        if i < nside or i > 3 * nside:
            ii = i if i < nside else 4 * nside - i
            zi = 1.0 - ii * ii / (3.0 * nside * nside)
            zi = zi if i < nside else -zi
            jj = np.arange(1, 4 * ii + 1)
            z.append(np.full(jj.size, zi))
            phi.append(math.pi / (2.0 * ii) * (jj - 0.5))
        else:
            zi = 4.0 / 3.0 - 2.0 * i / (3.0 * nside)
            shift = (i - nside + 1) % 2
            jj = np.arange(1, 4 * nside + 1)
            z.append(np.full(jj.size, zi))
            phi.append(math.pi / (2.0 * nside) * (jj - shift / 2.0))
    z = np.concatenate(z)
    phi = np.concatenate(phi)
    return sph2cart(np.arccos(z), phi)


def healpix_centers(j: int) -> QuadratureSet:
    """Ring-ordered HEALPix pixel centres at ``N_side = 2**(j-1)``.

    There are ``12 * 4**(j-1)`` equal-area pixels, each weighted ``4 pi / N_pix``.
    """
    if j < 1:
        raise DomainError(f"needlet level must be >= 1, got {j}")
    nside = 2 ** (j - 1)
    xyz = _healpix_ring_centres(nside)
    weights = np.full(len(xyz), 4.0 * math.pi / len(xyz))
    xyz.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureSet(j, xyz, weights)


def _antipodal_pairs(xyz: np.ndarray, tol_rad: float = 1e-9):
    """Representatives on the canonical half-sphere and the index of each partner."""
    cos = xyz @ xyz.T
    partner = np.argmin(cos, axis=1)
    # chord |x + x'| resolves tiny angular gaps where arccos cannot
    gap = np.linalg.norm(xyz + xyz[partner], axis=1)
    if np.any(gap > tol_rad) or np.any(partner[partner] != np.arange(len(xyz))):
        raise NumericalError("quadrature points do not come in antipodal pairs")
    reps = []
    for i, (x, y, z) in enumerate(xyz):
        if z > 1e-12 or (abs(z) <= 1e-12 and (y > 1e-12 or (abs(y) <= 1e-12 and x > 0))):
            reps.append(i)
    reps = np.array(reps)
    if len(reps) * 2 != len(xyz):
        raise NumericalError("failed to pick one representative per antipodal pair")
    return reps, partner[reps]


# -- the frame -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NeedletFrame:
    """Symmetrized needlet frame sized for SH functions up to ``l_max``.

    Column 0 is the constant harmonic; then level ``j = 1..j_max`` contributes
    ``6 * 4**(j-1)`` symmetrized needlets, one per antipodal pair of pixel
    centres (representative on the upper half). ``centres[c]`` is the
    representative centre of column ``c`` (undefined for column 0).
    """

    l_max: int
    j_max: int
    window: NeedletWindow
    levels: tuple
    representatives: tuple
    partners: tuple

    @property
    def size(self) -> int:
        return 1 + sum(len(r) for r in self.representatives)

    @property
    def offsets(self) -> list[int]:
        out, pos = [], 1
        for reps in self.representatives:
            out.append(pos)
            pos += len(reps)
        return out

    def column(self, j: int, k: int) -> int:
        if not 1 <= j <= self.j_max or not 0 <= k < len(self.representatives[j - 1]):
            raise IndexError(f"no needlet (j={j}, k={k})")
        return self.offsets[j - 1] + k

    def index(self, column: int) -> tuple[int, int]:
        """Inverse of :meth:`column`; returns ``(0, 0)`` for the constant."""
        if column == 0:
            return 0, 0
        for j, off in enumerate(self.offsets, start=1):
            if off <= column < off + len(self.representatives[j - 1]):
                return j, column - off
        raise IndexError(column)

    def centre(self, j: int, k: int) -> np.ndarray:
        self.column(j, k)
        return self.levels[j - 1].xyz[self.representatives[j - 1][k]]

    def weight(self, j: int) -> float:
        return float(self.levels[j - 1].weights[0])

    @property
    def centres(self) -> np.ndarray:
        out = [np.full(3, np.nan)]
        for q, reps in zip(self.levels, self.representatives):
            out.extend(q.xyz[reps])
        return np.array(out)

    @property
    def column_levels(self) -> np.ndarray:
        return np.concatenate([[0]] + [np.full(len(r), j) for j, r in enumerate(self.representatives, 1)])


def max_level(l_max: int) -> int:
    if l_max < 2:
        raise ConfigurationError("needlet frame needs l_max >= 2")
    return math.ceil(math.log2(l_max) + 1)


@lru_cache(maxsize=8)
def build_frame(l_max: int) -> NeedletFrame:
    j_max = max_level(l_max)
    levels, reps, partners = [], [], []
    for j in range(1, j_max + 1):
        q = healpix_centers(j)
        r, p = _antipodal_pairs(q.xyz)
        levels.append(q)
        reps.append(r)
        partners.append(p)
    return NeedletFrame(l_max, j_max, build_window(), tuple(levels), tuple(reps), tuple(partners))


def _level_profile(frame: NeedletFrame, j: int, l_cap: int) -> np.ndarray:
    """``b(l / 2^j) (2l+1) / 4pi`` for l = 0..l_cap, odd l zeroed (symmetrization)."""
    l = np.arange(l_cap + 1)
    prof = frame.window(l / 2.0**j) * (2 * l + 1) / (4.0 * math.pi)
    prof[1::2] = 0.0
    return prof


def eval_needlet(frame: NeedletFrame, j: int, k: int, x, l_cap: int | None = None):
    """Symmetrized needlet ``psi_jk`` at one or more directions.

    ``psi = sqrt(lambda) sum_l b(l/2^j) (2l+1)/(4 pi) P_l(<zeta, x>)`` over
    even ``l`` (averaging with the antipodal partner cancels odd degrees).
    Without ``l_cap`` the full band ``l <= 2^(j+1)`` is used.
    """
    zeta = frame.centre(j, k)
    l_top = int(2 ** (j + 1)) if l_cap is None else min(l_cap, int(2 ** (j + 1)))
    pts = _as_xyz(x)
    t = np.clip(pts @ zeta, -1.0, 1.0)
    vals = math.sqrt(frame.weight(j)) * (_level_profile(frame, j, l_top) @ legendre_table(l_top, t))
    if isinstance(x, UnitDirection) or np.ndim(x) == 1:
        return float(vals[0])
    return vals


def needlet_matrix(frame: NeedletFrame, x, l_cap: int | None = None) -> np.ndarray:
    """Evaluate every frame element at the given points (``n x N``)."""
    pts = _as_xyz(x)
    out = np.empty((len(pts), frame.size))
    out[:, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for j in range(1, frame.j_max + 1):
        l_top = int(2 ** (j + 1)) if l_cap is None else min(l_cap, int(2 ** (j + 1)))
        prof = math.sqrt(frame.weight(j)) * _level_profile(frame, j, l_top)
        zetas = frame.levels[j - 1].xyz[frame.representatives[j - 1]]
        t = np.clip(pts @ zetas.T, -1.0, 1.0)
        off = frame.offsets[j - 1]
        out[:, off:off + len(zetas)] = np.tensordot(prof, legendre_table(l_top, t), axes=1)
    return out


def c_star_matrix(frame: NeedletFrame, basis: SHBasis | None = None) -> np.ndarray:
    """SH coefficients of the frame elements, ``N x L``.

    Entry ``(jk, lm)`` is ``sqrt(lambda_j) b(l/2^j) Phi_lm(zeta_jk)``; row 0 is
    the indicator of the constant harmonic. ``basis`` defaults to the frame's
    ``l_max``; a larger basis gives the untruncated coefficients.
    """
    basis = basis or SHBasis(frame.l_max)
    degrees = basis.degrees
    out = np.zeros((frame.size, basis.size))
    out[0, 0] = 1.0
    for j in range(1, frame.j_max + 1):
        zetas = frame.levels[j - 1].xyz[frame.representatives[j - 1]]
        scale = math.sqrt(frame.weight(j)) * frame.window(degrees / 2.0**j)
        off = frame.offsets[j - 1]
        out[off:off + len(zetas)] = sh_matrix(basis, zetas) * scale
    return out


def transition_matrix(c_star: np.ndarray, max_condition: float = 1e12) -> np.ndarray:
    """Left pseudo-inverse ``C = (C*^T C*)^{-1} C*^T`` computed through QR of ``C*``."""
    q, r = linalg.qr(c_star, mode="economic")
    sv = linalg.svdvals(r)
    if sv[-1] == 0.0 or (sv[0] / sv[-1]) ** 2 > max_condition:
        raise NumericalError(
            f"C* is rank deficient or ill-conditioned (cond(C*^T C*) = {(sv[0] / max(sv[-1], 1e-300)) ** 2:.3g})"
        )
    return linalg.solve_triangular(r, q.T)
