"""Unit-sphere geometry, Legendre polynomials and the real symmetric SH basis.

Conventions used everywhere in the package:

* directions are unit 3-vectors, or ``(theta, phi)`` with ``theta`` the polar
  (elevation) angle in ``[0, pi]`` and ``phi`` the azimuth in ``[0, 2 pi)``;
* SH columns are ordered by ``l`` ascending (even ``l`` only) and, inside each
  block, ``m`` running from ``-l`` to ``l``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "UnitDirection",
    "SphericalGrid",
    "SHBasis",
    "legendre",
    "sph2cart",
    "cart2sph",
    "eval_real_sym_sh",
    "sh_matrix",
    "symmetric_grid",
    "grid_from_id",
    "evaluation_grid",
    "gradient_grid",
    "icosphere",
    "axial_angle",
    "write_grid_csv",
    "read_grid_csv",
]

TWO_PI = 2.0 * math.pi


def sph2cart(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def cart2sph(xyz):
    """Return ``(theta, phi)`` of (not necessarily normalized) vectors."""
    xyz = np.asarray(xyz, dtype=float)
    r = np.linalg.norm(xyz, axis=-1)
    theta = np.arccos(np.clip(xyz[..., 2] / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(xyz[..., 1], xyz[..., 0]), TWO_PI)
    # mod can round 2*pi - tiny up to exactly 2*pi
    phi = np.where(phi >= TWO_PI, 0.0, phi)
    return theta, phi


@dataclass(frozen=True)
class UnitDirection:
    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi:
            raise DomainError(f"theta={self.theta} outside [0, pi]")
        if not 0.0 <= self.phi < TWO_PI:
            raise DomainError(f"phi={self.phi} outside [0, 2pi)")

    @classmethod
    def from_xyz(cls, xyz) -> "UnitDirection":
        theta, phi = cart2sph(np.asarray(xyz, dtype=float))
        return cls(float(theta), float(phi))

    @classmethod
    def from_degrees(cls, theta_deg: float, phi_deg: float) -> "UnitDirection":
        return cls(math.radians(theta_deg), math.radians(phi_deg) % TWO_PI)

    @property
    def xyz(self) -> np.ndarray:
        return sph2cart(self.theta, self.phi)

    def antipode(self) -> "UnitDirection":
        return UnitDirection.from_xyz(-self.xyz)


def axial_angle(u, v) -> np.ndarray:
    """Sign-free angle in degrees between axes ``u`` and ``v`` (broadcasts)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = np.abs(np.sum(u * v, axis=-1))
    c = c / (np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1))
    return np.degrees(np.arccos(np.clip(c, 0.0, 1.0)))


@dataclass(frozen=True, eq=False)
class SphericalGrid:
    """An ordered point set on the sphere with optional quadrature weights.

    ``faces`` holds the triangle topology for mesh-derived grids (icospheres);
    it is ``None`` for scattered sets.
    """

    xyz: np.ndarray
    weights: np.ndarray | None = None
    name: str = ""
    faces: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        xyz = np.ascontiguousarray(self.xyz, dtype=float)
        if xyz.ndim != 2 or xyz.shape[1] != 3 or len(xyz) == 0:
            raise ConfigurationError("grid must be a nonempty (n, 3) array")
        xyz = xyz / np.linalg.norm(xyz, axis=1, keepdims=True)
        xyz.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if w.shape != (len(xyz),) or np.any(w <= 0):
                raise ConfigurationError("weights must be positive, one per point")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def theta(self) -> np.ndarray:
        return cart2sph(self.xyz)[0]

    @property
    def phi(self) -> np.ndarray:
        return cart2sph(self.xyz)[1]

    def direction(self, i: int) -> UnitDirection:
        return UnitDirection.from_xyz(self.xyz[i])

    def integrate(self, values) -> float:
        if self.weights is None:
            raise ConfigurationError(f"grid {self.name!r} carries no quadrature weights")
        return float(np.dot(self.weights, values))


# -- Legendre polynomials and associated functions -------------------------


def legendre(l: int, x):
    """Legendre polynomial ``P_l(x)`` by the three-term (Bonnet) recurrence."""
    if l < 0:
        raise DomainError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise DomainError("legendre argument outside [-1, 1]")
    p_prev = np.ones_like(x)
    if l == 0:
        return p_prev if p_prev.ndim else float(p_prev)
    p = x.copy()
    for k in range(1, l):
        p, p_prev = ((2 * k + 1) * x * p - k * p_prev) / (k + 1), p
    return p if p.ndim else float(p)


def legendre_table(l_max: int, x) -> np.ndarray:
    """All ``P_0 .. P_lmax`` at ``x``; shape ``(l_max + 1,) + x.shape``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((l_max + 1,) + x.shape)
    out[0] = 1.0
    if l_max >= 1:
        out[1] = x
    for k in range(1, l_max):
        out[k + 1] = ((2 * k + 1) * x * out[k] - k * out[k - 1]) / (k + 1)
    return out


def _normalized_alf(l_max: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal associated Legendre functions including Condon-Shortley phase.

    Returns ``N[l, m, i] = sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) P_l^m(x_i)``, which
    times ``exp(i m phi)`` is the complex SH ``Y_l^m``. Computed by the
    normalized recurrences, so nothing overflows at high degree.
    """
    n = np.zeros((l_max + 1, l_max + 1, x.size))
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    n[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, l_max + 1):
        n[m, m] = -math.sqrt((2 * m + 1) / (2.0 * m)) * s * n[m - 1, m - 1]
    for m in range(0, l_max):
        n[m + 1, m] = math.sqrt(2 * m + 3) * x * n[m, m]
    for m in range(0, l_max + 1):
        for l in range(m + 2, l_max + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            n[l, m] = a * (x * n[l - 1, m] - b * n[l - 2, m])
    return n


@dataclass(frozen=True)
class SHBasis:
    """Real symmetric (even-order) spherical harmonics up to ``l_max``."""

    l_max: int

    def __post_init__(self):
        if self.l_max < 0 or self.l_max % 2:
            raise ConfigurationError(f"l_max must be even and >= 0, got {self.l_max}")

    @property
    def size(self) -> int:
        return (self.l_max + 1) * (self.l_max + 2) // 2

    @property
    def degrees(self) -> np.ndarray:
        return _index_arrays(self.l_max)[0]

    @property
    def orders(self) -> np.ndarray:
        return _index_arrays(self.l_max)[1]

    def index(self, l: int, m: int) -> int:
        if l % 2 or l < 0 or l > self.l_max or abs(m) > l:
            raise KeyError((l, m))
        return l * (l - 1) // 2 + (m + l)

    def block(self, l: int) -> slice:
        start = self.index(l, -l)
        return slice(start, start + 2 * l + 1)


@lru_cache(maxsize=None)
def _index_arrays(l_max: int):
    ls, ms = [], []
    for l in range(0, l_max + 1, 2):
        for m in range(-l, l + 1):
            ls.append(l)
            ms.append(m)
    ls = np.array(ls)
    ms = np.array(ms)
    ls.setflags(write=False)
    ms.setflags(write=False)
    return ls, ms


def _as_xyz(directions) -> np.ndarray:
    if isinstance(directions, UnitDirection):
        return directions.xyz[None, :]
    if isinstance(directions, SphericalGrid):
        return directions.xyz
    xyz = np.atleast_2d(np.asarray(directions, dtype=float))
    return xyz / np.linalg.norm(xyz, axis=1, keepdims=True)


def _real_sym_sh(l_max: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    alf = _normalized_alf(l_max, np.cos(theta))
    ls, ms = _index_arrays(l_max)
    out = np.empty((theta.size, ls.size))
    sqrt2 = math.sqrt(2.0)
    for col, (l, m) in enumerate(zip(ls, ms)):
        if m < 0:
            # sqrt(2) Re(Y_l^m) with Y_l^{-|m|} = (-1)^|m| conj(Y_l^|m|)
            out[:, col] = sqrt2 * (-1) ** (-m) * alf[l, -m] * np.cos(-m * phi)
        elif m == 0:
            out[:, col] = alf[l, 0]
        else:
            out[:, col] = sqrt2 * alf[l, m] * np.sin(m * phi)
    return out


def eval_real_sym_sh(basis: SHBasis, directions) -> np.ndarray:
    """Evaluate the basis at one direction (vector of length L) or many (n x L).

    ``directions`` may be a :class:`UnitDirection`, a grid, a unit vector or an
    ``(n, 3)`` array. A lone direction returns a 1-D vector.
    """
    single = isinstance(directions, UnitDirection) or np.ndim(directions) == 1
    if isinstance(directions, UnitDirection):
        theta = np.array([directions.theta])
        phi = np.array([directions.phi])
    else:
        theta, phi = cart2sph(_as_xyz(directions))
    out = _real_sym_sh(basis.l_max, np.atleast_1d(theta), np.atleast_1d(phi))
    return out[0] if single else out


def eval_real_sym_sh_angles(basis: SHBasis, theta, phi) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    return _real_sym_sh(basis.l_max, theta, phi)


def sh_matrix(basis: SHBasis, grid) -> np.ndarray:
    """``n x L`` matrix whose row ``i`` is the basis evaluated at point ``i``."""
    return eval_real_sym_sh(basis, _as_xyz(grid))


# -- grids ------------------------------------------------------------------

def _base_icosahedron():
    g = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, g, 0], [1, g, 0], [-1, -g, 0], [1, -g, 0],
            [0, -1, g], [0, 1, g], [0, -1, -g], [0, 1, -g],
            [g, 0, -1], [g, 0, 1], [-g, 0, -1], [-g, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


@lru_cache(maxsize=None)
def _icosphere_mesh(level: int):
    verts, faces = _base_icosahedron()
    verts = list(verts)
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new_faces)
    v = np.array(verts)
    v.setflags(write=False)
    faces.setflags(write=False)
    return v, faces


def _spherical_triangle_areas(xyz, faces):
    a, b, c = xyz[faces[:, 0]], xyz[faces[:, 1]], xyz[faces[:, 2]]
    triple = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    denom = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(triple, denom)


def _exactness_degree(n_points: int) -> int:
    # largest even degree whose even-SH count stays below a quarter of the points, capped at 32
    d = 0
    while d < 32 and (d + 3) * (d + 4) // 2 <= n_points // 4:
        d += 2
    return d


@lru_cache(maxsize=None)
def _icosphere_weights(level: int) -> np.ndarray:
    xyz, faces = _icosphere_mesh(level)
    areas = _spherical_triangle_areas(xyz, faces)
    w0 = np.zeros(len(xyz))
    for k in range(3):
        np.add.at(w0, faces[:, k], areas / 3.0)
    # minimum-norm correction making even SH up to `degree` integrate exactly
    degree = _exactness_degree(len(xyz))
    y = _real_sym_sh(degree, *cart2sph(xyz))
    target = np.zeros(y.shape[1])
    target[0] = math.sqrt(4.0 * math.pi)
    w = w0 + np.linalg.lstsq(y.T, target - y.T @ w0, rcond=None)[0]
    if np.any(w <= 0):
        w = w0
    w.setflags(write=False)
    return w


def icosphere(level: int) -> SphericalGrid:
    """Subdivided icosahedron (``10 * 4**level + 2`` vertices) with quadrature weights.

    Weights start from one third of the spherical area of every incident
    triangle and receive the minimum-norm correction that integrates all even
    harmonics up to degree 32 (fewer on coarse levels) exactly. At level 4 this
    makes the SH Gram matrix the identity to rounding for ``l_max <= 16``.
    """
    if level < 0:
        raise ConfigurationError("icosphere level must be >= 0")
    xyz, faces = _icosphere_mesh(level)
    return SphericalGrid(xyz, _icosphere_weights(level), name=f"ico{level}", faces=faces)


def _upper_representatives(xyz: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Indices of one point per antipodal pair, chosen on the canonical half.

    Canonical half: z > 0, then (z == 0, y > 0), then (z == y == 0, x > 0).
    """
    keep = []
    for i, (x, y, z) in enumerate(xyz):
        if z > tol or (abs(z) <= tol and (y > tol or (abs(y) <= tol and x > 0))):
            keep.append(i)
    return np.array(keep)


def _hemi_icosphere(level: int) -> SphericalGrid:
    full = icosphere(level)
    idx = _upper_representatives(full.xyz)
    # weights of one member per pair sum to 2 pi
    return SphericalGrid(full.xyz[idx], full.weights[idx], name=f"hemi-ico{level}")


def _hemi_fibonacci(n: int) -> SphericalGrid:
    golden = math.pi * (3.0 - math.sqrt(5.0))
    i = np.arange(n)
    z = 1.0 - (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    phi = np.mod(i * golden, TWO_PI)
    xyz = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return SphericalGrid(xyz, np.full(n, TWO_PI / n), name=f"hemi-fib{n}")


_GRID_KINDS = ("ico", "hemi-ico", "hemi-fib")


def symmetric_grid(kind: str, level_or_count: int) -> SphericalGrid:
    """Deterministic antipodally symmetric point sets.

    ``kind``:

    ``"ico"``
        full icosphere at the given subdivision level (level 4 -> 2562 points);
        contains every point together with its antipode.
    ``"hemi-ico"``
        one point per antipodal pair of the icosphere (level 2 -> 81,
        level 3 -> 321).
    ``"hemi-fib"``
        spherical Fibonacci lattice on the upper hemisphere with the given
        number of points (41 for the smallest gradient set).
    """
    if kind == "ico":
        if not 0 <= level_or_count <= 6:
            raise ConfigurationError(f"unsupported icosphere level {level_or_count}")
        return icosphere(level_or_count)
    if kind == "hemi-ico":
        if not 1 <= level_or_count <= 6:
            raise ConfigurationError(f"unsupported icosphere level {level_or_count}")
        return _hemi_icosphere(level_or_count)
    if kind == "hemi-fib":
        if level_or_count < 1:
            raise ConfigurationError("Fibonacci set needs at least one point")
        return _hemi_fibonacci(level_or_count)
    raise ConfigurationError(f"unknown grid kind {kind!r}; expected one of {_GRID_KINDS}")


def grid_from_id(grid_id: str) -> SphericalGrid:
    """Parse identifiers such as ``ico4``, ``hemi-ico2`` or ``hemi-fib41``."""
    for kind in ("hemi-ico", "hemi-fib", "ico"):
        if grid_id.startswith(kind):
            tail = grid_id[len(kind):]
            if tail.isdigit():
                return symmetric_grid(kind, int(tail))
    raise ConfigurationError(f"unrecognised grid id {grid_id!r}")


GRADIENT_GRID_IDS = {41: "hemi-fib41", 81: "hemi-ico2", 321: "hemi-ico3"}


def gradient_grid(n: int) -> SphericalGrid:
    """Gradient direction set of size 41, 81 or 321."""
    try:
        return grid_from_id(GRADIENT_GRID_IDS[n])
    except KeyError:
        raise ConfigurationError(f"no gradient grid with {n} directions; have {sorted(GRADIENT_GRID_IDS)}") from None


def evaluation_grid() -> SphericalGrid:
    """The 2562-point dense grid used for constraints, peaks and integrals."""
    return icosphere(4)


def write_grid_csv(grid: SphericalGrid, path) -> None:
    """Write ``theta,phi,weight`` rows (radians; weight empty when absent)."""
    theta, phi = cart2sph(grid.xyz)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["theta", "phi", "weight"])
        for i in range(len(grid)):
            wt = "" if grid.weights is None else repr(float(grid.weights[i]))
            w.writerow([repr(float(theta[i])), repr(float(phi[i])), wt])


def read_grid_csv(path, name: str | None = None) -> SphericalGrid:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    theta = np.array([float(r["theta"]) for r in rows])
    phi = np.array([float(r["phi"]) for r in rows])
    weights = None
    if rows and all(r.get("weight") for r in rows):
        weights = np.array([float(r["weight"]) for r in rows])
    return SphericalGrid(sph2cart(theta, phi), weights, name=name or Path(path).stem)
