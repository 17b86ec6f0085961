import math

import numpy as np
import pytest

from fodkit.convolution import (
    ResponseFunction,
    assemble_design,
    forward_signal,
    response_diag,
    rotational_harmonics,
)
from fodkit.errors import ConfigurationError
from fodkit.needlets import build_frame
from fodkit.sphere import SHBasis, eval_real_sym_sh, gradient_grid, icosphere, legendre, sh_matrix

KERNEL = ResponseFunction.from_ratio(1000.0, 1e-3, 10.0)


def test_response_validation_and_evenness():
    with pytest.raises(ConfigurationError):
        ResponseFunction(lambda1=2e-3, lambda3=1e-3)
    t = np.linspace(-1, 1, 11)
    assert np.allclose(KERNEL(t), KERNEL(-t))
    assert KERNEL(1.0) == pytest.approx(math.exp(-1.0))


def test_constant_kernel():
    r = rotational_harmonics(lambda t: np.full_like(t, 2.5), 8).r
    assert r[0] == pytest.approx(2.5 * 2 * math.sqrt(math.pi), rel=1e-12)
    assert np.max(np.abs(r[2:])) < 1e-10


def test_rotational_harmonics_vs_trapezoid():
    r = rotational_harmonics(KERNEL, 16).r
    t = np.linspace(-1, 1, 10_001)
    for l in range(0, 17, 2):
        g = KERNEL(t) * math.sqrt((2 * l + 1) / (4 * math.pi)) * legendre(l, t)
        fine = np.trapezoid(g, t)
        coarse = np.trapezoid(g[::2], t[::2])
        # one Richardson step lifts the trapezoid rule from O(h^2) to O(h^4)
        ref = 2 * math.pi * (4 * fine - coarse) / 3
        if l <= 8:
            assert r[l] == pytest.approx(ref, rel=1e-8)
        else:
            # high-degree coefficients are tiny; both rules then sit at roundoff relative to r_0
            assert abs(r[l] - ref) < 1e-10 * r[0]
    assert np.all(r[1::2] == 0)
    assert r[0] == np.max(np.abs(r))


def test_response_diag_blocks():
    r = rotational_harmonics(KERNEL, 8)
    d = np.diag(response_diag(r, SHBasis(8)))
    basis = SHBasis(8)
    for l in range(0, 9, 2):
        blk = d[basis.block(l)]
        assert blk.size == 2 * l + 1
        assert np.all(blk == blk[0])
        assert blk[0] == pytest.approx(math.sqrt(4 * math.pi / (2 * l + 1)) * r.r[l])
    d0 = response_diag(rotational_harmonics(KERNEL, 0), SHBasis(0))
    assert d0.shape == (1, 1)


def test_design_shapes_and_identity(ico4):
    design = assemble_design(SHBasis(8), build_frame(8), KERNEL, gradient_grid(41), ico4)
    assert design.a.shape == (41, 511)
    assert design.constraint.shape == (2562, 511)
    assert np.array_equal(design.a, design.phi @ np.diag(design.r_diag) @ design.c) or np.allclose(
        design.a, design.phi @ np.diag(design.r_diag) @ design.c, rtol=0, atol=1e-14
    )
    # column 0 of Phi_eval C is the constant function C e_0
    col0 = design.evaluation[:, 0]
    assert np.ptp(col0) < 1e-12
    assert col0[0] == pytest.approx(design.c[0, 0] / (2 * math.sqrt(math.pi)))
    assert np.isfinite(design.condition_number())


def test_design_is_deterministic(ico4):
    a = assemble_design(SHBasis(8), None, KERNEL, gradient_grid(41), ico4).a
    b = assemble_design(SHBasis(8), None, KERNEL, gradient_grid(41), ico4).a
    assert a.tobytes() == b.tobytes()


def test_design_mismatch(ico4):
    with pytest.raises(ConfigurationError):
        assemble_design(SHBasis(6), build_frame(8), KERNEL, gradient_grid(41), ico4)


def test_forward_isotropic_and_linear(rng):
    g = gradient_grid(81)
    f = np.zeros(45)
    f[0] = 1.0
    s = forward_signal(f, KERNEL, g)
    assert np.ptp(s) < 1e-12
    f1, f2 = rng.standard_normal((2, 45))
    assert np.allclose(forward_signal(f1 + f2, KERNEL, g), forward_signal(f1, KERNEL, g) + forward_signal(f2, KERNEL, g),
                       atol=1e-12)
    with pytest.raises(ConfigurationError):
        forward_signal(np.ones(44), KERNEL, g)


def test_forward_delta_matches_kernel():
    u = np.array([0.3, -0.2, 0.9])
    u /= np.linalg.norm(u)
    basis = SHBasis(16)
    f = eval_real_sym_sh(basis, u)
    g = gradient_grid(321)
    s = forward_signal(f, KERNEL, g, basis)
    near = np.abs(g.xyz @ u) > math.cos(math.radians(30))
    direct = KERNEL(g.xyz @ u)
    assert np.max(np.abs(s[near] - direct[near]) / direct[near]) < 0.05


def test_convolution_diagonalization(rng):
    basis = SHBasis(8)
    f = rng.standard_normal(45)
    grid = icosphere(5)
    phi = sh_matrix(basis, grid)
    fx = phi @ f
    pts = icosphere(3).xyz
    # S(g) = int R(<g, w>) F(w) dw by quadrature, then project onto the basis
    s = (KERNEL(pts @ grid.xyz.T) * grid.weights) @ fx
    g3 = icosphere(3)
    coeffs = sh_matrix(basis, g3).T @ (g3.weights * s)
    r = rotational_harmonics(KERNEL, 8)
    expected = np.diag(response_diag(r, basis)) * f
    assert np.linalg.norm(coeffs - expected) / np.linalg.norm(expected) < 1e-3
