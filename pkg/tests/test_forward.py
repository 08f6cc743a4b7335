import numpy as np
import pytest

from fdls import forward, oracle, scenarios
from fdls.geometry import MediumConfig, default_grid
from fdls.operators import mode_positions
from fdls.quasigreen import alpha_beta
from util import scaled

LAM = scenarios.LAM


def test_incident_at_origin(wp):
    for j in (-3, 0, 4, 17):
        _, b = alpha_beta(j, wp)
        v = forward.incident_field(j, 1, wp, 0.0, 0.0)
        assert v == pytest.approx(-1j / (2 * b), rel=1e-15)


@pytest.mark.parametrize("j,sign", [(0, 1), (2, -1), (16, 1)])
def test_incident_helmholtz_residual(wp, j, sign):
    def rel_residual(h):
        x, y = 0.37 * LAM, 0.21 * LAM
        u = lambda dx, dy: forward.incident_field(j, sign, wp, x + dx, y + dy)
        lap = (u(h, 0) + u(-h, 0) + u(0, h) + u(0, -h) - 4 * u(0, 0)) / h**2
        return abs(lap + wp.k**2 * u(0, 0)) / abs(wp.k**2 * u(0, 0))

    h = 1e-3 * LAM
    a, b = alpha_beta(j, wp)
    # leading truncation error of the 5-point stencil for a plane wave
    bound = h**2 / 12 * (a**4 + abs(b) ** 4) / wp.k**2
    r1, r2 = rel_residual(h), rel_residual(h / 2)
    assert r1 <= 1.01 * bound
    assert r2 / r1 == pytest.approx(0.25, rel=0.02)


def test_incident_ml_periodic(wp):
    x = np.array([0.0, 1.1, -3.4]) * LAM
    y = np.array([0.2, -0.5, 1.0]) * LAM
    for j in (-7, 1, 5):
        np.testing.assert_allclose(forward.incident_field(j, 1, wp, x + wp.ML, y),
                                   forward.incident_field(j, 1, wp, x, y), rtol=1e-12)


def test_zero_contrast_gives_zero(wp):
    cfg = MediumConfig((), ())
    grid = default_grid(cfg, wp, 16, 32)
    sol = forward.solve_ls(cfg, wp, grid, forward.incident_on_grid(0, 1, wp, grid))
    assert not np.any(sol.us) and not np.any(sol.ray_up.values) and not np.any(sol.ray_down.values)
    Np, Nm = forward.assemble_near_field(cfg, wp, grid)
    assert not np.any(Np.entries) and not np.any(Nm.entries)
    op = forward.LSOperator(cfg, wp, grid)
    assert forward.assemble_T(op).shape == (0, 0)


def test_born_limit_is_linear(wp):
    base = scenarios.example("1")
    devs = []
    for eps in (1e-2, 1e-3):
        cfg = scaled(base, eps)
        grid = default_grid(cfg, wp, 16, 32)
        op = forward.LSOperator(cfg, wp, grid, tol=1e-12)
        f = forward.incident_on_grid(0, 1, wp, grid)
        w = op.solve(f).us
        wb = op.born(f).us
        devs.append(np.linalg.norm(w - wb) / np.linalg.norm(wb))
    assert devs[1] < 2e-2
    assert devs[0] / devs[1] == pytest.approx(10, rel=0.1)


def test_solution_matches_dense_oracle(wp, half_ex1):
    cfg, grid, op, _, _ = half_ex1
    f = forward.incident_on_grid(0, 1, wp, grid)
    a = op.solve(f)
    b = oracle.dense_solve(cfg, wp, grid, f)
    for s, t in ((a.ray_up, b.ray_up), (a.ray_down, b.ray_down)):
        assert np.linalg.norm(s.values - t.values) / np.linalg.norm(t.values) < 1e-6


def test_rayleigh_of_plane_wave_and_constant(wp):
    ns = 128
    x = wp.x_min + np.arange(ns) * wp.ML / ns
    j = wp.incidence_indices()
    for j0 in (-4, 0, 9):
        a, _ = alpha_beta(j0, wp)
        c = forward.rayleigh_of_field(np.exp(1j * a * x), wp).values
        np.testing.assert_allclose(c, (j == j0).astype(float), atol=1e-13)
    c = forward.rayleigh_of_field(np.full(ns, 2.5 - 1j), wp).values
    np.testing.assert_allclose(c, np.where(j == 0, 2.5 - 1j, 0), atol=1e-13)


def test_rayleigh_rejects_aliasing(wp):
    with pytest.raises(ValueError):
        forward.rayleigh_of_field(np.ones(20), wp)


def test_near_field_matches_dense(wp, half_ex1):
    cfg, grid, _, Np, Nm = half_ex1
    Dp, Dm = oracle.dense_near_field(cfg, wp, grid)
    for N, D in ((Np, Dp), (Nm, Dm)):
        assert np.linalg.norm(N.entries - D.entries) / np.linalg.norm(D.entries) <= 1e-5


def test_floquet_selection_background(wp, coarse_background):
    cfg, grid, op = coarse_background
    Np, Nm = forward.assemble_near_field(cfg, wp, op=op)
    j = wp.incidence_indices()
    off = (j[:, None] - j[None, :]) % wp.M != 0
    for N in (Np.entries, Nm.entries):
        assert np.abs(N[off]).max() <= 1e-6 * np.abs(N).max()


def test_noise_contract(wp, rng):
    N = rng.standard_normal((33, 33)) + 1j * rng.standard_normal((33, 33))
    assert np.array_equal(forward.add_noise(N, 0.0, 3), N)
    a = forward.add_noise(N, 0.01, 7)
    b = forward.add_noise(N, 0.01, 7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, forward.add_noise(N, 0.01, 8))
    assert np.all(np.abs(a - N) <= 0.01 * np.sqrt(2) * np.abs(N) * (1 + 1e-12))
    with pytest.raises(ValueError):
        forward.add_noise(N, -0.1)


@pytest.fixture(scope="module")
def small_op(wp):
    cfg = scenarios.example("3")
    grid = default_grid(cfg, wp, 16, 32)
    return forward.LSOperator(cfg, wp, grid, tol=1e-12)


def test_herglotz_columns(wp, small_op):
    H = forward.assemble_H(small_op, 1)
    j = wp.incidence_indices()
    f = forward.incident_on_grid(j[3], 1, wp, small_op.grid)
    np.testing.assert_array_equal(H[:, 3], small_op.restrict(f))


def test_herglotz_adjoint(wp, small_op, rng):
    H = forward.assemble_H(small_op, -1)
    Hs = forward.adjoint_H(small_op, H)
    a = rng.standard_normal(H.shape[1]) + 1j * rng.standard_normal(H.shape[1])
    phi = rng.standard_normal(H.shape[0]) + 1j * rng.standard_normal(H.shape[0])
    lhs = small_op.grid.cell_weight * np.vdot(phi, H @ a)
    rhs = np.vdot(Hs @ phi, a)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_herglotz_single_mode(wp, small_op, rng):
    H = forward.assemble_H(small_op, 1)
    pos = mode_positions(wp)
    a = rng.standard_normal(pos.size) + 1j * rng.standard_normal(pos.size)
    full = np.zeros(H.shape[1], dtype=complex)
    full[pos] = a
    np.testing.assert_allclose(H @ full, H[:, pos] @ a, rtol=1e-13)


def test_factorization_through_readout(wp, small_op):
    """N = R T H exactly with R the Rayleigh read-out of a density; on the
    propagating rows R is diag(e^{i beta h} / ML) H*."""
    op = small_op
    T = forward.assemble_T(op)
    Np, Nm = forward.assemble_near_field(op.cfg, wp, op=op)
    j = wp.incidence_indices()
    _, b = alpha_beta(j, wp)
    prop = np.abs(b.imag) == 0
    for s, N in ((1, Np), (-1, Nm)):
        H = forward.assemble_H(op, s)
        R = forward.readout_on_nodes(op, s)
        assert np.linalg.norm(N.entries - R @ T @ H) / np.linalg.norm(N.entries) < 1e-8
        Hs = forward.adjoint_H(op, H)
        scale = (np.exp(1j * b * wp.h) / wp.ML)[:, None]
        ref = scale[prop] * Hs[prop]
        assert np.linalg.norm(R[prop] - ref) <= 1e-12 * np.linalg.norm(ref)


def test_tmatrix_born_regime(wp):
    cfg = scaled(scenarios.example("3"), 1e-3)
    grid = default_grid(cfg, wp, 16, 32)
    op = forward.LSOperator(cfg, wp, grid, tol=1e-12)
    T = forward.assemble_T(op)
    c = op.contrast.ravel()[op.nodes]
    ref = np.diag(wp.k**2 * c)
    dev = np.linalg.norm(T - ref) / np.linalg.norm(ref)
    assert dev < 1e-2
    assert dev > 0
