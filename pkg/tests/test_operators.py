import numpy as np
import pytest

from fdls import forward
from fdls.operators import (floquet_component, hermitian_abs, iq_embed, iq_matrix, iq_restrict,
                            mode_positions, nq_from_n, sharp)


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_sharp_of_psd_is_identity_map(rng):
    A = cplx(rng, 10, 10)
    F = A @ A.conj().T
    np.testing.assert_allclose(sharp(F).matrix, F, atol=1e-12 * np.linalg.norm(F))


def test_sharp_of_i_identity():
    np.testing.assert_allclose(sharp(1j * np.eye(7)).matrix, np.eye(7), atol=1e-14)


def test_sharp_against_eigen_reconstruction(rng):
    n = 12
    U, _ = np.linalg.qr(cplx(rng, n, n))
    V, _ = np.linalg.qr(cplx(rng, n, n))
    dr = rng.uniform(-2, 2, n)
    di = rng.uniform(-1, 1, n)
    Re = (U * dr) @ U.conj().T
    Im = (V * di) @ V.conj().T
    F = Re + 1j * Im
    ref = (U * np.abs(dr)) @ U.conj().T + (V * np.abs(di)) @ V.conj().T
    S = sharp(F)
    np.testing.assert_allclose(S.matrix, ref, atol=1e-10)
    assert S.norm == pytest.approx(np.linalg.norm(ref, 2), rel=1e-10)
    assert np.linalg.eigvalsh(S.matrix).min() >= -1e-12 * S.norm


def test_hermitian_abs_real_diagonal():
    np.testing.assert_allclose(hermitian_abs(np.diag([-3.0, 2.0, 0.0])), np.diag([3.0, 2.0, 0.0]))


def test_iq_pair(wp, rng):
    pos = mode_positions(wp)
    a = cplx(rng, pos.size)
    b = cplx(rng, len(wp.incidence_indices()))
    e = iq_embed(a, wp)
    assert np.array_equal(iq_restrict(e, wp), a)
    j = wp.incidence_indices()
    assert np.all(e[(j - wp.q) % wp.M != 0] == 0)
    # integer-valued entries make the comparison exact in floating point
    ai = np.round(4 * a)
    bi = np.round(4 * b)
    assert np.vdot(iq_embed(ai, wp), bi) == np.vdot(ai, iq_restrict(bi, wp))
    I = iq_matrix(wp)
    assert np.array_equal(I @ a, e)


def test_nq_entries(wp, rng):
    n = len(wp.incidence_indices())
    N = cplx(rng, n, n)
    Nq = nq_from_n(N, wp)
    j = wp.incidence_indices()
    jq = j[mode_positions(wp)]
    for a, la in enumerate(jq):
        for b, lb in enumerate(jq):
            assert Nq[a, b] == N[la - j[0], lb - j[0]]
    H = N + N.conj().T
    Hq = nq_from_n(H, wp)
    assert np.array_equal(Hq, Hq.conj().T)


def test_nq_carries_whole_block_for_background(wp, coarse_background):
    cfg, grid, op = coarse_background
    Np, _ = forward.assemble_near_field(cfg, wp, op=op)
    N = Np.entries
    pos = mode_positions(wp)
    Nq = nq_from_n(N, wp)
    mask = np.zeros(N.shape, dtype=bool)
    mask[np.ix_(pos, pos)] = True
    # the q rows couple only to the q columns
    rows = np.zeros(N.shape, dtype=bool)
    rows[pos, :] = True
    rows |= rows.T
    leak = np.abs(N[rows & ~mask]).max()
    assert leak <= 1e-6 * np.abs(Nq).max()


def test_floquet_partition(wp, rng):
    nx = 48 * wp.M
    w = cplx(rng, nx, 5)
    parts = [floquet_component(w, wp, q) for q in range(wp.M)]
    np.testing.assert_allclose(sum(parts), w, atol=1e-12)


def test_floquet_of_quasiperiodic_field(wp, rng):
    nx = 32 * wp.M
    x = wp.x_min + np.arange(nx) * wp.ML / nx
    j = np.arange(-20, 21) * wp.M + wp.q
    c = cplx(rng, j.size) * np.exp(-np.abs(j) / 10)
    w = np.exp(1j * np.outer(x, 2 * np.pi * j / wp.ML)) @ c
    for q in range(wp.M):
        wq = floquet_component(w, wp, q)
        if q == wp.q:
            np.testing.assert_allclose(wq, w, atol=1e-12 * np.abs(w).max())
        else:
            assert np.abs(wq).max() <= 1e-12 * np.abs(w).max()
    # the quasi-periodicity phase over one cell
    per = nx // wp.M
    np.testing.assert_allclose(np.roll(w, -per), np.exp(1j * wp.alpha_q * wp.L) * w,
                               atol=1e-11 * np.abs(w).max())


def test_floquet_rayleigh_support(wp, rng):
    nx = 40 * wp.M
    w = cplx(rng, nx)
    j = wp.incidence_indices()
    full = forward.rayleigh_of_field(w, wp).values
    for q in range(wp.M):
        cq = forward.rayleigh_of_field(floquet_component(w, wp, q), wp).values
        on = (j - q) % wp.M == 0
        np.testing.assert_allclose(cq[on], full[on], atol=1e-12)
        assert np.abs(cq[~on]).max() <= 1e-12
