"""Dense reference solver and Born approximation.

The discrete system matches the one of the fast solver (point nodes in x,
slice averages in y) but every kernel entry is computed in real space from
pointwise evaluations of the periodic Green's function: the logarithmic
singularity is integrated in closed form and the smooth remainder with
Gauss-Legendre quadrature.  The system is then factorized densely.  No
Fourier-side formula of the fast solver is reused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import xlogy

from .forward import NearFieldMatrix, ScatterSolution, incident_on_grid, rayleigh_of_field
from .geometry import MediumConfig, RasterGrid, WaveParams, default_grid, sample_index
from .quasigreen import GreenEvalParams, RayleighSeq, eval_phi, eval_phi_regular

MAX_NODES = 20_000


class OracleCapacityError(MemoryError):
    pass


def _log_moments(a, u0, u1):
    """int_{u0}^{u1} log(a^2 + u^2) du and int u log(a^2 + u^2) du."""

    def p0(u):
        base = xlogy(u, a * a + u * u) - 2 * u
        with np.errstate(divide="ignore", invalid="ignore"):
            at = np.where(a > 0, 2 * a * np.arctan(u / np.where(a > 0, a, 1.0)), 0.0)
        return base + at

    def p1(u):
        r2 = a * a + u * u
        return 0.5 * (xlogy(r2, r2) - u * u)

    return p0(u1) - p0(u0), p1(u1) - p1(u0)


def _gl(n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1), 0.5 * w


def _hat_integral(x, dm, c, wp, gp, order):
    """int tri(u) Phi(x, u) du where tri is the hat of half width c centred at dm*c.

    Vectorized over arrays x (|x| <= ML/2) and integer dm.
    """
    x = np.asarray(x, dtype=float)
    dm = np.asarray(dm, dtype=float)
    t, w = _gl(order)
    total = np.zeros(x.shape, dtype=complex)
    centre = dm * c
    # two linear pieces: rising on [centre - c, centre], falling on [centre, centre + c]
    for lo_off, rising in ((-c, True), (0.0, False)):
        u0 = centre + lo_off
        u1 = u0 + c
        # grade the nodes towards u = 0 when the piece ends at the singular point
        sing_lo = (x == 0) & (np.abs(u0) < 1e-12 * c)
        sing_hi = (x == 0) & (np.abs(u1) < 1e-12 * c)
        tt = t[None, :]
        ww = w[None, :]
        tau = np.where(sing_lo[:, None], tt**3, np.where(sing_hi[:, None], 1 - (1 - tt) ** 3, tt))
        jac = np.where(sing_lo[:, None], 3 * tt**2, np.where(sing_hi[:, None], 3 * (1 - tt) ** 2, 1.0))
        u = u0[:, None] + c * tau
        weight = (u - u0[:, None]) / c if rising else (u1[:, None] - u) / c
        xx = np.broadcast_to(x[:, None], u.shape)
        reg = eval_phi_regular(xx.ravel(), u.ravel(), wp, gp).reshape(u.shape)
        total += c * np.sum(ww * jac * weight * reg, axis=1)
        # log part: -(1/(4 pi)) int weight * log(x^2 + u^2)
        m0, m1 = _log_moments(np.abs(x), u0, u1)
        if rising:
            lin = (m1 - u0 * m0) / c
        else:
            lin = (u1 * m0 - m1) / c
        total -= lin / (4 * np.pi)
    return total


@dataclass
class DenseSystem:
    wp: WaveParams
    grid: RasterGrid
    n: np.ndarray
    nodes: np.ndarray
    kernel: np.ndarray  # k^2-free kernel restricted to the contrast nodes
    matrix: np.ndarray
    lu: tuple

    @property
    def size(self):
        return self.nodes.size


def kernel_table(wp: WaveParams, grid: RasterGrid, gp: GreenEvalParams | None = None,
                 order: int = 14) -> np.ndarray:
    """K[a, d] = dx * int tri Phi for transverse offset a*dx (a = 0..nx/2) and |dm| = d."""
    nx, nz = grid.nx, grid.ny
    na = nx // 2 + 1
    A, D = np.meshgrid(np.arange(na), np.arange(nz), indexing="ij")
    xs = A.ravel() * grid.dx
    out = _hat_integral(xs, D.ravel(), grid.dy, wp, gp, order)
    return grid.dx * out.reshape(na, nz)


def build_dense(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid | None = None,
                index: np.ndarray | None = None, gp: GreenEvalParams | None = None) -> DenseSystem:
    grid = grid or default_grid(cfg, wp)
    n = sample_index(cfg, wp, grid).n if index is None else np.asarray(index, dtype=complex)
    nodes = np.flatnonzero((n - 1).ravel() != 0)
    if nodes.size > MAX_NODES:
        raise OracleCapacityError(f"{nodes.size} nodes exceed the dense limit {MAX_NODES}")
    table = kernel_table(wp, grid, gp)
    ia, im = np.unravel_index(nodes, (grid.nx, grid.ny))
    da = np.abs(ia[:, None] - ia[None, :])
    da = np.minimum(da, grid.nx - da)
    dmm = np.abs(im[:, None] - im[None, :])
    K = table[da, dmm]
    c = (n - 1).ravel()[nodes]
    k2 = wp.k * wp.k
    A = np.eye(nodes.size, dtype=complex) - k2 * K * c[None, :]
    lu = linalg.lu_factor(A) if nodes.size else (A, np.zeros(0, dtype=int))
    return DenseSystem(wp, grid, n, nodes, K, A, lu)


def _gamma_kernel(ds: DenseSystem, sign, oversample=2, order=8):
    """Field on y = +-h of a unit-density node: S[i_sample, node]."""
    wp, g = ds.wp, ds.grid
    s = 1 if sign in (1, "+") else -1
    ns = oversample * g.nx
    xs = wp.x_min + np.arange(ns) * wp.ML / ns
    t, w = _gl(order)
    ia, im = np.unravel_index(ds.nodes, (g.nx, g.ny))
    # distinct (sample - node) offsets repeat; evaluate on all pairs of
    # (offset class, slice) once
    off = (np.arange(ns)[:, None] - oversample * ia[None, :] - oversample / 2) * (wp.ML / ns)
    key = np.round(off / (wp.ML / ns) * 2).astype(int)
    uniq, inv = np.unique(np.stack([key.ravel(), np.broadcast_to(im, key.shape).ravel()]),
                          axis=1, return_inverse=True)
    xo = uniq[0] * (wp.ML / ns) / 2
    sl = uniq[1]
    tt = -g.hd + (sl[:, None] + t[None, :]) * g.dy
    vals = eval_phi(np.broadcast_to(xo[:, None], tt.shape).ravel(),
                    (s * wp.h - tt).ravel(), wp).reshape(tt.shape)
    per = g.dx * g.dy * (vals @ w)
    return xs, per[inv.ravel()].reshape(key.shape)


def _rayleigh(ds: DenseSystem, rho_nodes, sign):
    xs, S = _gamma_kernel(ds, sign)
    field = (ds.wp.k**2) * (S @ rho_nodes)
    return rayleigh_of_field(field, ds.wp, sign)


def dense_solve(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid | None, source,
                ds: DenseSystem | None = None) -> ScatterSolution:
    ds = ds or build_dense(cfg, wp, grid)
    f = np.asarray(source, dtype=complex).ravel()[ds.nodes]
    c = (ds.n - 1).ravel()[ds.nodes]
    k2 = wp.k**2
    if ds.size == 0:
        j = wp.incidence_indices()
        z = np.zeros(len(j), dtype=complex)
        return ScatterSolution(np.zeros((ds.grid.nx, ds.grid.ny), complex),
                               RayleighSeq(1, j, z), RayleighSeq(-1, j, z.copy()), 0, 0.0)
    rhs = k2 * ds.kernel @ (c * f)
    w = linalg.lu_solve(ds.lu, rhs)
    rho = c * (f + w)
    us = np.zeros(ds.grid.nx * ds.grid.ny, dtype=complex)
    us[ds.nodes] = w
    res = np.linalg.norm(ds.matrix @ w - rhs) / max(np.linalg.norm(rhs), 1e-300)
    return ScatterSolution(us.reshape(ds.grid.nx, ds.grid.ny), _rayleigh(ds, rho, 1),
                           _rayleigh(ds, rho, -1), 1, float(res))


def _near_field(ds: DenseSystem, born: bool):
    wp = ds.wp
    j = wp.incidence_indices()
    c = (ds.n - 1).ravel()[ds.nodes]
    k2 = wp.k**2
    out = []
    for s in (1, -1):
        if ds.size == 0:
            out.append(NearFieldMatrix(s, j, np.zeros((len(j), len(j)), complex)))
            continue
        F = np.stack([incident_on_grid(jj, s, wp, ds.grid).ravel()[ds.nodes] for jj in j], axis=1)
        if born:
            rho = c[:, None] * F
        else:
            W = linalg.lu_solve(ds.lu, k2 * ds.kernel @ (c[:, None] * F))
            rho = c[:, None] * (F + W)
        xs, S = _gamma_kernel(ds, s)
        field = k2 * (S @ rho)
        N = np.stack([rayleigh_of_field(field[:, i], wp, s).values for i in range(len(j))], axis=1)
        out.append(NearFieldMatrix(s, j, N))
    return out[0], out[1]


def dense_near_field(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid | None = None,
                     ds: DenseSystem | None = None):
    return _near_field(ds or build_dense(cfg, wp, grid), born=False)


def born_matrix(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid | None = None,
                ds: DenseSystem | None = None):
    return _near_field(ds or build_dense(cfg, wp, grid), born=True)


def flux_balance_dense(ds: DenseSystem, j_inc: int, sign=1) -> float:
    """Propagating-flux mismatch of the dense solution for one incidence."""
    wp = ds.wp
    s = 1 if sign in (1, "+") else -1
    nprop = int(math.floor(wp.k * wp.ML / (2 * np.pi)))
    f = incident_on_grid(j_inc, s, wp, ds.grid)
    sol = dense_solve(None, wp, None, f, ds)
    ell = wp.incidence_indices()
    keep = np.abs(ell) <= nprop
    b = np.sqrt(wp.k**2 - (2 * np.pi * ell[keep] / wp.ML) ** 2)
    b0 = math.sqrt(wp.k**2 - (2 * np.pi * j_inc / wp.ML) ** 2)
    amp = (-1j / (2 * b0)) * np.exp(1j * b0 * wp.h)
    trans = (sol.ray_up if s == 1 else sol.ray_down).values[keep].copy()
    refl = (sol.ray_down if s == 1 else sol.ray_up).values[keep]
    trans[ell[keep] == j_inc] += amp
    incoming = b0 * abs(amp) ** 2
    outgoing = np.sum(b * (np.abs(trans) ** 2 + np.abs(refl) ** 2))
    return abs(outgoing - incoming) / incoming


def stilde_dense(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid, f: np.ndarray,
                 gp: GreenEvalParams | None = None) -> np.ndarray:
    """S~ f on the Lambda nodes by real-space kernel entries and a dense
    background solve; ``f`` is given on the Lambda nodes of ``grid``."""
    from .geometry import region_masks

    masks = region_masks(cfg, wp, grid)
    lam = np.flatnonzero(masks.Lam.ravel())
    n_p = sample_index(cfg, wp, grid).n_p.ravel()
    bg = np.flatnonzero(n_p != 1)
    nx, nz = grid.nx, grid.ny
    per = nx // wp.M
    ia, im = np.unravel_index(lam, (nx, nz))
    # quasi-periodic copies of f in the other cells
    src = np.zeros(nx * nz, dtype=complex)
    for m in wp.cell_offsets:
        if m == 0:
            continue
        idx = np.ravel_multi_index(((ia + m * per) % nx, im), (nx, nz))
        src[idx] += np.exp(1j * wp.alpha_q * m * wp.L) * f
    k2 = wp.k**2
    sigma = -k2 * (1 - n_p) * src
    sup = np.flatnonzero(sigma)
    if sup.size == 0:
        return np.zeros(lam.size, dtype=complex)
    table = kernel_table(wp, grid, gp)

    def K(rows, cols):
        ra, rm = np.unravel_index(rows, (nx, nz))
        ca, cm = np.unravel_index(cols, (nx, nz))
        da = np.abs(ra[:, None] - ca[None, :])
        da = np.minimum(da, nx - da)
        return table[da, np.abs(rm[:, None] - cm[None, :])]

    c = (n_p - 1)[bg]
    u0_bg = K(bg, sup) @ sigma[sup]
    A = np.eye(bg.size, dtype=complex) - k2 * K(bg, bg) * c[None, :]
    u_bg = linalg.solve(A, u0_bg)
    return K(lam, sup) @ sigma[sup] + k2 * K(lam, bg) @ (c * u_bg)
