"""Volume integral equation solver for the ML-periodic layer.

Discretization: point nodes in x (uniform, cell centred, so the transverse
convolution is a DFT) and piecewise-constant slices in y.  The vertical part of
the kernel is integrated exactly between slices, which makes the discrete
operator a Galerkin projection in y.  After the transverse DFT the operator
is block diagonal, one nz x nz Toeplitz block per DFT bin; each block is the
aliased sum over all Fourier indices that fold onto the bin, evaluated with a
closed form for the slowly decaying parts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.sparse.linalg import LinearOperator, gmres

from .geometry import (MediumConfig, RasterGrid, WaveParams, default_grid,
                       sample_index)
from .quasigreen import RayleighSeq, _sign, alpha_beta, beta_of

log = logging.getLogger(__name__)

SolverGrid = RasterGrid


class SolverError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


@dataclass
class ScatterSolution:
    us: np.ndarray
    ray_up: RayleighSeq
    ray_down: RayleighSeq
    iterations: int
    residual: float


@dataclass
class NearFieldMatrix:
    sign: int
    indices: np.ndarray
    entries: np.ndarray
    delta: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.indices)
        if self.entries.shape != (n, n):
            raise ValueError("near-field matrix must be square over the incidence indices")


def _sinc(x):
    """sin(x)/x for complex x."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-4
    out = np.empty(x.shape, dtype=complex)
    xs = x[small]
    out[small] = 1 - xs * xs / 6 + xs**4 / 120
    out[~small] = np.sin(x[~small]) / x[~small]
    return out


def incident_field(j, sign, wp: WaveParams, x, y):
    """Plane wave (-i / (2 beta_j)) exp(i alpha_j x +- i beta_j y) at points."""
    s = _sign(sign)
    a, b = alpha_beta(j, wp)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (-1j / (2 * b)) * np.exp(1j * a * x + s * 1j * b * y)


def incident_on_grid(j, sign, wp: WaveParams, grid: RasterGrid):
    """Slice averages in y of the incident wave at the x nodes, shape (nx, ny)."""
    s = _sign(sign)
    a, b = alpha_beta(j, wp)
    fx = np.exp(1j * a * grid.x)
    fy = np.exp(s * 1j * b * grid.y) * _sinc(b * grid.dy / 2)
    return (-1j / (2 * b)) * np.outer(fx, fy)


def _tail_cubes(s, P, k, A):
    """sum over |p| > P of (alpha_p^2 - k^2)^(-3/2) with alpha_p = A (p + s)."""
    t3 = special.zeta(3, P + 1 + s) + special.zeta(3, P + 1 - s)
    t5 = special.zeta(5, P + 1 + s) + special.zeta(5, P + 1 - s)
    t7 = special.zeta(7, P + 1 + s) + special.zeta(7, P + 1 - s)
    k2 = k * k
    return t3 / A**3 + 1.5 * k2 * t5 / A**5 + 1.875 * k2 * k2 * t7 / A**7


def mode_kernel(wp: WaveParams, grid: RasterGrid, aliases: int = 64) -> np.ndarray:
    """Per-bin Toeplitz generators G[b, d] of the vertical kernel, d = |m - n|.

    G[b, d] = sum_p (1/c) int_{slice m} int_{slice n} (i / (2 beta)) exp(i beta |s - t|)
    over all Fourier indices j = b + p nx, c the slice width.  The constant
    factor dx from the x quadrature is absorbed by the DFT normalization.
    """
    nx, nz, c = grid.nx, grid.ny, grid.dy
    k = wp.k
    A = 2 * np.pi * nx / wp.ML
    b = np.arange(nx)
    s = np.where(b < nx / 2, b, b - nx) / nx
    P = int(aliases)
    p = np.arange(-P, P + 1)
    alpha = A * (s[:, None] + p[None, :])
    beta = beta_of(k, alpha)
    e1 = np.exp(1j * beta * c)
    # same-slice part without its -1/beta^2 piece, which is summed in closed form
    r0 = -1j * (e1 - 1) / (c * beta**3)
    cc = k / A
    cot = lambda v: 1 / np.tan(v)
    s_inv2 = (np.pi / (2 * cc)) * (cot(np.pi * (s - cc)) - cot(np.pi * (s + cc))) / A**2
    tail = _tail_cubes(s, P, k, A) / c
    G = np.zeros((nx, nz), dtype=complex)
    G[:, 0] = s_inv2 + r0.sum(axis=1) - tail
    pre = -1j * (1 - e1) ** 2 / (2 * c * beta**3)
    ph = np.ones_like(beta)
    for d in range(1, nz):
        G[:, d] = (pre * ph).sum(axis=1)
        ph = ph * e1
    G[:, 1] += 0.5 * tail
    return G


def toeplitz_blocks(G: np.ndarray) -> np.ndarray:
    nz = G.shape[1]
    idx = np.abs(np.arange(nz)[:, None] - np.arange(nz)[None, :])
    return G[:, idx]


class LSOperator:
    """Discrete Lippmann-Schwinger operator for a given medium and wavenumber.

    Unknowns are the values of the scattered field at the nodes where the
    contrast n - 1 is nonzero.
    """

    def __init__(self, cfg: MediumConfig, wp: WaveParams, grid: RasterGrid | None = None,
                 index: np.ndarray | None = None, aliases: int = 64,
                 tol: float = 1e-8, restart: int = 50, maxiter: int = 500):
        self.cfg = cfg
        self.wp = wp
        self.grid = grid if grid is not None else default_grid(cfg, wp)
        if self.grid.nx % wp.M:
            raise ValueError("nx must be divisible by M")
        if index is None:
            fld = sample_index(cfg, wp, self.grid)
            index = fld.n
        self.n = np.asarray(index, dtype=complex)
        self.contrast = self.n - 1
        self.mask = self.contrast != 0
        self.nodes = np.flatnonzero(self.mask.ravel())
        self.k2 = wp.k * wp.k
        self.tol = tol
        self.restart = restart
        self.maxiter = maxiter
        self._check_resolution()
        self.G = mode_kernel(wp, self.grid, aliases)
        # circulant embedding of each Toeplitz block: one 2D FFT per apply
        sym = np.concatenate([self.G, np.zeros((self.grid.nx, 1)), self.G[:, :0:-1]], axis=1)
        self._eig = np.fft.fft(sym, axis=1)

    def _check_resolution(self):
        if not self.mask.any():
            return
        nmax = float(np.max(np.abs(self.n[self.mask]))) if self.mask.any() else 1.0
        lam_loc = self.wp.wavelength / math.sqrt(max(nmax, 1.0))
        ppw = lam_loc / max(self.grid.dx, self.grid.dy)
        if ppw < 8:
            log.warning("grid resolves inclusions with %.1f points per local wavelength", ppw)

    @property
    def size(self) -> int:
        return self.nodes.size

    def _conv(self, g, eig):
        nz = self.grid.ny
        gh = np.fft.fft2(g, s=(self.grid.nx, 2 * nz))
        return np.fft.ifft2(gh * eig)[:, :nz]

    def apply_V(self, g: np.ndarray) -> np.ndarray:
        """k^2 times the discrete volume potential of a density on the full grid."""
        return self.k2 * self._conv(g, self._eig)

    def apply_VH(self, g: np.ndarray) -> np.ndarray:
        # each block is complex symmetric, so the adjoint conjugates the symbol
        # and reverses the transverse bins
        return np.conj(self.k2) * np.conj(self._conv(np.conj(g), self._eig))

    def block(self, b: int) -> np.ndarray:
        """Dense nz x nz block of DFT bin b (without k^2)."""
        return toeplitz_blocks(self.G[b : b + 1])[0]

    def embed(self, v: np.ndarray) -> np.ndarray:
        full = np.zeros(self.grid.nx * self.grid.ny, dtype=complex)
        full[self.nodes] = v
        return full.reshape(self.grid.nx, self.grid.ny)

    def restrict(self, g: np.ndarray) -> np.ndarray:
        return g.reshape(-1)[self.nodes]

    def _cvec(self):
        return self.contrast.reshape(-1)[self.nodes]

    def system_matvec(self, w: np.ndarray) -> np.ndarray:
        """(I - V C) w on the contrast nodes."""
        c = self._cvec()
        return w - self.restrict(self.apply_V(self.embed(c * w)))

    def system_rmatvec(self, w: np.ndarray) -> np.ndarray:
        c = self._cvec()
        return w - np.conj(c) * self.restrict(self.apply_VH(self.embed(w)))

    def linear_operator(self) -> LinearOperator:
        n = self.size
        return LinearOperator((n, n), matvec=self.system_matvec,
                              rmatvec=self.system_rmatvec, dtype=complex)

    def solve_nodes(self, rhs: np.ndarray, x0=None):
        """Solve (I - V C) w = rhs on the contrast nodes with restarted GMRES."""
        if not np.any(rhs):
            return np.zeros_like(rhs), 0, 0.0
        history = []
        cycles = max(1, int(math.ceil(self.maxiter / self.restart)))
        w, info = gmres(self.linear_operator(), rhs, x0=x0, rtol=self.tol, atol=0.0,
                        restart=self.restart, maxiter=cycles,
                        callback=history.append, callback_type="pr_norm")
        res = np.linalg.norm(self.system_matvec(w) - rhs) / np.linalg.norm(rhs)
        if info != 0 and res > 10 * self.tol:
            raise SolverError(f"GMRES did not converge (relative residual {res:.3e})", history)
        return w, len(history), res

    def solve(self, source: np.ndarray) -> ScatterSolution:
        """Scattered field w = V[(n - 1)(f + w)] for a source f given on the full grid."""
        f = np.asarray(source, dtype=complex)
        rhs = self.restrict(self.apply_V(self.contrast * f))
        wd, its, res = self.solve_nodes(rhs)
        rho = self.contrast * (f + self.embed(wd))
        us = self.apply_V(rho)
        up, down = self.rayleigh_of_density(rho)
        return ScatterSolution(us, up, down, its, res)

    def born(self, source: np.ndarray) -> ScatterSolution:
        rho = self.contrast * np.asarray(source, dtype=complex)
        up, down = self.rayleigh_of_density(rho)
        return ScatterSolution(self.apply_V(rho), up, down, 0, 0.0)

    def readout_matrix(self, sign, indices=None) -> np.ndarray:
        """Rows map a nodal density rho to the Rayleigh coefficients at y = +-h
        of the field k^2 V rho; columns run over the full grid (nx * ny)."""
        s = _sign(sign)
        wp, g = self.wp, self.grid
        j = wp.incidence_indices() if indices is None else np.asarray(indices)
        a, b = alpha_beta(j, wp)
        pre = self.k2 * g.dx / wp.ML * (1j / (2 * b)) * np.exp(1j * b * wp.h) * g.dy * _sinc(b * g.dy / 2)
        ex = np.exp(-1j * np.outer(a, g.x))
        ey = np.exp(-s * 1j * np.outer(b, g.y))
        return (pre[:, None, None] * ex[:, :, None] * ey[:, None, :]).reshape(len(j), -1)

    def rayleigh_of_density(self, rho: np.ndarray, indices=None):
        wp, g = self.wp, self.grid
        j = wp.incidence_indices() if indices is None else np.asarray(indices)
        a, b = alpha_beta(j, wp)
        pre = self.k2 * g.dx / wp.ML * (1j / (2 * b)) * np.exp(1j * b * wp.h) * g.dy * _sinc(b * g.dy / 2)
        rx = np.exp(-1j * np.outer(a, g.x)) @ rho  # (nj, ny)
        up = pre * np.einsum("jn,jn->j", rx, np.exp(-1j * np.outer(b, g.y)))
        down = pre * np.einsum("jn,jn->j", rx, np.exp(1j * np.outer(b, g.y)))
        return RayleighSeq(1, j, up), RayleighSeq(-1, j, down)


def solve_ls(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid | None, source,
             op: LSOperator | None = None) -> ScatterSolution:
    op = op or LSOperator(cfg, wp, grid)
    return op.solve(source)


def rayleigh_of_field(values, wp: WaveParams, sign=1, indices=None) -> RayleighSeq:
    """Rayleigh coefficients (1/ML) int u(x, +-h) exp(-i alpha_l x) dx from uniform
    samples over one period starting at the left end of the period."""
    values = np.asarray(values, dtype=complex)
    j = wp.incidence_indices() if indices is None else np.asarray(indices)
    ns = values.size
    if ns < len(j) or ns <= 2 * np.max(np.abs(j)):
        raise ValueError("too few samples for the requested indices (aliasing)")
    x = wp.x_min + np.arange(ns) * wp.ML / ns
    a = 2 * np.pi * j / wp.ML
    coef = np.exp(-1j * np.outer(a, x)) @ values / ns
    return RayleighSeq(_sign(sign), j, coef)


def assemble_near_field(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid | None = None,
                        op: LSOperator | None = None, born: bool = False):
    """Near-field matrices (N+, N-); column j holds the Rayleigh data for incidence j."""
    op = op or LSOperator(cfg, wp, grid)
    j = wp.incidence_indices()
    out = []
    for s in (1, -1):
        N = np.zeros((len(j), len(j)), dtype=complex)
        if op.size:
            for c, jj in enumerate(j):
                f = incident_on_grid(jj, s, wp, op.grid)
                try:
                    sol = op.born(f) if born else op.solve(f)
                except SolverError as exc:
                    raise SolverError(f"column j={jj}, sign={s:+d}: {exc}", exc.history) from exc
                N[:, c] = (sol.ray_up if s == 1 else sol.ray_down).values
        out.append(NearFieldMatrix(s, j, N))
    return out[0], out[1]


def scattering_data(op: LSOperator, j_inc: int, sign):
    """Both Rayleigh sequences of u^s for one incidence; used for flux checks."""
    f = incident_on_grid(j_inc, sign, op.wp, op.grid)
    return op.solve(f)


def flux_balance(op: LSOperator, j_inc: int, sign=1) -> float:
    """Relative mismatch between incoming and outgoing propagating flux."""
    wp = op.wp
    s = _sign(sign)
    nprop = int(math.floor(wp.k * wp.ML / (2 * np.pi)))
    ell = np.arange(-nprop, nprop + 1)
    f = incident_on_grid(j_inc, s, wp, op.grid)
    if op.size:
        wd, _, _ = op.solve_nodes(op.restrict(op.apply_V(op.contrast * f)))
        rho = op.contrast * (f + op.embed(wd))
    else:
        rho = np.zeros_like(f)
    up, down = op.rayleigh_of_density(rho, ell)
    _, b = alpha_beta(ell, wp)
    b = b.real
    _, b0 = alpha_beta(j_inc, wp)
    amp = (-1j / (2 * b0)) * np.exp(1j * b0 * wp.h)
    trans = (up if s == 1 else down).values.copy()
    refl = (down if s == 1 else up).values
    trans[ell == j_inc] += amp
    incoming = b0.real * abs(amp) ** 2
    outgoing = np.sum(b * (np.abs(trans) ** 2 + np.abs(refl) ** 2))
    return abs(outgoing - incoming) / incoming


def add_noise(N: NearFieldMatrix | np.ndarray, delta: float, seed: int | None = 0):
    """Multiplicative noise N (1 + delta A), A = U[-1,1] + i U[-1,1] entrywise."""
    if delta < 0:
        raise ValueError("noise level must be non-negative")
    entries = N.entries if isinstance(N, NearFieldMatrix) else np.asarray(N)
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, entries.shape) + 1j * rng.uniform(-1, 1, entries.shape)
    noisy = entries * (1 + delta * A) if delta else entries.copy()
    if isinstance(N, NearFieldMatrix):
        return NearFieldMatrix(N.sign, N.indices, noisy, delta, seed, dict(N.meta))
    return noisy


@dataclass
class Quadrature:
    """Contrast nodes of a solver grid with their area weights."""

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    flat: np.ndarray


def quadrature_on(op: LSOperator) -> Quadrature:
    X, Y = op.grid.mesh()
    flat = op.nodes
    return Quadrature(X.ravel()[flat], Y.ravel()[flat],
                      np.full(flat.size, op.grid.cell_weight), flat)


def assemble_H(op: LSOperator, sign) -> np.ndarray:
    """Herglotz matrix: column j is the incident wave j on the contrast nodes."""
    j = op.wp.incidence_indices()
    cols = [op.restrict(incident_on_grid(jj, sign, op.wp, op.grid)) for jj in j]
    return np.stack(cols, axis=1)


def adjoint_H(op: LSOperator, H: np.ndarray) -> np.ndarray:
    """Discrete L2(D) adjoint: conjugate incident values times area weights."""
    return H.conj().T * op.grid.cell_weight


def assemble_T(op: LSOperator, progress=None) -> np.ndarray:
    """Matrix of T f = k^2 (n - 1)(f + w) on the contrast nodes, one solve per node."""
    n = op.size
    c = op._cvec()
    T = np.zeros((n, n), dtype=complex)
    for m in range(n):
        e = np.zeros(n, dtype=complex)
        e[m] = 1.0
        rhs = op.restrict(op.apply_V(op.embed(c * e)))
        w, _, _ = op.solve_nodes(rhs)
        T[:, m] = op.k2 * c * (e + w)
        if progress is not None:
            progress(m, n)
    return T


def readout_on_nodes(op: LSOperator, sign) -> np.ndarray:
    """Map from a density on the contrast nodes (already multiplied by k^2 (n-1))
    to the Rayleigh coefficients of its volume potential."""
    R = op.readout_matrix(sign)[:, op.nodes]
    return R / op.k2
