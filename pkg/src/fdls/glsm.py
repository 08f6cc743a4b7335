"""Regularized GLSM functionals and the differential indicator.

All minimizations are exact: each functional is a strictly convex quadratic,
so its minimizer solves a Hermitian positive definite system.  The system
matrix does not depend on the sampling point, so it is factorized once per
map; each point is then solved on its own.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .geometry import WaveParams
from .operators import SharpMatrix, iq_embed, iq_restrict, mode_positions, sharp
from .quasigreen import phi_hat_matrix, phiq_hat_matrix

log = logging.getLogger(__name__)

D_FLOOR = 1e-14


class SingularSystemError(ArithmeticError):
    pass


@dataclass
class TikhonovResult:
    a: np.ndarray
    alpha: float
    penalty: np.ndarray  # (N# a, a), or (N# I_q a, I_q a) for the single-mode form
    misfit: np.ndarray
    gfun: np.ndarray  # penalty + delta ||N#|| ||a||^2
    residual: np.ndarray | None = None  # relative normal-equation residual


def _as_sharp(Ns) -> SharpMatrix:
    if isinstance(Ns, SharpMatrix):
        return Ns
    Ns = np.asarray(Ns, dtype=complex)
    return SharpMatrix(Ns, float(np.linalg.norm(Ns, 2)) if Ns.size else 0.0)


class _Quadratic:
    """alpha (P + alpha_shift I) + B* B with P Hermitian PSD; cached factor."""

    def __init__(self, B, P, alpha, shift):
        if not alpha >= 0:
            raise ValueError("alpha must be non-negative")
        self.B = B
        self.P = P
        self.alpha = alpha
        self.shift = shift
        n = P.shape[0]
        self.A = alpha * (P + shift * np.eye(n)) + B.conj().T @ B
        self.A = 0.5 * (self.A + self.A.conj().T)
        try:
            self.factor = linalg.cho_factor(self.A)
        except linalg.LinAlgError:
            raise SingularSystemError("Tikhonov system is singular (alpha = 0?)") from None

    def solve(self, phi):
        rhs = self.B.conj().T @ phi
        a = linalg.cho_solve(self.factor, rhs)
        # one step of iterative refinement keeps the normal-equation residual small
        a = a + linalg.cho_solve(self.factor, rhs - self.A @ a)
        r = self.A @ a - rhs
        scale = np.linalg.norm(self.A, 2) * np.linalg.norm(a, axis=0) + np.linalg.norm(rhs, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            res = np.where(scale > 0, np.linalg.norm(r, axis=0) / scale, 0.0)
        return a, res


def _result(q: _Quadratic, a, phi, res):
    pen = np.real(np.sum(np.conj(a) * (q.P @ a), axis=0))
    mis = np.sum(np.abs(q.B @ a - phi) ** 2, axis=0)
    g = pen + q.shift * np.sum(np.abs(a) ** 2, axis=0)
    return TikhonovResult(a, q.alpha, pen, mis, g, res)


def tikhonov_argmin(N, Ns, phi, alpha: float, delta: float) -> TikhonovResult:
    """argmin_a alpha ((N# a, a) + delta ||N#|| ||a||^2) + ||N a - phi||^2.

    ``phi`` may be a vector or a matrix whose columns are separate data.
    """
    N = np.asarray(getattr(N, "entries", N), dtype=complex)
    S = _as_sharp(Ns)
    q = _Quadratic(N, S.matrix, alpha, delta * S.norm)
    a, res = q.solve(np.asarray(phi, dtype=complex))
    return _result(q, a, phi, res)


def tikhonov_argmin_q(N, Ns, phi_q, alpha: float, delta: float, wp: WaveParams,
                      q: int | None = None) -> TikhonovResult:
    """Single-mode functional: penalty (N# I_q a, I_q a) + delta ||N#|| ||a||^2,
    misfit ||N_q a - phi_q|| with N_q = I_q* N I_q; ``phi_q`` is single-mode."""
    N = np.asarray(getattr(N, "entries", N), dtype=complex)
    S = _as_sharp(Ns)
    pos = mode_positions(wp, q)
    Nq = N[np.ix_(pos, pos)]
    Pq = S.matrix[np.ix_(pos, pos)]
    quad = _Quadratic(Nq, Pq, alpha, delta * S.norm)
    a, res = quad.solve(np.asarray(phi_q, dtype=complex))
    return _result(quad, a, phi_q, res)


@dataclass
class SignData:
    sign: int
    N: np.ndarray
    sharp: SharpMatrix


@dataclass
class ImagingData:
    wp: WaveParams
    signs: list
    delta: float
    alpha: dict = field(default_factory=dict)

    @classmethod
    def from_matrices(cls, wp: WaveParams, Nplus, Nminus, delta: float,
                      alpha: float | None = None) -> "ImagingData":
        signs = []
        alphas = {}
        for s, N in ((1, Nplus), (-1, Nminus)):
            if N is None:
                continue
            E = np.asarray(getattr(N, "entries", N), dtype=complex)
            signs.append(SignData(s, E, sharp(E)))
            alphas[s] = default_alpha(E, delta) if alpha is None else float(alpha)
        return cls(wp, signs, delta, alphas)


def default_alpha(N, delta: float) -> float:
    """alpha = delta ||N||_2; for exact data a small floor keeps the problem regular."""
    nrm = float(np.linalg.norm(N, 2))
    return max(delta, 1e-5) * nrm


@dataclass
class IndicatorMap:
    x: np.ndarray
    y: np.ndarray
    I_plus: np.ndarray
    I_minus: np.ndarray
    I: np.ndarray
    G: dict
    Gq: dict
    D: dict
    alpha: dict
    delta: float
    q: int
    errors: dict = field(default_factory=dict)


class _SignImager:
    """Cached factorizations for one incidence sign; points are evaluated one
    at a time so that a value never depends on which other points are mapped."""

    def __init__(self, sd: SignData, wp: WaveParams, alpha, delta, q):
        self.sd = sd
        self.q = q
        Ns = sd.sharp
        self.full = _Quadratic(sd.N, Ns.matrix, alpha, delta * Ns.norm)
        self.pos = mode_positions(wp, q)
        pos = self.pos
        self.single = _Quadratic(sd.N[np.ix_(pos, pos)], Ns.matrix[np.ix_(pos, pos)], alpha, delta * Ns.norm)
        self.wp = wp
        self.wq = wp if q == wp.q else WaveParams(wp.k, wp.L, wp.M, wp.h, wp.n_min, wp.n_max, q)

    def point(self, zx: float, zy: float):
        """(I, G, Gq, D, residual) at one sampling point."""
        sd, wp, q = self.sd, self.wp, self.q
        Ns = sd.sharp
        x = np.array([zx], dtype=float)
        y = np.array([zy], dtype=float)
        phi = phi_hat_matrix(x, y, sd.sign, wp)[:, 0]
        phiq = phiq_hat_matrix(x, y, sd.sign, self.wq)[:, 0]
        a, r1 = self.full.solve(phi)
        aq, r2 = self.full.solve(phiq)
        at, r3 = self.single.solve(iq_restrict(phiq, wp, q))
        G = float(_result(self.full, a, phi, r1).gfun)
        Gq = float(_result(self.full, aq, phiq, r2).gfun)
        diff = aq - iq_embed(at, wp, q)
        D = float(Ns.quad(diff))
        floor = D_FLOOR * Ns.norm * float(np.sum(np.abs(diff) ** 2))
        if D <= floor:
            I = 0.0
        else:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                I = 1.0 / (G * (1.0 + G / D))
        return I, G, Gq, D, float(max(r1, r2, r3))


def indicator_at(z, data: ImagingData, q: int | None = None):
    """(I+, I-, diagnostics) at one sampling point."""
    q = data.wp.q if q is None else q
    out = {}
    diag = {}
    for sd in data.signs:
        im = _SignImager(sd, data.wp, data.alpha[sd.sign], data.delta, q)
        I, G, Gq, D, res = im.point(float(z[0]), float(z[1]))
        out[sd.sign] = I
        diag[sd.sign] = {"G": G, "Gq": Gq, "D": D, "residual": res}
    return out.get(1, 0.0), out.get(-1, 0.0), diag


def sampling_grid(wp: WaveParams, nx: int = 120, ny: int = 60):
    """Cell-centred sampling points over one ML period and |y| < h."""
    x = wp.x_min + (np.arange(nx) + 0.5) * wp.ML / nx
    y = -wp.h + (np.arange(ny) + 0.5) * 2 * wp.h / ny
    return x, y


def indicator_map(x, y, data: ImagingData, q: int | None = None, workers: int = 1) -> IndicatorMap:
    """Indicator on the tensor grid x * y; arrays are indexed [ix, iy].

    Points are independent, so ``workers`` > 1 splits them over threads
    without changing any value."""
    wp = data.wp
    q = wp.q if q is None else q
    X, Y = np.meshgrid(np.asarray(x, float), np.asarray(y, float), indexing="ij")
    zx, zy = X.ravel(), Y.ravel()
    vals = {}
    G, Gq, D = {}, {}, {}
    errors = {}
    for sd in data.signs:
        im = _SignImager(sd, wp, data.alpha[sd.sign], data.delta, q)
        out = np.zeros((4, zx.size))

        def run(idx):
            for i in idx:
                try:
                    out[:, i] = im.point(zx[i], zy[i])[:4]
                except (ArithmeticError, ValueError) as exc:
                    log.debug("indicator failed at (%g, %g): %s", zx[i], zy[i], exc)
                    out[:, i] = np.nan

        if workers > 1 and zx.size > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run, np.array_split(np.arange(zx.size), workers)))
        else:
            run(range(zx.size))
        I = out[0]
        bad = ~np.isfinite(I) | (I < 0)
        if np.any(bad):
            errors[sd.sign] = np.flatnonzero(bad)
            log.warning("%d sampling points gave invalid indicator values", int(bad.sum()))
            I = np.where(bad, 0.0, I)
        vals[sd.sign] = I.reshape(X.shape)
        G[sd.sign], Gq[sd.sign], D[sd.sign] = (v.reshape(X.shape) for v in out[1:])
    ip = vals.get(1, np.zeros(X.shape))
    im_ = vals.get(-1, np.zeros(X.shape))
    return IndicatorMap(np.asarray(x, float), np.asarray(y, float), ip, im_, ip + im_,
                        G, Gq, D, dict(data.alpha), data.delta, q, errors)
