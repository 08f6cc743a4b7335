"""Periodic and quasi-periodic free-space Green's functions of the 2D Helmholtz
equation, their Rayleigh coefficient sequences, and the mode data alpha, beta.

Sign convention: Phi solves (Delta + k^2) Phi = -delta, so near the source
Phi ~ -log(r) / (2 pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .geometry import WaveParams


class WoodAnomalyError(ArithmeticError):
    """Some beta_j vanishes: the mode is grazing and the kernel blows up."""


class SingularityError(ArithmeticError):
    pass


_ANOMALY_TOL = 1e-9


def beta_of(k, alpha):
    """sqrt(k^2 - alpha^2) on the branch with Im >= 0 (and > 0 real when propagating)."""
    alpha = np.asarray(alpha)
    b = np.sqrt(np.asarray(k * k - alpha * alpha, dtype=complex))
    b = np.where(b.imag < 0, -b, b)
    # real k, propagating: keep the positive real root
    b = np.where((b.imag == 0) & (b.real < 0), -b, b)
    if np.any(np.abs(b) <= _ANOMALY_TOL * abs(k)):
        raise WoodAnomalyError("beta vanishes for some mode (Wood anomaly)")
    return b


def alpha_beta(j, wp: WaveParams):
    """alpha_j = 2 pi j / (ML) and beta_j = sqrt(k^2 - alpha_j^2), Im beta >= 0."""
    j = np.asarray(j)
    alpha = 2 * np.pi * j / wp.ML
    return alpha, beta_of(wp.k, alpha)


@dataclass(frozen=True)
class RayleighSeq:
    sign: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values differ in length")

    def __getitem__(self, j):
        pos = np.flatnonzero(self.indices == j)
        if pos.size == 0:
            raise KeyError(j)
        return self.values[pos[0]]


def _sign(sign) -> int:
    if sign in ("+", 1, "up"):
        return 1
    if sign in ("-", -1, "down"):
        return -1
    raise ValueError(f"unknown sign {sign!r}")


def _check_inside(zy, wp):
    if np.any(np.abs(zy) >= wp.h):
        raise ValueError("sampling point must satisfy |z_d| < h")


def phi_hat_matrix(zx, zy, sign, wp: WaveParams, indices=None) -> np.ndarray:
    """Rayleigh coefficients on the line y = +-h of Phi(. - z) for many z.

    Returns an array of shape (len(indices), len(z)).
    """
    s = _sign(sign)
    zx = np.atleast_1d(np.asarray(zx, dtype=float))
    zy = np.atleast_1d(np.asarray(zy, dtype=float))
    _check_inside(zy, wp)
    j = wp.incidence_indices() if indices is None else np.asarray(indices)
    a, b = alpha_beta(j, wp)
    dist = np.abs(zy[None, :] - s * wp.h)
    return (1j / (2 * wp.ML * b))[:, None] * np.exp(
        -1j * (a[:, None] * zx[None, :] - b[:, None] * dist))


def phi_hat(z, sign, wp: WaveParams, indices=None) -> RayleighSeq:
    j = wp.incidence_indices() if indices is None else np.asarray(indices)
    v = phi_hat_matrix(z[0], z[1], sign, wp, j)[:, 0]
    return RayleighSeq(_sign(sign), j, v)


def phiq_hat_matrix(zx, zy, sign, wp: WaveParams, indices=None) -> np.ndarray:
    """Rayleigh coefficients of the single-mode kernel Phi_q(. - z); zero off j = q mod M."""
    j = wp.incidence_indices() if indices is None else np.asarray(indices)
    out = phi_hat_matrix(zx, zy, sign, wp, j) * wp.M
    out[(j - wp.q) % wp.M != 0, :] = 0
    return out


def phiq_hat(z, sign, wp: WaveParams, indices=None) -> RayleighSeq:
    j = wp.incidence_indices() if indices is None else np.asarray(indices)
    v = phiq_hat_matrix(z[0], z[1], sign, wp, j)[:, 0]
    return RayleighSeq(_sign(sign), j, v)


@dataclass(frozen=True)
class GreenEvalParams:
    """Controls for pointwise evaluation.

    truncation: number of terms on each side of the spectral series; None
        selects it per point so that the neglected tail is below 1e-16.
    ewald_split: Ewald parameter E (1/length); None picks max(|k|, 3/period).
    near_threshold: |y| below which Ewald replaces the spectral series;
        None means a tenth of the wavelength.
    """

    truncation: int | None = None
    ewald_split: float | None = None
    near_threshold: float | None = None

    def __post_init__(self):
        if self.truncation is not None and self.truncation < 1:
            raise ValueError("truncation must be positive")
        if self.ewald_split is not None and not self.ewald_split > 0:
            raise ValueError("ewald split must be positive")


def _default_terms(k, d, kx0, ymin):
    kk = abs(k)
    base = max(4 * kk * d / (2 * np.pi), 8.0)
    # the tail behaves like exp(-|alpha| |y|); ask for 37 e-folds past the last term
    need = (kk + 37.0 / max(ymin, 1e-300)) * d / (2 * np.pi)
    return int(math.ceil(max(base, need) + abs(kx0) * d / (2 * np.pi))) + 2


def _spectral(x, y, d, kx0, k, nterms):
    """(i/(2d)) sum_j exp(i alpha_j x + i beta_j |y|) / beta_j with alpha_j = kx0 + 2 pi j / d."""
    j = np.arange(-nterms, nterms + 1)
    a = kx0 + 2 * np.pi * j / d
    b = beta_of(k, a)
    out = np.empty(x.shape, dtype=complex)
    chunk = max(1, 2_000_000 // len(j))
    for s in range(0, x.size, chunk):
        xs = x.flat[s : s + chunk]
        ys = np.abs(y.flat[s : s + chunk])
        ph = np.exp(1j * (np.outer(xs, a) + np.outer(ys, b)))
        out.flat[s : s + chunk] = (1j / (2 * d)) * (ph @ (1.0 / b))
    return out


def _exp_erfc(p, a):
    """exp(p) * erfc(a) without overflow for large positive Re(a)."""
    big = a.real > 2.0
    out = np.empty(np.broadcast(p, a).shape, dtype=complex)
    pa = np.broadcast_to(p, out.shape)
    aa = np.broadcast_to(a, out.shape)
    out[big] = np.exp(pa[big] - aa[big] ** 2) * special.erfcx(aa[big])
    out[~big] = np.exp(pa[~big]) * special.erfc(aa[~big])
    return out


def _e1_plus_log(z):
    """E_1(z) + log(z), analytic at z = 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 0.5
    zs = z[small]
    acc = np.zeros_like(zs)
    term = np.ones_like(zs)
    for n in range(1, 30):
        term = term * (-zs) / n
        acc = acc + term / n
    out[small] = -np.euler_gamma - acc
    zl = z[~small]
    out[~small] = special.exp1(zl) + np.log(zl)
    return out


def _ewald(x, y, d, kx0, k, E, regular=False):
    """Ewald split of the quasi-periodic Green's function.

    With ``regular`` the m = 0 image is returned with log(r)/(2 pi) added, which
    keeps the value finite at r = 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    k2 = k * k
    shape = x.shape
    x = x.ravel()
    y = y.ravel()
    out = np.zeros(x.shape, dtype=complex)
    # spectral part
    ymax = float(y.max()) if y.size else 0.0
    amax = 2 * E * (6.5 + ymax * E) + abs(k)
    nt = int(math.ceil(amax * d / (2 * np.pi) + abs(kx0) * d / (2 * np.pi))) + 2
    j = np.arange(-nt, nt + 1)
    a = kx0 + 2 * np.pi * j / d
    g = -1j * beta_of(k, a)  # sqrt(alpha^2 - k^2), Re >= 0
    chunk = max(1, 1_000_000 // len(j))
    for s in range(0, x.size, chunk):
        xs = x[s : s + chunk, None]
        ys = y[s : s + chunk, None]
        t1 = _exp_erfc(g * ys, g / (2 * E) + ys * E)
        t2 = _exp_erfc(-g * ys, g / (2 * E) - ys * E)
        out[s : s + chunk] = ((t1 + t2) * np.exp(1j * a * xs)) @ (1.0 / g) / (4 * d)
    # spatial part
    nq = 1
    ratio = abs(k2) / (4 * E * E)
    term = 1.0
    while term > 1e-18 and nq < 60:
        term *= ratio / nq
        nq += 1
    span = 6.5 / E
    xmax = float(np.abs(x).max()) if x.size else 0.0
    mm = int(math.ceil((span + xmax) / d)) + 1
    coef = np.array([(k2 / (4 * E * E)) ** q / math.factorial(q) for q in range(nq)])
    for m in range(-mm, mm + 1):
        r2 = (x - m * d) ** 2 + y**2
        z = r2 * E * E
        keep = z < 60.0
        if m == 0 and regular and not np.all(keep):
            # E_1 is negligible here but the added logarithm is not
            far = ~keep
            out[far] += (np.log(z[far]) - 2 * math.log(E)) / (4 * np.pi)
        if not np.any(keep):
            continue
        zk = z[keep]
        acc = np.zeros(zk.shape, dtype=complex)
        if m == 0 and regular:
            acc += coef[0] * (_e1_plus_log(zk) - 2 * math.log(E))
        elif m == 0 and np.any(zk == 0):
            raise SingularityError("evaluation at a lattice point")
        else:
            acc += coef[0] * special.exp1(zk)
        for q in range(1, nq):
            acc += coef[q] * special.expn(q + 1, zk)
        out[keep] += np.exp(1j * kx0 * m * d) * acc / (4 * np.pi)
    return out.reshape(shape)


def _choose_split(k, d, gp):
    if gp.ewald_split is not None:
        return gp.ewald_split
    return max(abs(k), 3.0 / d)


def _green(x, y, wp, gp, d, kx0, regular=False):
    gp = gp or GreenEvalParams()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    k = wp.k
    # reduce x to the central period, adjusting the quasi-periodic phase
    shift = np.round(x / d)
    xr = x - shift * d
    phase = np.exp(1j * kx0 * shift * d)
    thr = gp.near_threshold if gp.near_threshold is not None else 0.1 * wp.wavelength
    far = np.abs(y) >= thr
    out = np.empty(x.shape, dtype=complex)
    if np.any(far):
        xf = xr[far]
        yf = y[far]
        if gp.truncation is not None:
            vals = _spectral(xf, yf, d, kx0, k, gp.truncation)
        else:
            vals = np.empty(xf.shape, dtype=complex)
            # group by required truncation so that each group is one matrix product
            need = np.array([_default_terms(k, d, kx0, v) for v in np.abs(yf)])
            for nt in np.unique(need):
                sel = need == nt
                vals[sel] = _spectral(xf[sel], yf[sel], d, kx0, k, int(nt))
        if regular:
            vals = vals + np.log(np.hypot(xf, yf)) / (2 * np.pi)
        out[far] = vals
    if np.any(~far):
        E = _choose_split(k, d, gp)
        out[~far] = _ewald(xr[~far], y[~far], d, kx0, k, E, regular=regular)
    return out * phase if not regular else out


def eval_phi(x, y, wp: WaveParams, gp: GreenEvalParams | None = None):
    """ML-periodic free Green's function at (x, y); vectorized."""
    return _green(x, y, wp, gp, wp.ML, 0.0)


def eval_phi_q(x, y, wp: WaveParams, gp: GreenEvalParams | None = None):
    """Single-mode kernel: L-periodic with quasi-periodicity phase alpha_q."""
    return _green(x, y, wp, gp, wp.L, wp.alpha_q)


def eval_phi_regular(x, y, wp: WaveParams, gp: GreenEvalParams | None = None):
    """Phi(x, y) + log(r)/(2 pi) for |x| <= ML/2; finite at the origin."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > wp.ML / 2 + 1e-12 * wp.ML):
        raise ValueError("regular part is defined on the central period only")
    return _green(x, y, wp, gp, wp.ML, 0.0, regular=True)


def eval_phi_ewald(x, y, wp: WaveParams, split: float | None = None):
    """Ewald evaluation everywhere, for cross-checks against the spectral series."""
    E = split if split is not None else _choose_split(wp.k, wp.ML, GreenEvalParams())
    x = np.asarray(x, dtype=float)
    shift = np.round(x / wp.ML)
    return _ewald(x - shift * wp.ML, y, wp.ML, 0.0, wp.k, E)


def eval_phi_spectral(x, y, wp: WaveParams, nterms: int | None = None):
    """Plain spectral series everywhere off y = 0."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if np.any(y == 0):
        raise SingularityError("spectral series does not converge on y = 0")
    if nterms is None:
        nterms = _default_terms(wp.k, wp.ML, 0.0, float(np.abs(y).min()))
    return _spectral(x, y, wp.ML, 0.0, wp.k, nterms)
