"""Objects of the interior transmission problem attached to the defect region.

The volume potential S~ acts on densities supported in Lambda (the defect and
the background components it touches, cell 0 only).  Its kernel is the
background Green's function summed over the other cells with the alpha_q
quasi-periodic phases.  The background Green's function is never formed:
the potential is the free periodic potential of the extended density plus a
correction from one background forward solve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator
from scipy.special import jv

from .forward import LSOperator
from .geometry import (MediumConfig, RasterGrid, WaveParams, classify_points,
                       default_grid, index_at, region_masks, sample_index)
from .quasigreen import WoodAnomalyError

log = logging.getLogger(__name__)


class EmptyRegionError(ValueError):
    """The defect region Lambda has no grid points."""


class DegenerateConfigurationError(ValueError):
    """The coupled operator has no coupling (n = n_p = 1 throughout Lambda)."""


class BasisConditioningError(ArithmeticError):
    def __init__(self, msg, condition):
        super().__init__(msg)
        self.condition = condition


class StildeOperator:
    """S~_k on the Lambda nodes of a solver grid; k may be real or i*kappa."""

    def __init__(self, cfg: MediumConfig, wp: WaveParams, k=None, grid: RasterGrid | None = None,
                 tol: float = 1e-10):
        self.grid = grid if grid is not None else default_grid(cfg, wp)
        self.wp = wp if k is None else wp.with_k(k)
        masks = region_masks(cfg, wp, self.grid)
        if not masks.Lam.any():
            raise EmptyRegionError("defect region is empty on this grid")
        self.masks = masks
        self.nodes = np.flatnonzero(masks.Lam.ravel())
        fld = sample_index(cfg, wp, self.grid)
        self.n = fld.n
        self.n_p = fld.n_p
        self.k2 = self.wp.k * self.wp.k
        per = self.grid.nx // wp.M
        self.shifts = [(int(m) * per, np.exp(1j * wp.alpha_q * m * wp.L))
                       for m in wp.cell_offsets if m != 0]
        self.op = LSOperator(cfg.background_only(), self.wp, self.grid, index=self.n_p, tol=tol)

    @property
    def size(self) -> int:
        return self.nodes.size

    def field(self, f: np.ndarray) -> np.ndarray:
        """S~ f on the whole grid for f given on the Lambda nodes."""
        g = self.grid
        base = np.zeros(g.nx * g.ny, dtype=complex)
        base[self.nodes] = f
        base = base.reshape(g.nx, g.ny)
        ext = np.zeros_like(base)
        for shift, phase in self.shifts:
            ext += phase * np.roll(base, shift, axis=0)
        sigma = -self.k2 * (1 - self.n_p) * ext
        if not np.any(sigma):
            return np.zeros_like(base)
        # free periodic potential, then the background correction
        u0 = self.op.apply_V(sigma) / self.k2
        if self.op.size == 0:
            return u0
        return u0 + self.op.solve(u0).us

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.field(np.asarray(f, dtype=complex)).reshape(-1)[self.nodes]

    def matrix(self) -> np.ndarray:
        n = self.size
        S = np.zeros((n, n), dtype=complex)
        for m in range(n):
            e = np.zeros(n, dtype=complex)
            e[m] = 1.0
            S[:, m] = self.apply(e)
        return S


def assemble_stilde(k, cfg: MediumConfig, wp: WaveParams, grid: RasterGrid | None = None,
                    tol: float = 1e-10) -> np.ndarray:
    """Matrix of S~_k on the Lambda nodes (uniform node weights, so its
    2-norm is the L2(Lambda) operator norm)."""
    return StildeOperator(cfg, wp, k, grid, tol).matrix()


@dataclass
class DecayScan:
    kappa: np.ndarray
    norms: np.ndarray
    slope: float
    intercept: float
    r2: float


def _linfit(x, y):
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ np.array([slope, icpt])
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return float(slope), float(icpt), r2


def stilde_decay_scan(kappas, cfg: MediumConfig, wp: WaveParams,
                      grid: RasterGrid | None = None) -> DecayScan:
    """Spectral norms of S~_{i kappa} and the least-squares slope of their log."""
    kap = np.asarray(kappas, dtype=float)
    if kap.size == 0 or np.any(kap <= 0) or np.any(np.diff(kap) <= 0):
        raise ValueError("kappa values must be positive and increasing")
    for d in cfg.background:
        if not complex(d.n).real > 0:
            raise ValueError("the background index must be bounded below by a positive constant")
    norms = np.array([np.linalg.norm(assemble_stilde(1j * kv, cfg, wp, grid), 2) for kv in kap])
    if np.all(norms > 0) and kap.size >= 2:
        slope, icpt, r2 = _linfit(kap, np.log(norms))
    else:
        slope, icpt, r2 = float("nan"), float("nan"), float("nan")
    return DecayScan(kap, norms, slope, icpt, r2)


@dataclass
class HypothesisReport:
    q_min: float
    q_star: float
    q_upper: float
    im_sq: float
    band: float
    verdict: str  # "negative_contrast", "positive_contrast" or "not_satisfied"

    @property
    def satisfied(self) -> bool:
        return self.verdict != "not_satisfied"


def boundary_band(mask: np.ndarray, grid: RasterGrid, width: float) -> np.ndarray:
    """Points of ``mask`` within ``width`` of its boundary."""
    dist = ndimage.distance_transform_edt(mask, sampling=(grid.dx, grid.dy))
    return mask & (dist <= width)


def check_hypotheses(cfg: MediumConfig, wp: WaveParams, band: float | None = None,
                     grid: RasterGrid | None = None) -> HypothesisReport:
    """Sufficient conditions for discreteness of the new transmission eigenvalues,
    evaluated on q = n - 1 over Lambda and over the band R along its boundary."""
    grid = grid if grid is not None else default_grid(cfg, wp)
    width = 0.1 * wp.wavelength if band is None else float(band)
    if not width > 0:
        raise ValueError("band width must be positive")
    masks = region_masks(cfg, wp, grid)
    if not masks.Lam.any():
        raise EmptyRegionError("defect region is empty on this grid")
    qc = sample_index(cfg, wp, grid).n - 1
    R = boundary_band(masks.Lam, grid, width)
    q_min = float(qc.real[masks.Lam].min())
    q_star = float(qc.real[R].min())
    q_upper = float(qc.real[R].max())
    im_sq = float((qc.imag[R] ** 2).max())
    if q_min + 1 <= 0:
        verdict = "not_satisfied"
    elif q_upper < 0:
        verdict = "negative_contrast"
    elif q_star > im_sq:
        verdict = "positive_contrast"
    else:
        verdict = "not_satisfied"
    return HypothesisReport(q_min, q_star, q_upper, im_sq, width, verdict)


@dataclass
class SigmaScan:
    k: np.ndarray
    sigma_min: np.ndarray
    spacing: float
    n_v: int
    n_f: int

    def dips(self, ratio: float = 0.1) -> np.ndarray:
        """Wavenumbers where sigma_min is a local minimum below ratio * median."""
        s = self.sigma_min
        ok = np.isfinite(s)
        if ok.sum() < 3:
            return np.zeros(0)
        med = np.median(s[ok])
        idx = [i for i in range(1, s.size - 1)
               if ok[i] and s[i] <= s[i - 1] and s[i] <= s[i + 1] and s[i] < ratio * med]
        return self.k[idx]


class _LocalGrid:
    """Isotropic grid over the bounding box of Lambda."""

    def __init__(self, cfg, wp, masks, grid, h):
        X, Y = grid.mesh()
        lam = masks.Lam
        x0, x1 = X[lam].min() - 2 * h, X[lam].max() + 2 * h
        y0, y1 = Y[lam].min() - 2 * h, Y[lam].max() + 2 * h
        self.x = np.arange(x0, x1 + 0.5 * h, h)
        self.y = np.arange(y0, y1 + 0.5 * h, h)
        self.X, self.Y = np.meshgrid(self.x, self.y, indexing="ij")
        self.inside = classify_points(cfg, wp, self.X, self.Y)["Lam"]
        # clamped support: v vanishes on Lambda points next to the boundary
        self.interior = ndimage.binary_erosion(self.inside, structure=np.ones((3, 3), bool),
                                               border_value=0)
        fld = index_at(cfg, wp, self.X, self.Y)
        self.n = fld.n
        self.n_p = fld.n_p
        self.h = h

    def laplacian(self):
        """5-point Laplacian from interior unknowns to all Lambda points."""
        rows = np.flatnonzero(self.inside.ravel())
        cols = np.flatnonzero(self.interior.ravel())
        pos = -np.ones(self.inside.size, dtype=int)
        pos[cols] = np.arange(cols.size)
        nyl = self.y.size
        Lh = np.zeros((rows.size, cols.size))
        for r, g in enumerate(rows):
            for off, w in ((0, -4.0), (nyl, 1.0), (-nyl, 1.0), (1, 1.0), (-1, 1.0)):
                c = g + off
                if 0 <= c < pos.size and pos[c] >= 0:
                    Lh[r, pos[c]] += w
        return rows, cols, Lh / self.h**2


def _fourier_bessel(k, X, Y, labels, nb):
    """Helmholtz solutions J_m(k r) e^{i m theta} about each component's centroid."""
    cols = []
    for lab in range(1, labels.max() + 1):
        sel = labels == lab
        cx, cy = X[sel].mean(), Y[sel].mean()
        r = np.hypot(X - cx, Y - cy)
        th = np.arctan2(Y - cy, X - cx)
        for m in range(-nb, nb + 1):
            cols.append(np.where(sel, jv(m, k * r) * np.exp(1j * m * th), 0.0))
    return cols


def nitp_sigma_min_scan(ks, cfg: MediumConfig, wp: WaveParams, grid: RasterGrid | None = None,
                        points_per_wavelength: int = 40, n_bessel: int | None = None,
                        cond_limit: float = 1e10) -> SigmaScan:
    """Smallest singular value of the discrete homogeneous new interior
    transmission problem  Delta v + k^2 n v - k^2 (1 - n) f - k^2 (n_p - n) S~(f) = 0
    with v clamped on Lambda and f a Fourier-Bessel Helmholtz field."""
    ks = np.asarray(ks, dtype=float)
    grid = grid if grid is not None else default_grid(cfg, wp)
    masks = region_masks(cfg, wp, grid)
    if not masks.Lam.any():
        raise EmptyRegionError("defect region is empty on this grid")
    h = wp.wavelength / points_per_wavelength
    lg = _LocalGrid(cfg, wp, masks, grid, h)
    if not lg.interior.any():
        raise EmptyRegionError("defect region has no interior points on the local grid")
    rows, vcols, Lh = lg.laplacian()
    n_loc = lg.n.ravel()[rows]
    np_loc = lg.n_p.ravel()[rows]
    if np.max(np.abs(n_loc - 1)) < 1e-12 and np.max(np.abs(np_loc - 1)) < 1e-12:
        raise DegenerateConfigurationError("n = n_p = 1 in Lambda: the coupling vanishes")
    labels, _ = ndimage.label(lg.inside, structure=np.ones((3, 3), int))
    Xg, Yg = grid.mesh()
    glabels = np.zeros(Xg.shape, dtype=int)
    comp, _ = ndimage.label(masks.Lam, structure=np.ones((3, 3), int))
    # components on the solver grid take the label of the nearest local component
    for lab in range(1, labels.max() + 1):
        cx, cy = lg.X[labels == lab].mean(), lg.Y[labels == lab].mean()
        d = np.hypot(Xg - cx, Yg - cy)
        hit = comp[np.unravel_index(np.argmin(np.where(masks.Lam, d, np.inf)), d.shape)]
        glabels[comp == hit] = lab
    sel = _selector(rows, vcols)
    out = np.full(ks.size, np.nan)
    n_f = 0
    for i, k in enumerate(ks):
        nb = n_bessel if n_bessel is not None else int(math.ceil(k * _radius(lg, labels))) + 6
        try:
            B = np.stack(_fourier_bessel(k, lg.X, lg.Y, labels, nb), axis=-1)
            Bg = np.stack(_fourier_bessel(k, Xg, Yg, glabels, nb), axis=-1)
            St = StildeOperator(cfg, wp, k, grid)
        except WoodAnomalyError as exc:
            log.warning("k = %g skipped: %s", k, exc)
            continue
        Bl = B.reshape(-1, B.shape[-1])[rows]
        scale = np.linalg.norm(Bl, axis=0)
        Bl = Bl / scale
        cond = np.linalg.cond(Bl)
        if not cond < cond_limit:
            raise BasisConditioningError(f"Fourier-Bessel basis condition {cond:.3e} exceeds limit", cond)
        # S~ of each basis field, interpolated from the solver grid
        SB = np.zeros_like(Bl)
        pts = np.stack([lg.X.ravel()[rows], lg.Y.ravel()[rows]], axis=1)
        for c in range(Bl.shape[1]):
            fld = St.field(Bg.reshape(-1, Bg.shape[-1])[St.nodes, c] / scale[c])
            SB[:, c] = _interp(grid, fld, pts)
        k2 = k * k
        Vblk = Lh + k2 * (n_loc[:, None] * sel)
        Fblk = -k2 * ((1 - n_loc)[:, None] * Bl) - k2 * ((np_loc - n_loc)[:, None] * SB)
        A = np.concatenate([Vblk, Fblk], axis=1)
        norms = np.linalg.norm(A, axis=0)
        if np.any(norms == 0):
            raise DegenerateConfigurationError("a column of the coupled operator vanishes")
        A = A / norms
        out[i] = np.linalg.svd(A, compute_uv=False)[-1]
        n_f = Bl.shape[1]
    return SigmaScan(ks, out, h, vcols.size, n_f)


def _radius(lg, labels):
    r = 0.0
    for lab in range(1, labels.max() + 1):
        sel = labels == lab
        r = max(r, float(np.hypot(lg.X[sel] - lg.X[sel].mean(), lg.Y[sel] - lg.Y[sel].mean()).max()))
    return r


def _selector(rows, cols):
    """Identity restricted to (rows, cols) of a common flat index set."""
    S = np.zeros((rows.size, cols.size))
    pos = {g: i for i, g in enumerate(rows)}
    for j, g in enumerate(cols):
        S[pos[g], j] = 1.0
    return S


def _interp(grid: RasterGrid, fld: np.ndarray, pts: np.ndarray) -> np.ndarray:
    re = RegularGridInterpolator((grid.x, grid.y), fld.real, bounds_error=False, fill_value=None)
    im = RegularGridInterpolator((grid.x, grid.y), fld.imag, bounds_error=False, fill_value=None)
    return re(pts) + 1j * im(pts)
