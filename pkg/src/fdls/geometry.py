"""Wave parameters, medium description and rasterized region decomposition.

The layer is ML-periodic in the transverse variable x and bounded in the
vertical variable y (|y| < h).  The periodic background consists of discs
placed in the reference cell [-L/2, L/2] and replicated with period L; the
defect consists of discs that live in the reference cell only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised for an invalid configuration; ``violations`` lists every failure."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class WaveParams:
    k: complex
    L: float
    M: int
    h: float
    n_min: int
    n_max: int
    q: int = 0

    def __post_init__(self):
        errs = []
        k = complex(self.k)
        if k.imag == 0 and k.real <= 0:
            errs.append("k must be positive")
        if k.imag < 0 or (k.imag > 0 and k.real != 0):
            errs.append("complex k must be purely imaginary with positive imaginary part")
        if not self.L > 0:
            errs.append("L must be positive")
        if not self.h > 0:
            errs.append("h must be positive")
        if int(self.M) != self.M or self.M < 1:
            errs.append("M must be an integer >= 1")
        if self.n_min < 0 or self.n_max < 0:
            errs.append("n_min and n_max must be non-negative")
        if not 0 <= self.q < self.M:
            errs.append("q must satisfy 0 <= q < M")
        if errs:
            raise ConfigError(errs)
        # k is kept real when it is real so downstream formulas stay real
        object.__setattr__(self, "k", k.real if k.imag == 0 else k)

    @property
    def ML(self) -> float:
        return self.M * self.L

    @property
    def wavelength(self) -> float:
        return 2 * math.pi / abs(self.k)

    @property
    def cell_offsets(self) -> np.ndarray:
        """The integer set Z_M = {-floor(M/2), ..., M - 1 - floor(M/2)}."""
        lo = -(self.M // 2)
        return np.arange(lo, lo + self.M)

    @property
    def x_min(self) -> float:
        """Left end M_L^- of the ML period."""
        return (self.cell_offsets[0] - 0.5) * self.L

    @property
    def x_max(self) -> float:
        return self.x_min + self.ML

    @property
    def alpha_q(self) -> float:
        return 2 * math.pi * self.q / self.ML

    def incidence_indices(self) -> np.ndarray:
        """Z_inc = {q' + M l : q' in Z_M, -n_min <= l <= n_max}, ascending."""
        ell = np.arange(-self.n_min, self.n_max + 1)
        j = (self.cell_offsets[:, None] + self.M * ell[None, :]).ravel()
        return np.sort(j)

    def with_k(self, k) -> "WaveParams":
        return WaveParams(k, self.L, self.M, self.h, self.n_min, self.n_max, self.q)


@dataclass(frozen=True)
class Disc:
    center: tuple
    radius: float
    n: complex
    # optional index used on the part of a defect disc that overlaps the background
    n_in_background: complex | None = None

    def contains(self, x, y):
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 < self.radius**2


@dataclass(frozen=True)
class MediumConfig:
    background: tuple = ()
    defect: tuple = ()

    def with_defect(self, defect) -> "MediumConfig":
        return MediumConfig(self.background, tuple(defect))

    def background_only(self) -> "MediumConfig":
        return MediumConfig(self.background, ())


@dataclass(frozen=True)
class RasterGrid:
    """Node lattice: x nodes are cell centred over the ML period, y nodes are
    the midpoints of ``ny`` equal slices of [-hd, hd]."""

    nx: int
    ny: int
    x0: float
    period: float
    hd: float

    @property
    def dx(self) -> float:
        return self.period / self.nx

    @property
    def dy(self) -> float:
        return 2 * self.hd / self.ny

    @property
    def x(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y(self) -> np.ndarray:
        return -self.hd + (np.arange(self.ny) + 0.5) * self.dy

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def cell_weight(self) -> float:
        return self.dx * self.dy


@dataclass
class RegionMasks:
    D_p: np.ndarray
    omega: np.ndarray
    O: np.ndarray
    Oc: np.ndarray
    Lam: np.ndarray
    Dhat: np.ndarray
    O_p: np.ndarray
    Oc_p: np.ndarray
    Lam_p: np.ndarray
    Dhat_p: np.ndarray
    cell0: np.ndarray
    # indices of background discs whose raster component meets omega
    touching: tuple = field(default=())


@dataclass
class IndexField:
    n: np.ndarray
    n_p: np.ndarray


def _as_complex(v, where, errs):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            errs.append(f"{where}: index must be a number or [re, im]")
            return None
        return complex(float(v[0]), float(v[1]))
    try:
        return complex(v)
    except (TypeError, ValueError):
        errs.append(f"{where}: index is not a number")
        return None


def _parse_disc(raw, where, errs):
    try:
        cx, cy = (float(c) for c in raw["center"])
        r = float(raw["radius"])
    except (KeyError, TypeError, ValueError):
        errs.append(f"{where}: disc needs center=[x, y] and radius")
        return None
    n = _as_complex(raw.get("n", 1.0), where, errs)
    nb = raw.get("n_in_background")
    if nb is not None:
        nb = _as_complex(nb, where, errs)
    if n is None:
        return None
    return Disc((cx, cy), r, n, nb)


def validate_config(raw: dict, wp: WaveParams) -> MediumConfig:
    """Check the standing assumptions on the medium and build a MediumConfig.

    ``raw`` has the layout of the TOML file: ``{"background": {"disc": [...]},
    "defect": {"disc": [...]}}``.  All violations are collected and raised
    together as a ConfigError.
    """
    errs = []
    groups = {}
    for name in ("background", "defect"):
        discs = []
        for i, d in enumerate((raw.get(name) or {}).get("disc", []) or []):
            where = f"{name}.disc[{i}]"
            disc = _parse_disc(d, where, errs)
            if disc is None:
                continue
            cx, cy = disc.center
            if not disc.radius > 0:
                errs.append(f"{where}: radius must be positive")
            for val in (disc.n, disc.n_in_background):
                if val is None:
                    continue
                if not val.real > 0:
                    errs.append(f"{where}: index real part must be positive")
                if val.imag < 0:
                    errs.append(f"{where}: index imaginary part must be non-negative")
            if abs(cy) + disc.radius >= wp.h:
                errs.append(f"{where}: disc must lie strictly inside |y| < h")
            reach = abs(cx) + disc.radius
            if name == "background" and reach > wp.L / 2:
                errs.append(f"{where}: background disc must lie within the reference cell")
            if name == "defect" and reach >= wp.L / 2:
                errs.append(f"{where}: defect disc must not touch the reference cell boundary")
            if name == "background" and disc.n_in_background is not None:
                errs.append(f"{where}: n_in_background is only meaningful for defects")
            discs.append(disc)
        groups[name] = tuple(discs)
    if errs:
        raise ConfigError(errs)
    return MediumConfig(groups["background"], groups["defect"])


def default_grid(cfg: MediumConfig, wp: WaveParams, nx_per_cell: int = 64, ny: int = 128,
                 hd: float | None = None) -> RasterGrid:
    """Grid over the ML period whose vertical extent hugs D with a small margin."""
    if hd is None:
        ext = max((abs(d.center[1]) + d.radius for d in cfg.background + cfg.defect),
                  default=0.1 * wp.h)
        hd = min(wp.h, ext * (1 + 4.0 / ny))
    if not 0 < hd <= wp.h:
        raise ConfigError("grid half height must lie in (0, h]")
    return RasterGrid(int(nx_per_cell) * wp.M, int(ny), wp.x_min, wp.ML, float(hd))


def _periodic_shifts(wp: WaveParams):
    return [m * wp.L for m in wp.cell_offsets]


def _check_gaps(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid):
    """Non-overlapping discs closer than two grid cells cannot be told apart."""
    tol = 2 * max(grid.dx, grid.dy)
    items = [(d, True) for d in cfg.background] + [(d, False) for d in cfg.defect]
    for i, (a, a_bg) in enumerate(items):
        for b, b_bg in items[i:]:
            shifts = [wp.L * s for s in (-1, 0, 1)] if (a_bg and b_bg) else [0.0]
            for s in shifts:
                if a is b and s == 0:
                    continue
                dist = math.hypot(a.center[0] - b.center[0] - s, a.center[1] - b.center[1])
                gap = dist - a.radius - b.radius
                if 0 <= gap < tol:
                    raise ResolutionError(
                        f"grid too coarse to separate inclusions (gap {gap:.4g} < {tol:.4g})")


def _background_mask(cfg, wp, X, Y):
    mask = np.zeros(X.shape, dtype=bool)
    for d in cfg.background:
        for s in _periodic_shifts(wp):
            mask |= (X - d.center[0] - s) ** 2 + (Y - d.center[1]) ** 2 < d.radius**2
    return mask


def _defect_mask(cfg, X, Y):
    mask = np.zeros(X.shape, dtype=bool)
    for d in cfg.defect:
        mask |= d.contains(X, Y)
    return mask


def _periodize(mask, wp, grid):
    per = grid.nx // wp.M
    out = np.zeros_like(mask)
    for m in wp.cell_offsets:
        out |= np.roll(mask, m * per, axis=0)
    return out


def region_masks(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid) -> RegionMasks:
    if grid.nx % wp.M:
        raise ResolutionError("nx must be divisible by M")
    _check_gaps(cfg, wp, grid)
    X, Y = grid.mesh()
    cell0 = np.abs(X) < wp.L / 2
    D_p = _background_mask(cfg, wp, X, Y)
    omega = _defect_mask(cfg, X, Y)
    labels, count = ndimage.label(D_p & cell0, structure=np.ones((3, 3), dtype=int))
    hit = np.unique(labels[omega & (labels > 0)])
    O = np.isin(labels, hit) & (labels > 0)
    Oc = (labels > 0) & ~O
    Lam = O | omega
    Dhat = Lam | Oc
    touching = []
    for i, d in enumerate(cfg.background):
        disc = d.contains(X, Y) & cell0
        if np.any(disc & O):
            touching.append(i)
    return RegionMasks(
        D_p=D_p, omega=omega, O=O, Oc=Oc, Lam=Lam, Dhat=Dhat,
        O_p=_periodize(O, wp, grid), Oc_p=_periodize(Oc, wp, grid),
        Lam_p=_periodize(Lam, wp, grid), Dhat_p=_periodize(Dhat, wp, grid),
        cell0=cell0, touching=tuple(touching))


def index_at(cfg: MediumConfig, wp: WaveParams, x, y) -> IndexField:
    """Refractive indices n and n_p at arbitrary points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    # fold x into the ML period so that periodic copies are found
    xf = (x - wp.x_min) % wp.ML + wp.x_min
    n_p = np.ones(np.broadcast(xf, y).shape, dtype=complex)
    in_bg = np.zeros(n_p.shape, dtype=bool)
    for d in cfg.background:
        for s in list(_periodic_shifts(wp)) + [-wp.ML, wp.ML]:
            inside = (xf - d.center[0] - s) ** 2 + (y - d.center[1]) ** 2 < d.radius**2
            n_p = np.where(inside, d.n, n_p)
            in_bg |= inside
    n = n_p.copy()
    for d in cfg.defect:
        inside = d.contains(xf, y)
        if d.n_in_background is None:
            n = np.where(inside, d.n, n)
        else:
            n = np.where(inside & in_bg, d.n_in_background, np.where(inside, d.n, n))
    outside = np.abs(y) >= wp.h
    return IndexField(np.where(outside, 1.0, n), np.where(outside, 1.0, n_p))


def sample_index(cfg: MediumConfig, wp: WaveParams, grid: RasterGrid) -> IndexField:
    X, Y = grid.mesh()
    return index_at(cfg, wp, X, Y)


def classify_points(cfg: MediumConfig, wp: WaveParams, x, y) -> dict:
    """Region membership of arbitrary points, decided from the disc geometry.

    A background disc belongs to O when it intersects some defect disc.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xf = (x - wp.x_min) % wp.ML + wp.x_min
    shape = np.broadcast(xf, y).shape
    omega = np.zeros(shape, dtype=bool)
    for d in cfg.defect:
        omega |= d.contains(xf, y)
    out = {k: np.zeros(shape, dtype=bool) for k in ("D_p", "O", "Oc", "O_p", "Oc_p")}
    for d in cfg.background:
        touches = any(math.hypot(d.center[0] - w.center[0], d.center[1] - w.center[1])
                      < d.radius + w.radius for w in cfg.defect)
        for s in list(_periodic_shifts(wp)) + [-wp.ML, wp.ML]:
            inside = (xf - d.center[0] - s) ** 2 + (y - d.center[1]) ** 2 < d.radius**2
            out["D_p"] |= inside
            home = s == 0
            if touches:
                out["O_p"] |= inside
                if home:
                    out["O"] |= inside
            else:
                out["Oc_p"] |= inside
                if home:
                    out["Oc"] |= inside
    out["omega"] = omega
    out["Lam"] = out["O"] | omega
    out["Dhat"] = out["Lam"] | out["Oc"]
    lam_p = np.zeros(shape, dtype=bool)
    for s in list(_periodic_shifts(wp)) + [-wp.ML, wp.ML]:
        xs = (xf - s - wp.x_min) % wp.ML + wp.x_min
        for d in cfg.defect:
            lam_p |= d.contains(xs, y)
    out["Lam_p"] = out["O_p"] | lam_p
    out["Dhat_p"] = out["Lam_p"] | out["Oc_p"]
    return out


@dataclass
class RunConfig:
    wave: WaveParams
    medium: MediumConfig
    grid: dict
    glsm: dict
    source: str = ""

    def raster(self) -> RasterGrid:
        return default_grid(self.medium, self.wave, **self.grid)


def parse_config(raw: dict, source: str = "") -> RunConfig:
    w = raw.get("wave") or {}
    try:
        wp = WaveParams(
            k=float(w["k"]), L=float(w["L"]), M=int(w["M"]), h=float(w["h"]),
            n_min=int(w.get("n_min", 5)), n_max=int(w.get("n_max", 5)), q=int(w.get("q", 0)))
    except KeyError as exc:
        raise ConfigError(f"[wave] is missing {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[wave] has an invalid value: {exc}") from None
    medium = validate_config(raw, wp)
    g = raw.get("grid") or {}
    grid = {}
    for key in ("nx_per_cell", "ny"):
        if key in g:
            grid[key] = int(g[key])
    if "hd" in g:
        grid["hd"] = float(g["hd"])
    gl = dict(raw.get("glsm") or {})
    return RunConfig(wp, medium, grid, gl, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return parse_config(raw, str(path))
