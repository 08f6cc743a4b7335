"""Reference configurations: the periodic layer of discs used throughout the
tests together with the five defect examples.

All lengths are multiples of the wavelength lam = 2 pi / k with k = pi / 3.14.
The disc positions inside the cell are not prescribed by the source
description; the layout below keeps every disc well inside the cell and the
two background discs far apart.
"""

from __future__ import annotations

import math

from .geometry import Disc, MediumConfig, RunConfig, WaveParams

K_REF = math.pi / 3.14
LAM = 2 * math.pi / K_REF

R1 = 0.3 * LAM
R2 = 0.4 * LAM
N_P = 2.0
C_R2 = (-0.7 * LAM, 0.45 * LAM)
C_R1 = (0.75 * LAM, -0.45 * LAM)
# a spot away from both background discs
C_FREE = (0.55 * LAM, 0.75 * LAM)


def wave_params(q: int = 1, M: int = 3, n_min: int = 5, n_max: int = 5) -> WaveParams:
    return WaveParams(K_REF, math.pi * LAM, M, 1.5 * LAM, n_min, n_max, q)


def background():
    return (Disc(C_R2, R2, complex(N_P)), Disc(C_R1, R1, complex(N_P)))


def periodic_only() -> MediumConfig:
    return MediumConfig(background(), ())


def example(name: str) -> MediumConfig:
    """Defect layouts:

    1  : disc of radius 0.25 lam, n = 4, inside the r2 disc
    2a : same disc, n = 4, partially overlapping the r2 disc
    2b : as 2a with n = 4 inside the background disc and n = 3 outside it
    3  : disc of radius 0.2 lam, n = 3, away from the background
    4  : two discs of radius 0.2 lam, one overlapping the r2 disc (n = 4 / 3),
         one free (n = 2.5)
    5  : as 4 but the first disc lies inside the r2 disc (n = 4)
    """
    bg = background()
    lam = LAM
    cx, cy = C_R2
    if name == "1":
        d = (Disc(C_R2, 0.25 * lam, 4.0),)
    elif name == "2a":
        d = (Disc((-0.25 * lam, 0.65 * lam), 0.25 * lam, 4.0),)
    elif name == "2b":
        d = (Disc((-0.25 * lam, 0.65 * lam), 0.25 * lam, 3.0, 4.0),)
    elif name == "3":
        d = (Disc(C_FREE, 0.2 * lam, 3.0),)
    elif name == "4":
        d = (Disc((cx + 0.35 * lam, cy + 0.15 * lam), 0.2 * lam, 3.0, 4.0),
             Disc(C_FREE, 0.2 * lam, 2.5))
    elif name == "5":
        d = (Disc(C_R2, 0.2 * lam, 4.0), Disc(C_FREE, 0.2 * lam, 2.5))
    else:
        raise KeyError(f"unknown example {name!r}")
    return MediumConfig(bg, tuple(Disc(x.center, x.radius, complex(x.n),
                                       None if x.n_in_background is None else complex(x.n_in_background))
                                  for x in d))


def run_config(name: str | None, nx_per_cell: int = 64, ny: int = 128) -> RunConfig:
    medium = periodic_only() if name is None else example(name)
    return RunConfig(wave_params(), medium, {"nx_per_cell": nx_per_cell, "ny": ny},
                     {"delta": 0.01, "seed": 0})


def to_toml(rc: RunConfig) -> str:
    wp = rc.wave
    lines = ["[wave]",
             f"k = {wp.k!r}", f"L = {wp.L!r}", f"M = {wp.M}", f"h = {wp.h!r}",
             f"n_min = {wp.n_min}", f"n_max = {wp.n_max}", f"q = {wp.q}", ""]
    for group, discs in (("background", rc.medium.background), ("defect", rc.medium.defect)):
        for d in discs:
            lines += [f"[[{group}.disc]]",
                      f"center = [{d.center[0]!r}, {d.center[1]!r}]",
                      f"radius = {d.radius!r}",
                      f"n = [{d.n.real!r}, {d.n.imag!r}]"]
            if d.n_in_background is not None:
                nb = d.n_in_background
                lines.append(f"n_in_background = [{nb.real!r}, {nb.imag!r}]")
            lines.append("")
    if rc.grid:
        lines.append("[grid]")
        lines += [f"{k} = {v!r}" for k, v in rc.grid.items()]
        lines.append("")
    if rc.glsm:
        lines.append("[glsm]")
        lines += [f"{k} = {v!r}" for k, v in rc.glsm.items()]
        lines.append("")
    return "\n".join(lines)
