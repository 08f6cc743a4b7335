"""File formats: near-field CSV, indicator CSV + JSON sidecar + 16-bit PGM,
scan CSVs and the run manifest."""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .forward import NearFieldMatrix
from .geometry import WaveParams

MANIFEST = "manifest.json"
WAVE_KEYS = ("k", "L", "M", "h", "n_min", "n_max", "q")


class FormatError(ValueError):
    pass


def _fmt(v) -> str:
    return format(float(v), ".17g")


def wave_header(wp: WaveParams) -> dict:
    return {"k": _fmt(wp.k), "L": _fmt(wp.L), "M": str(wp.M), "h": _fmt(wp.h),
            "n_min": str(wp.n_min), "n_max": str(wp.n_max), "q": str(wp.q)}


def write_near_field(path, N: NearFieldMatrix, wp: WaveParams, manifest: str = MANIFEST):
    head = {"sign": "+" if N.sign == 1 else "-", **wave_header(wp),
            "delta": _fmt(N.delta), "seed": "none" if N.seed is None else str(N.seed)}
    lines = ["# " + " ".join(f"{k}={v}" for k, v in head.items()),
             f"# manifest={manifest}",
             "# columns=l_index,j_index,re,im"]
    idx = np.asarray(N.indices)
    E = np.asarray(N.entries)
    for a, ell in enumerate(idx):
        for b, j in enumerate(idx):
            v = E[a, b]
            lines.append(f"{int(ell)},{int(j)},{_fmt(v.real)},{_fmt(v.imag)}")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class NearFieldFile:
    header: dict
    matrix: NearFieldMatrix

    def wave_params(self) -> WaveParams:
        h = self.header
        try:
            return WaveParams(float(h["k"]), float(h["L"]), int(h["M"]), float(h["h"]),
                              int(h["n_min"]), int(h["n_max"]), int(h.get("q", 0)))
        except KeyError as exc:
            raise FormatError(f"near-field header lacks {exc.args[0]}") from None


def read_near_field(path) -> NearFieldFile:
    path = Path(path)
    header = {}
    rows = []
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    header[k] = v
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise FormatError(f"{path}:{ln}: expected 4 fields, got {len(parts)}")
        try:
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])))
        except ValueError:
            raise FormatError(f"{path}:{ln}: malformed number") from None
    if header.get("sign") not in ("+", "-"):
        raise FormatError(f"{path}: header has no sign=+ or sign=-")
    if not rows:
        raise FormatError(f"{path}: no entries")
    idx = np.array(sorted({r[0] for r in rows}))
    if not np.array_equal(idx, np.array(sorted({r[1] for r in rows}))) or len(rows) != idx.size**2:
        raise FormatError(f"{path}: entries do not form a square matrix over one index set")
    pos = {int(j): i for i, j in enumerate(idx)}
    E = np.zeros((idx.size, idx.size), dtype=complex)
    seen = np.zeros(E.shape, dtype=bool)
    for ell, j, re, im in rows:
        if seen[pos[ell], pos[j]]:
            raise FormatError(f"{path}: duplicate entry ({ell}, {j})")
        seen[pos[ell], pos[j]] = True
        E[pos[ell], pos[j]] = complex(re, im)
    delta = float(header.get("delta", 0.0))
    seed = header.get("seed", "none")
    seed = None if seed == "none" else int(seed)
    N = NearFieldMatrix(1 if header["sign"] == "+" else -1, idx, E, delta, seed)
    return NearFieldFile(header, N)


def wave_mismatch(header: dict, wp: WaveParams) -> list:
    """Differences between a file header and the configured wave parameters."""
    ref = wave_header(wp)
    diffs = []
    for key in WAVE_KEYS:
        if key not in header:
            continue
        a, b = header[key], ref[key]
        try:
            same = np.isclose(float(a), float(b), rtol=1e-12, atol=0.0)
        except ValueError:
            same = a == b
        if not same:
            diffs.append(f"{key}: file {a} != config {b}")
    return diffs


def write_indicator(out_dir, imap, seed=None, manifest: str = MANIFEST, stem: str = "indicator"):
    """CSV map, 16-bit PGM image and JSON sidecar; returns the written paths."""
    out = Path(out_dir)
    X, Y = np.meshgrid(imap.x, imap.y, indexing="ij")
    csv = out / f"{stem}.csv"
    lines = [f"# manifest={manifest}", "x,y,I_plus,I_minus,I"]
    for xv, yv, a, b, c in zip(X.ravel(), Y.ravel(), imap.I_plus.ravel(), imap.I_minus.ravel(),
                               imap.I.ravel()):
        lines.append(",".join(_fmt(v) for v in (xv, yv, a, b, c)))
    csv.write_text("\n".join(lines) + "\n")
    lo, hi = float(imap.I.min()), float(imap.I.max())
    pgm = out / f"{stem}.pgm"
    write_pgm(pgm, imap.I, lo, hi)
    side = out / f"{stem}.json"
    meta = {"min": lo, "max": hi,
            "alpha": {("+" if s == 1 else "-"): float(a) for s, a in imap.alpha.items()},
            "delta": float(imap.delta), "seed": seed, "q": int(imap.q),
            "shape": [int(imap.x.size), int(imap.y.size)],
            "scaling": "pixel = round(65535 * (I - min) / (max - min))",
            "orientation": "rows run from the largest y down, columns along increasing x",
            "manifest": manifest}
    side.write_text(json.dumps(meta, indent=2) + "\n")
    return [csv, pgm, side]


def write_pgm(path, values: np.ndarray, lo: float, hi: float):
    """Binary 16-bit big-endian P5 image; ``values`` indexed [ix, iy]."""
    img = np.asarray(values, dtype=float).T[::-1]
    span = hi - lo
    if span > 0:
        px = np.rint(65535 * (img - lo) / span)
    else:
        px = np.zeros(img.shape)
    px = np.clip(px, 0, 65535).astype(">u2")
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(px.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h, mx = int(parts[1]), int(parts[2]), int(parts[3])
    if mx != 65535:
        raise FormatError("only 16-bit PGM is supported")
    return np.frombuffer(parts[4][: 2 * w * h], dtype=">u2").reshape(h, w)


def write_scan(path, names, columns, manifest: str = MANIFEST):
    lines = [f"# manifest={manifest}", ",".join(names)]
    for row in zip(*columns):
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str | None = None
    config_path: str | None = None
    versions: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, config_path=None) -> "RunManifest":
        from . import __version__

        m = cls(command)
        m.versions = {"fdls": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                      "python": platform.python_version()}
        if config_path is not None:
            m.config_path = str(config_path)
            m.config_hash = file_hash(config_path)
        m._t0 = time.perf_counter()
        return m

    def lap(self, name: str):
        self.timings[name] = round(time.perf_counter() - getattr(self, "_t0", time.perf_counter()), 6)

    def write(self, out_dir, name: str = MANIFEST) -> Path:
        path = Path(out_dir) / name
        d = asdict(self)
        d["outputs"] = [str(p) for p in self.outputs]
        path.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
        return path
