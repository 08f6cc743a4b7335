"""Command line entry point ``fdls``.

Exit codes: 0 success, 1 numerical failure, 2 usage or IO error,
3 validation mismatch.
"""

from __future__ import annotations

import functools
import json
import logging
import os
from pathlib import Path

import click
import numpy as np

from . import forward, glsm, io, itplab, validation
from .geometry import ConfigError, ResolutionError, default_grid, load_config

log = logging.getLogger("fdls")

EXIT_NUMERIC, EXIT_USAGE, EXIT_MISMATCH = 1, 2, 3


class Mismatch(click.ClickException):
    exit_code = EXIT_MISMATCH


class Usage(click.ClickException):
    exit_code = EXIT_USAGE


class Numeric(click.ClickException):
    exit_code = EXIT_NUMERIC


def _threads() -> int:
    raw = os.environ.get("FDLS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise Usage(f"FDLS_THREADS must be an integer, got {raw!r}") from None


def guarded(fn):
    """Map library exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ConfigError, ResolutionError, io.FormatError, OSError) as exc:
            raise Usage(str(exc)) from exc
        except (ArithmeticError, forward.SolverError, np.linalg.LinAlgError, MemoryError) as exc:
            raise Numeric(f"{type(exc).__name__}: {exc}") from exc
        except itplab.EmptyRegionError as exc:
            raise Usage(f"defect region empty: {exc}") from exc
        except itplab.DegenerateConfigurationError as exc:
            raise Numeric(f"degenerate configuration: {exc}") from exc

    return wrapper


def _load(path):
    p = Path(path)
    if not p.is_file():
        raise Usage(f"config not found: {path}")
    return load_config(p)


def _grid_override(rc, grid: str | None):
    if not grid:
        return rc.raster()
    try:
        a, b = (int(v) for v in grid.lower().split("x"))
    except ValueError:
        raise Usage(f"--grid expects NXxNY (per-cell x cells by slices), got {grid!r}") from None
    return default_grid(rc.medium, rc.wave, a, b)


def _out_dir(out) -> Path:
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose):
    """Differential linear sampling imaging of defects in periodic layers."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config", required=True, help="TOML run configuration.")
@click.option("--out", "out", required=True, help="Output directory.")
@click.option("--grid", default=None, help="Solver grid NXxNY: points per cell by slices.")
@guarded
def simulate(config, out, grid):
    """Compute the near-field matrices N+ and N-."""
    rc = _load(config)
    d = _out_dir(out)
    man = io.RunManifest.start("simulate", config)
    g = _grid_override(rc, grid)
    Np, Nm = forward.assemble_near_field(rc.medium, rc.wave, g)
    man.lap("solve")
    man.parameters = {"grid": [g.nx, g.ny, g.hd]}
    for name, N in (("nf_plus.csv", Np), ("nf_minus.csv", Nm)):
        io.write_near_field(d / name, N, rc.wave)
        man.outputs.append(d / name)
    man.write(d)
    click.echo(f"wrote {d / 'nf_plus.csv'} and {d / 'nf_minus.csv'} ({len(Np.indices)}x{len(Np.indices)})")


@main.command()
@click.argument("nf_file")
@click.option("--delta", type=float, required=True, help="Relative noise level.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out", required=True, help="Output near-field file.")
@guarded
def noise(nf_file, delta, seed, out):
    """Add multiplicative uniform complex noise to a near-field file."""
    if not Path(nf_file).is_file():
        raise Usage(f"near-field file not found: {nf_file}")
    if delta < 0:
        raise Usage("--delta must be non-negative")
    nf = io.read_near_field(nf_file)
    noisy = forward.add_noise(nf.matrix, delta, seed)
    outp = Path(out)
    outp.parent.mkdir(parents=True, exist_ok=True)
    man = io.RunManifest.start("noise")
    man.inputs = {"near_field": str(nf_file), "hash": io.file_hash(nf_file)}
    man.seeds = {"noise": seed}
    man.parameters = {"delta": delta}
    # the output directory may already hold a simulate manifest
    mname = f"{outp.stem}.manifest.json"
    io.write_near_field(outp, noisy, nf.wave_params(), manifest=mname)
    man.outputs.append(outp)
    man.write(outp.parent, mname)
    click.echo(f"wrote {outp}")


def _parse_samples(s: str):
    try:
        a, b = (int(v) for v in s.lower().split("x"))
    except ValueError:
        raise Usage(f"--samples expects NXxNY, got {s!r}") from None
    return a, b


@main.command()
@click.option("--plus", "plus", required=True, help="Near-field file for up-going incidence data (N+).")
@click.option("--minus", "minus", required=True, help="Near-field file for N-.")
@click.option("--config", "config", required=True, help="TOML run configuration.")
@click.option("--out", "out", required=True, help="Output directory.")
@click.option("--alpha", type=float, default=None, help="Regularization weight (default delta ||N||).")
@click.option("--delta", type=float, default=None, help="Noise level (default from the files).")
@click.option("--q", "q", type=int, default=None, help="Floquet-Bloch mode (default from config).")
@click.option("--seed", type=int, default=None, help="Seed recorded in the sidecar (default from the files).")
@click.option("--samples", default="120x60", show_default=True, help="Sampling grid NXxNY.")
@guarded
def image(plus, minus, config, out, alpha, delta, q, seed, samples):
    """Evaluate the differential indicator on a sampling grid."""
    rc = _load(config)
    for f in (plus, minus):
        if not Path(f).is_file():
            raise Usage(f"near-field file not found: {f}")
    fp, fm = io.read_near_field(plus), io.read_near_field(minus)
    diffs = []
    for tag, f, want in (("plus", fp, 1), ("minus", fm, -1)):
        if f.matrix.sign != want:
            diffs.append(f"{tag}: file sign {f.header['sign']} does not match")
        diffs += [f"{tag}: {d}" for d in io.wave_mismatch(f.header, rc.wave)]
    if not np.array_equal(fp.matrix.indices, rc.wave.incidence_indices()) or \
            not np.array_equal(fm.matrix.indices, rc.wave.incidence_indices()):
        diffs.append("incidence index sets differ from the configuration")
    if diffs:
        raise Mismatch("parameter mismatch between files and config:\n  " + "\n  ".join(diffs))
    q = rc.wave.q if q is None else q
    if not 0 <= q < rc.wave.M:
        raise Usage(f"--q must satisfy 0 <= q < M = {rc.wave.M}")
    if delta is None:
        delta = max(fp.matrix.delta, fm.matrix.delta)
    if seed is None:
        seed = fp.matrix.seed
    d = _out_dir(out)
    man = io.RunManifest.start("image", config)
    man.inputs = {"plus": str(plus), "plus_hash": io.file_hash(plus),
                  "minus": str(minus), "minus_hash": io.file_hash(minus)}
    data = glsm.ImagingData.from_matrices(rc.wave, fp.matrix, fm.matrix, delta, alpha)
    nxs, nys = _parse_samples(samples)
    x, y = glsm.sampling_grid(rc.wave, nxs, nys)
    imap = glsm.indicator_map(x, y, data, q, workers=_threads())
    man.lap("indicator")
    man.parameters = {"alpha": {("+" if s == 1 else "-"): a for s, a in data.alpha.items()},
                      "delta": delta, "q": q, "samples": [nxs, nys]}
    man.seeds = {"noise": seed}
    man.outputs += io.write_indicator(d, imap, seed)
    man.write(d)
    if imap.errors:
        log.warning("indicator failed at %d points", sum(len(v) for v in imap.errors.values()))
    k = np.unravel_index(np.argmax(imap.I), imap.I.shape)
    click.echo(f"max I = {imap.I.max():.6g} at (x, y) = ({imap.x[k[0]]:.6g}, {imap.y[k[1]]:.6g})")


@main.command()
@click.option("--level", type=click.Choice(["quick", "full"]), default="quick", show_default=True)
@click.option("--out", "out", default=None, help="Write the JSON report here.")
@click.option("--mutate", default=None, hidden=True, help="Inject a known fault (sharp-sign).")
@guarded
def validate(level, out, mutate):
    """Run the property suites; exit 3 when any check fails."""
    try:
        with validation.mutation(mutate):
            report = validation.run_suite(level)
    except ValueError as exc:
        raise Usage(str(exc)) from exc
    text = json.dumps(report, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    for c in report["checks"]:
        mark = "PASS" if c["passed"] else "FAIL"
        extra = f" ({c['detail']})" if c["detail"] else ""
        click.echo(f"{mark} {c['name']}: {c['value']:.3e} <= {c['threshold']:.1e}{extra}")
    if not report["passed"]:
        raise Mismatch("validation failed: " + ", ".join(c["name"] for c in report["checks"]
                                                          if not c["passed"]))


def _parse_range(s: str):
    try:
        parts = s.split(":")
        if len(parts) == 1:
            return np.array([float(parts[0])])
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except (ValueError, IndexError):
        raise Usage(f"range must be START:STOP:COUNT, got {s!r}") from None
    if n < 1:
        raise Usage("range COUNT must be >= 1")
    return np.linspace(a, b, n)


@main.command("itp-scan")
@click.option("--config", "config", required=True, help="TOML run configuration.")
@click.option("--out", "out", required=True, help="Output directory.")
@click.option("--k-range", "k_range", default=None, help="START:STOP:COUNT wavenumbers for sigma_min.")
@click.option("--kappa-range", "kappa_range", default=None, help="START:STOP:COUNT for the S~ decay scan.")
@click.option("--per-wavelength", is_flag=True, help="Read the range values in units of 1/wavelength.")
@click.option("--grid", default=None, help="Solver grid NXxNY.")
@guarded
def itp_scan(config, out, k_range, kappa_range, per_wavelength, grid):
    """Scan sigma_min(k) of the new interior transmission problem or the decay of S~."""
    if (k_range is None) == (kappa_range is None):
        raise Usage("give exactly one of --k-range and --kappa-range")
    rc = _load(config)
    d = _out_dir(out)
    g = _grid_override(rc, grid)
    unit = 1.0 / rc.wave.wavelength if per_wavelength else 1.0
    man = io.RunManifest.start("itp-scan", config)
    if kappa_range is not None:
        kap = _parse_range(kappa_range) * unit
        scan = itplab.stilde_decay_scan(kap, rc.medium, rc.wave, g)
        path = d / "stilde_decay.csv"
        io.write_scan(path, ("kappa", "norm"), (scan.kappa, scan.norms))
        man.parameters = {"slope": scan.slope, "r2": scan.r2}
        click.echo(f"fitted slope {scan.slope:.6g} (R^2 = {scan.r2:.4f})")
    else:
        ks = _parse_range(k_range) * unit
        scan = itplab.nitp_sigma_min_scan(ks, rc.medium, rc.wave, g)
        path = d / "sigma_min.csv"
        io.write_scan(path, ("k", "sigma_min"), (scan.k, scan.sigma_min))
        dips = scan.dips()
        man.parameters = {"dips": dips.tolist()}
        click.echo("dips at k = " + (", ".join(f"{v:.6g}" for v in dips) if dips.size else "none"))
    man.lap("scan")
    man.outputs.append(path)
    man.write(d)


if __name__ == "__main__":
    main()
