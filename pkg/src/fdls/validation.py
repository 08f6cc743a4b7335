"""Property suites behind ``fdls validate``.

Each check returns (value, threshold) and passes when value <= threshold.
Library functions are looked up on their modules at call time so that a
patched implementation (mutation testing) is what gets checked.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass

import numpy as np

from . import forward, glsm, operators, oracle, quasigreen, scenarios
from .geometry import MediumConfig, default_grid


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float
    detail: str = ""


def _rand_unitary(n, rng):
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def check_sharp_normal():
    """F = U D U* with D diagonal: F# = U (|Re D| + |Im D|) U*."""
    rng = np.random.default_rng(1)
    U = _rand_unitary(6, rng)
    d = np.array([1 + 1j, -2 + 0.5j, 0.3 - 0.7j, -0.1 - 1.2j, 2.0 + 0j, 0.5j])
    F = (U * d) @ U.conj().T
    ref = (U * (np.abs(d.real) + np.abs(d.imag))) @ U.conj().T
    S = operators.sharp(F).matrix
    return float(np.linalg.norm(S - ref) / np.linalg.norm(ref)), 1e-12


def check_sharp_psd():
    rng = np.random.default_rng(2)
    F = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    S = operators.sharp(F)
    lam = np.linalg.eigvalsh(S.matrix)
    return float(max(0.0, -lam.min()) / S.norm), 1e-12


def check_green_forms():
    wp = scenarios.wave_params()
    lam = wp.wavelength
    x = np.array([0.0, 0.3, -1.1, 2.4]) * lam
    y = np.array([0.1, 0.25, -0.6, 1.0]) * lam
    a = quasigreen.eval_phi_ewald(x, y, wp)
    b = quasigreen.eval_phi_spectral(x, y, wp)
    return float(np.max(np.abs(a - b) / np.abs(b))), 1e-8


def check_tikhonov():
    """Normal-equation minimizer against an augmented least-squares solve."""
    rng = np.random.default_rng(3)
    n = 20
    N = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    phi = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    S = operators.sharp(N)
    alpha, delta = 0.05, 0.01
    res = glsm.tikhonov_argmin(N, S, phi, alpha, delta)
    P = S.matrix + delta * S.norm * np.eye(n)
    lam, V = np.linalg.eigh(P)
    root = (V * np.sqrt(np.clip(lam, 0, None))) @ V.conj().T
    A = np.vstack([np.sqrt(alpha) * root, N])
    rhs = np.concatenate([np.zeros(n), phi])
    ref = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return float(np.linalg.norm(res.a - ref) / np.linalg.norm(ref)), 1e-8


def check_iq_selection():
    wp = scenarios.wave_params()
    rng = np.random.default_rng(4)
    n = len(wp.incidence_indices())
    N = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    S = operators.sharp(N).matrix
    Iq = operators.iq_matrix(wp)
    return float(np.max(np.abs(Iq.T @ S @ Iq - operators.nq_from_n(S, wp)))), 0.0


def _coarse_background():
    wp = scenarios.wave_params()
    cfg = MediumConfig(scenarios.background(), ())
    grid = default_grid(cfg, wp, 16, 32)
    return wp, cfg, forward.LSOperator(cfg, wp, grid)


def check_floquet_selection():
    wp, cfg, op = _coarse_background()
    Np, Nm = forward.assemble_near_field(cfg, wp, op=op)
    j = wp.incidence_indices()
    off = (j[:, None] - j[None, :]) % wp.M != 0
    worst = 0.0
    for N in (Np.entries, Nm.entries):
        worst = max(worst, float(np.abs(N[off]).max() / np.abs(N).max()))
    return worst, 1e-6


def check_flux_balance():
    wp, cfg, op = _coarse_background()
    return max(forward.flux_balance(op, 1, 1), forward.flux_balance(op, -2, -1)), 1e-4


def check_oracle():
    wp = scenarios.wave_params()
    cfg = scenarios.example("1")
    grid = default_grid(cfg, wp, 32, 64)
    op = forward.LSOperator(cfg, wp, grid)
    Np, Nm = forward.assemble_near_field(cfg, wp, grid, op)
    Dp, Dm = oracle.dense_near_field(cfg, wp, grid)
    return max(float(np.linalg.norm(Np.entries - Dp.entries) / np.linalg.norm(Dp.entries)),
               float(np.linalg.norm(Nm.entries - Dm.entries) / np.linalg.norm(Dm.entries))), 1e-4


def check_decay():
    from .itplab import stilde_decay_scan

    wp = scenarios.wave_params()
    cfg = scenarios.example("1")
    grid = default_grid(cfg, wp, 32, 64)
    scan = stilde_decay_scan(np.arange(1, 5) / wp.wavelength, cfg, wp, grid)
    # slope < 0 and R^2 >= 0.95 together mean this margin is <= 0
    return float(max(scan.slope, 0.95 - scan.r2)), 0.0


QUICK = [("sharp_normal_matrix", check_sharp_normal), ("sharp_psd", check_sharp_psd),
         ("green_ewald_vs_spectral", check_green_forms), ("tikhonov_vs_lstsq", check_tikhonov),
         ("single_mode_selection", check_iq_selection),
         ("floquet_selection", check_floquet_selection), ("flux_balance", check_flux_balance)]
FULL = QUICK + [("oracle_cross_check", check_oracle), ("stilde_decay", check_decay)]


def run_suite(level: str = "quick") -> dict:
    suite = {"quick": QUICK, "full": FULL}[level]
    results = []
    for name, fn in suite:
        t = time.perf_counter()
        try:
            value, thr = fn()
            ok = bool(value <= thr)
            detail = ""
        except Exception as exc:  # a crashing check is a failed check
            value, thr, ok, detail = float("nan"), float("nan"), False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, ok, value, thr, round(time.perf_counter() - t, 3), detail))
    return {"level": level, "passed": all(r.passed for r in results),
            "checks": [asdict(r) for r in results]}


@contextmanager
def mutation(name: str | None):
    """Temporarily replace a library function by a deliberately wrong variant."""
    if not name:
        yield
        return
    if name != "sharp-sign":
        raise ValueError(f"unknown mutation {name!r}")
    orig = operators.sharp

    def flipped(F):
        F = np.asarray(getattr(F, "entries", F), dtype=complex)
        re = 0.5 * (F + F.conj().T)
        im = (F - F.conj().T) / 2j
        S = operators.hermitian_abs(re) - operators.hermitian_abs(im)
        return operators.SharpMatrix(S, float(np.abs(np.linalg.eigvalsh(S)).max()))

    operators.sharp = flipped
    glsm.sharp = flipped
    try:
        yield
    finally:
        operators.sharp = orig
        glsm.sharp = orig
