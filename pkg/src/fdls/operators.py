"""Finite-dimensional operator algebra: the sharp operator, single-mode
embedding/restriction, single-mode near-field matrices and the Floquet-Bloch
splitting of ML-periodic fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import WaveParams

CLAMP = 1e-12


@dataclass(frozen=True)
class SharpMatrix:
    matrix: np.ndarray
    norm: float

    def quad(self, a: np.ndarray) -> np.ndarray:
        """(F# a, a) for a vector or for the columns of a matrix; real valued."""
        a = np.asarray(a)
        v = self.matrix @ a
        return np.real(np.sum(np.conj(a) * v, axis=0))


def hermitian_abs(Hm: np.ndarray, scale: float | None = None) -> np.ndarray:
    """|H| = V |Lambda| V* with eigenvalues below CLAMP * scale set to zero."""
    Hm = 0.5 * (Hm + Hm.conj().T)
    try:
        lam, V = np.linalg.eigh(Hm)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigendecomposition failed: {exc}") from exc
    mag = np.abs(lam)
    ref = scale if scale is not None else (mag.max() if mag.size else 0.0)
    mag[mag < CLAMP * ref] = 0.0
    return (V * mag) @ V.conj().T


def sharp(F) -> SharpMatrix:
    """F# = |Re F| + |Im F| with Re F = (F + F*)/2, Im F = (F - F*)/(2i)."""
    F = np.asarray(getattr(F, "entries", F), dtype=complex)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError("sharp needs a square matrix")
    re = 0.5 * (F + F.conj().T)
    im = (F - F.conj().T) / 2j
    # clamp relative to the scale of the whole operator, not of each part
    scale = max(np.linalg.norm(re, 2), np.linalg.norm(im, 2)) if F.size else 0.0
    S = hermitian_abs(re, scale) + hermitian_abs(im, scale)
    S = 0.5 * (S + S.conj().T)
    norm = float(np.linalg.eigvalsh(S).max()) if S.size else 0.0
    return SharpMatrix(S, norm)


def mode_positions(wp: WaveParams, q: int | None = None) -> np.ndarray:
    """Positions in Z_inc of the indices j = q + M l, in increasing l."""
    q = wp.q if q is None else q
    if not 0 <= q < wp.M:
        raise ValueError("q must satisfy 0 <= q < M")
    j = wp.incidence_indices()
    return np.flatnonzero((j - q) % wp.M == 0)


def iq_embed(a: np.ndarray, wp: WaveParams, q: int | None = None) -> np.ndarray:
    pos = mode_positions(wp, q)
    a = np.asarray(a)
    if a.shape[0] != pos.size:
        raise ValueError("single-mode vector has the wrong length")
    out = np.zeros((len(wp.incidence_indices()),) + a.shape[1:], dtype=complex)
    out[pos] = a
    return out


def iq_restrict(a: np.ndarray, wp: WaveParams, q: int | None = None) -> np.ndarray:
    pos = mode_positions(wp, q)
    return np.asarray(a)[pos]


def iq_matrix(wp: WaveParams, q: int | None = None) -> np.ndarray:
    pos = mode_positions(wp, q)
    I = np.zeros((len(wp.incidence_indices()), pos.size))
    I[pos, np.arange(pos.size)] = 1.0
    return I


def nq_from_n(N, wp: WaveParams, q: int | None = None) -> np.ndarray:
    """I_q* N I_q: the principal submatrix on the indices j = q mod M."""
    N = np.asarray(getattr(N, "entries", getattr(N, "matrix", N)))
    pos = mode_positions(wp, q)
    return N[np.ix_(pos, pos)]


def floquet_component(w: np.ndarray, wp: WaveParams, q: int, axis: int = 0) -> np.ndarray:
    """alpha_q-quasi-periodic part of an ML-periodic field sampled on a uniform
    transverse grid (along ``axis``) covering one ML period."""
    w = np.asarray(w)
    nx = w.shape[axis]
    if nx % wp.M:
        raise ValueError("transverse sample count must be divisible by M")
    if not 0 <= q < wp.M:
        raise ValueError("q must satisfy 0 <= q < M")
    wh = np.fft.fft(w, axis=axis)
    keep = (np.arange(nx) - q) % wp.M == 0
    shape = [1] * w.ndim
    shape[axis] = nx
    return np.fft.ifft(wh * keep.reshape(shape), axis=axis)
