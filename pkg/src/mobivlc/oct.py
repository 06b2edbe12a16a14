"""Orthogonal circulant transform (OCT) precoding across data subcarriers.

The transform T is the circulant whose column c is ``first_row`` rotated
down by c places, so T @ x is the circular convolution of ``first_row``
with x and T @ e0 is ``first_row`` itself.  Its spectrum is a quadratic (Zadoff-Chu style) phase
sequence, so every eigenvalue has unit modulus and T is unitary.  Nothing
about it depends on the channel.

Two generators are available:

``"zc"``
    The phase sequence as is.  Because a Zadoff-Chu sequence is CAZAC,
    ``first_row`` also has constant modulus 1/sqrt(n): each data symbol
    spreads with equal weight over every subcarrier, and after
    zero-forcing all symbols see the same (average) noise variance.
``"zc-real"``
    Conjugate-symmetrized phases, giving a real orthogonal T.  The energy
    per entry is uneven, so the noise is only roughly equalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GENERATORS = ("zc", "zc-real")


@dataclass(frozen=True)
class OctMatrix:
    n: int
    first_row: np.ndarray
    eigenvalues: np.ndarray
    generator: str = "zc"

    def matrix(self) -> np.ndarray:
        """Dense T with T[r, c] = first_row[(r - c) mod n]."""
        idx = (np.arange(self.n)[:, None] - np.arange(self.n)[None, :]) % self.n
        return self.first_row[idx]


def _phases(n: int) -> np.ndarray:
    k = np.arange(n, dtype=float)
    if n % 2 == 0:
        return np.pi * k * k / n
    return np.pi * k * (k + 1) / n


def build_oct(n: int, generator: str = "zc") -> OctMatrix:
    if n < 1:
        raise ValueError(f"OCT size must be >= 1, got {n}")
    if generator not in GENERATORS:
        raise ValueError(f"unknown OCT generator {generator!r}; expected one of {GENERATORS}")
    theta = _phases(n)
    if generator == "zc-real":
        theta[0] = 0.0
        half = (n - 1) // 2
        k = np.arange(1, half + 1)
        theta[n - k] = -theta[k]
        if n % 2 == 0:
            # nearest of {0, pi}
            theta[n // 2] = 0.0 if np.cos(theta[n // 2]) >= 0 else np.pi
    lam = np.exp(1j * theta)
    row = np.fft.ifft(lam)
    if generator == "zc-real":
        row = row.real
    lam = np.fft.fft(row)
    row.setflags(write=False)
    lam.setflags(write=False)
    return OctMatrix(n, row, lam, generator)


def _check(symbols, oct: OctMatrix) -> np.ndarray:
    x = np.asarray(symbols, dtype=complex)
    if x.shape[-1] != oct.n:
        raise ValueError(f"expected trailing length {oct.n}, got {x.shape[-1]}")
    return x


def precode(symbols, oct: OctMatrix) -> np.ndarray:
    """T @ symbols along the last axis: multiply the spectrum by the eigenvalues."""
    x = _check(symbols, oct)
    return np.fft.ifft(oct.eigenvalues * np.fft.fft(x, axis=-1), axis=-1)


def decode(symbols, oct: OctMatrix) -> np.ndarray:
    """T^H @ symbols (the inverse of :func:`precode`)."""
    x = _check(symbols, oct)
    return np.fft.ifft(np.conj(oct.eigenvalues) * np.fft.fft(x, axis=-1), axis=-1)
