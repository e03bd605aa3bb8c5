"""Structured Hermitian PSD covariance algebra.

Circulant covariances C = F^H diag(c) F (unitary DFT F) support O(N log N)
apply/solve/logdet. Block-Toeplitz covariances C = Q^H diag(c) Q with
Q = Q_t kron Q_c (truncated oversampled unitary DFT factors) are assembled
densely; the assembly exploits that every entry is a sample of the 2D DFT of
the spectrum, so it costs one small FFT plus a gather.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import InvalidCovarianceError, NumericalError

# One-shot diagonal jitter applied if the dense factorization fails.
JITTER_REL = 1e-9


def _validate_spectrum(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise InvalidCovarianceError("spectrum must be a nonempty 1-D vector")
    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise InvalidCovarianceError("spectrum entries must be finite and > 0")
    return c


@dataclass(frozen=True)
class CirculantCovariance:
    """C = F^H diag(spectrum) F; the spectrum holds the eigenvalues."""

    spectrum: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "spectrum", _validate_spectrum(self.spectrum))

    @property
    def n(self) -> int:
        return self.spectrum.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        """C x along the last axis, via FFT."""
        return np.fft.ifft(self.spectrum * np.fft.fft(x, axis=-1), axis=-1)

    def solve(self, x: np.ndarray) -> np.ndarray:
        """C^{-1} x along the last axis."""
        return np.fft.ifft(np.fft.fft(x, axis=-1) / self.spectrum, axis=-1)

    def logdet_pi(self) -> float:
        """log det(pi C) = sum_i log(pi c_i)."""
        return float(np.sum(np.log(np.pi * self.spectrum)))

    def dense(self) -> np.ndarray:
        F = scipy.linalg.dft(self.n, scale="sqrtn")
        return F.conj().T @ (self.spectrum[:, None] * F)


@lru_cache(maxsize=None)
def offset_index_map(n_subcarriers: int, n_timeslots: int) -> np.ndarray:
    """(N, N) map from entry (m, n) to its flat (dt, dc) offset bin.

    Grid vectorization is k = t * N_c + c; offsets are taken modulo the
    doubled axis lengths, matching the 2D DFT of the length-4*N_c*N_t
    spectrum laid out as (2 N_t, 2 N_c).
    """
    m = np.arange(n_subcarriers * n_timeslots)
    mt, mc = m // n_subcarriers, m % n_subcarriers
    dt = (mt[None, :] - mt[:, None]) % (2 * n_timeslots)
    dc = (mc[None, :] - mc[:, None]) % (2 * n_subcarriers)
    return dt * (2 * n_subcarriers) + dc


@dataclass(frozen=True)
class BlockToeplitzCovariance:
    """C = Q^H diag(spectrum) Q, block-Toeplitz with Toeplitz blocks.

    Q_t holds the first N_t columns of the unitary 2N_t-point DFT matrix
    (orthonormal columns, so spectrum == 1 gives the identity); Q_c likewise.
    The spectrum is indexed k = k_t * 2N_c + k_c, length 4 N_c N_t.
    """

    spectrum: np.ndarray
    n_subcarriers: int
    n_timeslots: int

    def __post_init__(self):
        c = _validate_spectrum(self.spectrum)
        if c.size != 4 * self.n_subcarriers * self.n_timeslots:
            raise InvalidCovarianceError(
                f"spectrum length {c.size} != 4 * {self.n_subcarriers} * {self.n_timeslots}"
            )
        object.__setattr__(self, "spectrum", c)

    @property
    def n(self) -> int:
        return self.n_subcarriers * self.n_timeslots

    def assemble(self) -> np.ndarray:
        """Dense (N, N) matrix; entries are 2D-DFT samples of the spectrum."""
        nt2, nc2 = 2 * self.n_timeslots, 2 * self.n_subcarriers
        table = np.fft.fft2(self.spectrum.reshape(nt2, nc2)) / (nt2 * nc2)
        idx = offset_index_map(self.n_subcarriers, self.n_timeslots)
        return table.reshape(-1)[idx]

    def kron_factor(self) -> np.ndarray:
        """Explicit Q = Q_t kron Q_c, shape (4 N_c N_t, N_c N_t)."""
        qt = scipy.linalg.dft(2 * self.n_timeslots, scale="sqrtn")[:, : self.n_timeslots]
        qc = scipy.linalg.dft(2 * self.n_subcarriers, scale="sqrtn")[:, : self.n_subcarriers]
        return np.kron(qt, qc)

    def _cho(self):
        dense = self.assemble()
        try:
            return scipy.linalg.cho_factor(dense, lower=True)
        except np.linalg.LinAlgError:
            jitter = JITTER_REL * float(np.mean(self.spectrum))
            try:
                return scipy.linalg.cho_factor(
                    dense + jitter * np.eye(self.n), lower=True
                )
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    "block-Toeplitz factorization failed after jitter"
                ) from exc

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.assemble().T

    def solve(self, x: np.ndarray) -> np.ndarray:
        """C^{-1} x along the last axis, dense Hermitian factorization."""
        cho = self._cho()
        x = np.asarray(x)
        flat = x.reshape(-1, x.shape[-1]).T
        return scipy.linalg.cho_solve(cho, flat).T.reshape(x.shape)

    def logdet_pi(self) -> float:
        """log det(pi C) via the Cholesky diagonal."""
        factor, _ = self._cho()
        return float(
            2.0 * np.sum(np.log(np.diag(factor).real)) + self.n * np.log(np.pi)
        )
