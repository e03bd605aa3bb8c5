"""Observation operators and the noisy forward model y = A h + n.

Two operator families are supported: dense constant-modulus phase-shift
matrices (hybrid receive arrays with few RF chains) and pilot selection
matrices on a subcarrier/time grid (wideband frames).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

PHASE_SHIFT = "phase_shift"
PILOT_SELECTION = "pilot_selection"

LATTICE = "lattice"
RANDOM = "random"

# Near-uniform 20-pilot layout on the 12x14 grid, edges included.
DEFAULT_LATTICE_SUBCARRIERS = (1, 4, 7, 10)
DEFAULT_LATTICE_TIMESLOTS = (0, 3, 6, 10, 13)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed))


@dataclass(frozen=True)
class NoiseModel:
    """Circularly-symmetric complex AWGN with covariance ``variance * I``.

    The SNR convention is ``snr = 1 / variance`` (channels are normalized to
    unit mean entry power).
    """

    variance: float

    def __post_init__(self):
        if not np.isfinite(self.variance) or self.variance < 0:
            raise InvalidParameterError(
                f"noise variance must be finite and >= 0, got {self.variance}"
            )

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "NoiseModel":
        return cls(variance=10.0 ** (-snr_db / 10.0))

    @property
    def snr(self) -> float:
        return np.inf if self.variance == 0.0 else 1.0 / self.variance

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(self.snr)

    def sample(self, shape, rng) -> np.ndarray:
        """Draw noise with i.i.d. N(0, variance/2) real and imaginary parts."""
        rng = _as_rng(rng)
        scale = np.sqrt(self.variance / 2.0)
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class ObservationOperator:
    """The wide matrix A in y = A h + n.

    Phase-shift operators store the dense M x N matrix; pilot selection
    operators store the flat grid index of the single one in every row.
    The builders below enforce M < N; square operators can be constructed
    directly for sanity checks.
    """

    kind: str
    m_rows: int
    n_cols: int
    matrix: np.ndarray | None = None
    indices: np.ndarray | None = None
    grid_shape: tuple[int, int] | None = None  # (n_subcarriers, n_timeslots)
    seed: int | None = None

    def __post_init__(self):
        if self.kind == PHASE_SHIFT:
            if self.matrix is None or self.matrix.shape != (self.m_rows, self.n_cols):
                raise InvalidParameterError("phase-shift operator needs an (M, N) matrix")
        elif self.kind == PILOT_SELECTION:
            if self.indices is None or self.indices.shape != (self.m_rows,):
                raise InvalidParameterError("selection operator needs M flat indices")
            if len(np.unique(self.indices)) != self.m_rows:
                raise InvalidParameterError("pilot indices must be distinct")
            if np.any(self.indices < 0) or np.any(self.indices >= self.n_cols):
                raise InvalidParameterError("pilot indices out of range")
        else:
            raise InvalidParameterError(f"unknown operator kind {self.kind!r}")

    def apply(self, h: np.ndarray) -> np.ndarray:
        """y = A h for a single vector or a (..., N) batch."""
        h = np.asarray(h)
        if h.shape[-1] != self.n_cols:
            raise InvalidParameterError(
                f"operator expects length {self.n_cols}, got {h.shape[-1]}"
            )
        if self.kind == PILOT_SELECTION:
            return h[..., self.indices]
        return h @ self.matrix.T

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """A^H y; for selection operators this scatters y onto the grid."""
        y = np.asarray(y)
        if y.shape[-1] != self.m_rows:
            raise InvalidParameterError(
                f"adjoint expects length {self.m_rows}, got {y.shape[-1]}"
            )
        if self.kind == PILOT_SELECTION:
            out = np.zeros(y.shape[:-1] + (self.n_cols,), dtype=y.dtype)
            out[..., self.indices] = y
            return out
        return y @ np.conj(self.matrix)

    def dense(self) -> np.ndarray:
        """Explicit (M, N) matrix, mostly for oracle comparisons."""
        if self.kind == PHASE_SHIFT:
            return self.matrix.copy()
        A = np.zeros((self.m_rows, self.n_cols))
        A[np.arange(self.m_rows), self.indices] = 1.0
        return A


def build_phase_shift_operator(m_rows: int, n_cols: int, rng_seed) -> ObservationOperator:
    """Random phase-shift matrix with entries exp(j phi)/sqrt(M), phi ~ U[0, 2pi)."""
    if m_rows < 1 or m_rows >= n_cols:
        raise InvalidParameterError(
            f"phase-shift operator requires 1 <= M < N, got M={m_rows}, N={n_cols}"
        )
    rng = _as_rng(rng_seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(m_rows, n_cols))
    matrix = np.exp(1j * phases) / np.sqrt(m_rows)
    seed = rng_seed if isinstance(rng_seed, int) else None
    return ObservationOperator(PHASE_SHIFT, m_rows, n_cols, matrix=matrix, seed=seed)


def build_pilot_selection_operator(
    layout: str,
    n_pilots: int,
    n_subcarriers: int,
    n_timeslots: int,
    rng_seed=None,
    lattice_subcarriers=DEFAULT_LATTICE_SUBCARRIERS,
    lattice_timeslots=DEFAULT_LATTICE_TIMESLOTS,
) -> ObservationOperator:
    """Selection matrix with a single one per row at each pilot position.

    Flat grid indices follow k = t * n_subcarriers + c (subcarrier fastest).
    """
    grid = n_subcarriers * n_timeslots
    if n_pilots < 1 or n_pilots > grid:
        raise InvalidParameterError(
            f"need 1 <= n_pilots <= {grid}, got {n_pilots}"
        )
    if layout == LATTICE:
        subs = np.asarray(lattice_subcarriers, dtype=np.int64)
        times = np.asarray(lattice_timeslots, dtype=np.int64)
        if subs.size * times.size != n_pilots:
            raise InvalidParameterError(
                f"lattice layout {subs.size}x{times.size} has "
                f"{subs.size * times.size} pilots, requested {n_pilots}"
            )
        if np.any(subs >= n_subcarriers) or np.any(times >= n_timeslots):
            raise InvalidParameterError("lattice indices exceed the grid")
        idx = (times[:, None] * n_subcarriers + subs[None, :]).ravel()
    elif layout == RANDOM:
        rng = _as_rng(rng_seed)
        idx = rng.choice(grid, size=n_pilots, replace=False)
    else:
        raise InvalidParameterError(f"unknown pilot layout {layout!r}")
    idx = np.sort(idx.astype(np.int64))
    seed = rng_seed if isinstance(rng_seed, int) else None
    return ObservationOperator(
        PILOT_SELECTION,
        n_pilots,
        grid,
        indices=idx,
        grid_shape=(n_subcarriers, n_timeslots),
        seed=seed,
    )


def observe(h, op: ObservationOperator, noise: NoiseModel, rng_seed) -> np.ndarray:
    """y = A h + n with seeded noise; deterministic given the seed."""
    clean = op.apply(np.asarray(h, dtype=np.complex128))
    return clean + noise.sample(clean.shape, _as_rng(rng_seed))
