"""Synthetic channel generators and dataset containers.

Two families are implemented: a one-cluster 3GPP-style spatial model for a
uniform linear array (conditionally Gaussian given the cluster draw) and a
multipath time-frequency generator for a 12x14 wideband frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.constants
from scipy.linalg import toeplitz

from .errors import InvalidParameterError, NumericalError

# Relative tolerance on negative quadrature eigenvalues before clamping.
EIG_FLOOR_REL = 1e-10

HYBRID = "hybrid"
WIDEBAND = "wideband"


# ---------------------------------------------------------------------------
# spatial (hybrid) model


@dataclass(frozen=True)
class SpatialChannelParams:
    """One propagation cluster seen by an N-antenna uniform linear array."""

    n_antennas: int
    angle_of_arrival: float  # radians in [-pi/2, pi/2)
    angular_spread: float    # radians, > 0
    path_gain: float = 1.0
    n_clusters: int = 1

    def __post_init__(self):
        if self.n_clusters != 1:
            raise InvalidParameterError("only the single-cluster model is supported")
        if self.n_antennas < 1:
            raise InvalidParameterError("n_antennas must be positive")
        if not self.angular_spread > 0:
            raise InvalidParameterError("angular_spread must be > 0")
        if not self.path_gain > 0:
            raise InvalidParameterError("path_gain must be > 0")


@dataclass(frozen=True)
class SpatialModelConfig:
    """Prior over cluster draws plus quadrature settings."""

    sector_halfwidth: float = np.pi / 3.0       # 120 degree sector
    angular_spread: float = np.deg2rad(2.0)     # urban-macro convention
    path_gain: float = 1.0
    quadrature_points: int = 4096


@dataclass(frozen=True)
class GenieCovariance:
    """Hermitian PSD Toeplitz covariance of one cluster draw."""

    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def scaled(self, factor: float) -> "GenieCovariance":
        return GenieCovariance(self.matrix * factor)

    def sqrt_factor(self) -> np.ndarray:
        """B with B B^H = C, via the eigendecomposition (negatives clipped)."""
        evals, evecs = np.linalg.eigh(self.matrix)
        return evecs * np.sqrt(np.clip(evals, 0.0, None))


def steering_vector(angle: float, n_antennas: int) -> np.ndarray:
    """Half-wavelength ULA steering vector, a_m = exp(j pi (m-1) sin angle)."""
    return np.exp(1j * np.pi * np.arange(n_antennas) * np.sin(angle))


def laplacian_power_density(theta, center: float, spread: float):
    """Unnormalized Laplacian angular power density with standard deviation `spread`."""
    return np.exp(-np.sqrt(2.0) * np.abs(theta - center) / spread)


def _quadrature_grid(quadrature_points: int):
    step = 2.0 * np.pi / quadrature_points
    theta = -np.pi + (np.arange(quadrature_points) + 0.5) * step
    return theta


def _covariance_first_columns(angles, params_spread, path_gain, n_antennas,
                              quadrature_points):
    """First Toeplitz columns for a batch of cluster angles, via midpoint quadrature."""
    theta = _quadrature_grid(quadrature_points)
    sin_t = np.sin(theta)
    # weights normalized so that tr(C) = N * path_gain
    g = laplacian_power_density(theta[None, :], np.asarray(angles)[:, None],
                                params_spread)
    w = g * (path_gain / g.sum(axis=1, keepdims=True))
    phase = np.exp(1j * np.pi * np.outer(sin_t, np.arange(n_antennas)))
    return w.astype(np.complex128) @ phase  # (B, N)


def _toeplitz_from_columns(cols: np.ndarray) -> np.ndarray:
    """Hermitian Toeplitz matrices (B, N, N) from first columns (B, N)."""
    n = cols.shape[-1]
    lag = np.subtract.outer(np.arange(n), np.arange(n))
    pos = cols[..., np.abs(lag)]
    return np.where(lag >= 0, pos, np.conj(pos))


def build_genie_covariance(params: SpatialChannelParams,
                           quadrature_points: int = 4096) -> GenieCovariance:
    """Integrate the angular density against steering outer products.

    Midpoint quadrature over [-pi, pi]; the result is Hermitian Toeplitz by
    construction and PSD up to roundoff (positive weights).
    """
    if quadrature_points < 512:
        raise InvalidParameterError("quadrature_points must be >= 512")
    col = _covariance_first_columns(
        [params.angle_of_arrival], params.angular_spread, params.path_gain,
        params.n_antennas, quadrature_points)[0]
    matrix = toeplitz(col, np.conj(col))
    evals = np.linalg.eigvalsh(matrix)
    floor = -EIG_FLOOR_REL * np.trace(matrix).real / params.n_antennas
    if evals[0] < floor:
        raise NumericalError(
            f"quadrature covariance indefinite: min eigenvalue {evals[0]:.3e}"
        )
    return GenieCovariance(matrix)


# ---------------------------------------------------------------------------
# dataset container


@dataclass
class ChannelDataset:
    """A stack of vectorized channels plus generator metadata.

    After normalization mean(|h|^2) over all entries equals 1, i.e.
    E[||h||^2] = N on the dataset.
    """

    samples: np.ndarray  # (T, N) complex
    split_tag: str
    scenario: str
    rng_seed: int
    normalization_scale: float
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    def genie_covariance(self, i: int) -> GenieCovariance:
        """Rebuild the stored cluster covariance of sample i (hybrid only).

        The matrix is scaled by the square of the dataset normalization so it
        matches the normalized channels.
        """
        if self.scenario != HYBRID or "angles" not in self.metadata:
            raise InvalidParameterError("dataset carries no genie covariances")
        params = SpatialChannelParams(
            n_antennas=self.n,
            angle_of_arrival=float(self.metadata["angles"][i]),
            angular_spread=float(self.metadata["angular_spread"]),
            path_gain=float(self.metadata["path_gain"]),
        )
        cov = build_genie_covariance(params, int(self.metadata["quadrature_points"]))
        return cov.scaled(self.normalization_scale ** 2)

    def genie_covariance_batch(self, idx) -> np.ndarray:
        """Stacked (len(idx), N, N) genie covariances, quadrature vectorized."""
        if self.scenario != HYBRID or "angles" not in self.metadata:
            raise InvalidParameterError("dataset carries no genie covariances")
        angles = np.asarray(self.metadata["angles"])[np.asarray(idx)]
        cols = _covariance_first_columns(
            angles, float(self.metadata["angular_spread"]),
            float(self.metadata["path_gain"]), self.n,
            int(self.metadata["quadrature_points"]))
        return _toeplitz_from_columns(cols) * self.normalization_scale ** 2


def _normalize(samples: np.ndarray):
    energy = np.sum(np.abs(samples) ** 2)
    scale = np.sqrt(samples.size / energy)
    return samples * scale, float(scale)


def _sample_seed(rng_seed: int, i: int) -> np.random.Generator:
    # per-sample stream: results independent of generation order / worker count
    return np.random.default_rng(np.random.SeedSequence([rng_seed, i]))


def sample_spatial_channels(
    n_samples: int,
    antenna_count: int,
    rng_seed: int,
    model: SpatialModelConfig | None = None,
    split_tag: str = "train",
    chunk: int = 2048,
) -> ChannelDataset:
    """Draw h | delta ~ CN(0, C_delta) with a fresh cluster per sample.

    Cluster angles are uniform over the sector; the per-sample covariance is
    recoverable from the stored angles via ``genie_covariance``.
    """
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be positive")
    model = model or SpatialModelConfig()
    angles = np.empty(n_samples)
    whites = np.empty((n_samples, antenna_count), dtype=np.complex128)
    for i in range(n_samples):
        rng = _sample_seed(rng_seed, i)
        angles[i] = rng.uniform(-model.sector_halfwidth, model.sector_halfwidth)
        whites[i] = (rng.standard_normal(antenna_count)
                     + 1j * rng.standard_normal(antenna_count)) / np.sqrt(2.0)

    samples = np.empty_like(whites)
    floor_rel = EIG_FLOOR_REL * model.path_gain  # trace/N = path_gain
    for start in range(0, n_samples, chunk):
        sl = slice(start, min(start + chunk, n_samples))
        cols = _covariance_first_columns(
            angles[sl], model.angular_spread, model.path_gain,
            antenna_count, model.quadrature_points)
        covs = _toeplitz_from_columns(cols)
        try:
            evals, evecs = np.linalg.eigh(covs)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise NumericalError(f"eigendecomposition failed: {exc}") from exc
        if evals.min() < -floor_rel:
            raise NumericalError(
                f"covariance indefinite beyond tolerance: {evals.min():.3e}"
            )
        roots = np.sqrt(np.clip(evals, 0.0, None))
        # h = U sqrt(L) w
        samples[sl] = np.einsum("bij,bj->bi", evecs * roots[:, None, :], whites[sl])

    samples, scale = _normalize(samples)
    metadata = {
        "angles": angles,
        "angular_spread": model.angular_spread,
        "path_gain": model.path_gain,
        "quadrature_points": model.quadrature_points,
        "sector_halfwidth": model.sector_halfwidth,
    }
    return ChannelDataset(samples, split_tag, HYBRID, rng_seed, scale, metadata)


# ---------------------------------------------------------------------------
# wideband model


@dataclass(frozen=True)
class WidebandModelConfig:
    """Multipath generator for an N_c x N_t time-frequency frame."""

    n_subcarriers: int = 12
    n_timeslots: int = 14
    carrier_hz: float = 2.1e9
    bandwidth_hz: float = 180e3
    n_paths_min: int = 5
    n_paths_max: int = 25
    delay_max_s: float = 5e-6
    pdp_decay_s: float = 1e-6
    velocity_min_kmh: float = 0.0
    velocity_max_kmh: float = 300.0
    indoor_prob: float = 0.2
    indoor_extra_db: float = 10.0
    slot_spacing_s: float = 1e-3 / 14.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.n_subcarriers < 1:
            raise InvalidParameterError("subcarrier spacing must be positive")
        if self.n_paths_min < 1 or self.n_paths_max < self.n_paths_min:
            raise InvalidParameterError("need 1 <= n_paths_min <= n_paths_max")

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.n_subcarriers

    @property
    def frequencies_hz(self) -> np.ndarray:
        i = np.arange(self.n_subcarriers)
        return (i - (self.n_subcarriers - 1) / 2.0) * self.subcarrier_spacing_hz

    @property
    def times_s(self) -> np.ndarray:
        return np.arange(self.n_timeslots) * self.slot_spacing_s


@dataclass(frozen=True)
class WidebandChannelParams:
    """Explicit per-path parameters of one wideband frame draw."""

    gains: np.ndarray      # complex (L,)
    delays_s: np.ndarray   # >= 0, (L,)
    dopplers_hz: np.ndarray
    mt_velocity_ms: float = 0.0
    indoor: bool = False

    def __post_init__(self):
        if self.gains.shape != self.delays_s.shape or self.gains.shape != self.dopplers_hz.shape:
            raise InvalidParameterError("per-path arrays must share a shape")
        if self.gains.size < 1:
            raise InvalidParameterError("at least one path required")
        if np.any(self.delays_s < 0):
            raise InvalidParameterError("delays must be >= 0")


def wideband_matrix(params: WidebandChannelParams,
                    config: WidebandModelConfig | None = None) -> np.ndarray:
    """H[i, k] = sum_l G_l exp(j 2 pi nu_l t_k) exp(-2 pi j f_i tau_l)."""
    config = config or WidebandModelConfig()
    freq_phase = np.exp(-2j * np.pi * np.outer(config.frequencies_hz, params.delays_s))
    time_phase = np.exp(2j * np.pi * np.outer(params.dopplers_hz, config.times_s))
    return freq_phase @ (params.gains[:, None] * time_phase)


def grid_to_vec(H: np.ndarray) -> np.ndarray:
    """Vectorize (..., N_c, N_t) grids with flat index k = t * N_c + c."""
    return np.swapaxes(H, -1, -2).reshape(H.shape[:-2] + (-1,))


def vec_to_grid(h: np.ndarray, grid_shape) -> np.ndarray:
    n_sub, n_time = grid_shape
    return np.swapaxes(h.reshape(h.shape[:-1] + (n_time, n_sub)), -1, -2)


def _draw_wideband_params(rng: np.random.Generator,
                          config: WidebandModelConfig) -> WidebandChannelParams:
    n_paths = int(rng.integers(config.n_paths_min, config.n_paths_max + 1))
    delays = rng.uniform(0.0, config.delay_max_s, n_paths)
    power = np.exp(-delays / config.pdp_decay_s)
    mag = np.sqrt(power / power.sum())
    phases = rng.uniform(0.0, 2.0 * np.pi, n_paths)
    velocity = rng.uniform(config.velocity_min_kmh, config.velocity_max_kmh) / 3.6
    alpha = rng.uniform(0.0, 2.0 * np.pi, n_paths)
    dopplers = velocity * config.carrier_hz / scipy.constants.c * np.cos(alpha)
    indoor = bool(rng.uniform() < config.indoor_prob)
    gains = mag * np.exp(1j * phases)
    if indoor:
        gains = gains * 10.0 ** (-config.indoor_extra_db / 20.0)
    return WidebandChannelParams(gains, delays, dopplers, velocity, indoor)


def sample_wideband_channels(
    n_samples: int,
    rng_seed: int,
    config: WidebandModelConfig | None = None,
    split_tag: str = "train",
) -> ChannelDataset:
    """Draw vectorized wideband frames h = vec(H), length N_c * N_t."""
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be positive")
    config = config or WidebandModelConfig()
    n = config.n_subcarriers * config.n_timeslots
    samples = np.empty((n_samples, n), dtype=np.complex128)
    for i in range(n_samples):
        rng = _sample_seed(rng_seed, i)
        params = _draw_wideband_params(rng, config)
        samples[i] = grid_to_vec(wideband_matrix(params, config))
    samples, scale = _normalize(samples)
    metadata = {"config": asdict(config)}
    return ChannelDataset(samples, split_tag, WIDEBAND, rng_seed, scale, metadata)
