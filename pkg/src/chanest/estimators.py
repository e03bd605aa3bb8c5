"""Channel estimators: the VAE conditional-mean approximation and baselines.

All estimators are pure functions of (y, operator, noise, side information)
and return an EstimatorOutput. Batched helpers accept (T, M) observation
stacks and are used by the benchmark harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .channels import GenieCovariance, grid_to_vec
from .covariance import BlockToeplitzCovariance, CirculantCovariance
from .errors import InvalidParameterError, NumericalError
from .observation import NoiseModel, ObservationOperator, PILOT_SELECTION


@dataclass
class EstimatorOutput:
    estimate: np.ndarray
    estimator_id: str
    aux: dict = field(default_factory=dict)


def _as_batch(y):
    y = np.asarray(y, dtype=np.complex128)
    single = y.ndim == 1
    return (y[None, :] if single else y), single


def _solve_hermitian(G, rhs):
    """Solve G x = rhs for Hermitian PSD G, raising NumericalError on failure."""
    try:
        return scipy.linalg.solve(G, rhs, assume_a="her")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Hermitian solve failed: {exc}") from exc


# ---------------------------------------------------------------------------
# LMMSE filters with a fixed prior covariance


def lmmse_estimate(y, A: np.ndarray, prior_cov: np.ndarray, noise_var: float,
                   prior_mean: np.ndarray | None = None) -> np.ndarray:
    """mean + C A^H (A C A^H + s2 I)^{-1} (y - A mean), batched over rows."""
    yb, single = _as_batch(y)
    m = A.shape[0]
    gram = A @ prior_cov @ A.conj().T + noise_var * np.eye(m)
    resid = yb if prior_mean is None else yb - prior_mean @ A.T
    sol = _solve_hermitian(gram, resid.T).T
    est = sol @ (prior_cov @ A.conj().T).T
    if prior_mean is not None:
        est = est + prior_mean
    return est[0] if single else est


def estimate_genie_cme(y, op: ObservationOperator, noise: NoiseModel,
                       genie_cov: GenieCovariance) -> EstimatorOutput:
    """Conditional mean under the true per-sample cluster covariance."""
    if genie_cov is None:
        raise InvalidParameterError("genie covariance is required")
    est = lmmse_estimate(y, op.dense(), genie_cov.matrix, noise.variance)
    return EstimatorOutput(est, "genie_cme")


def sample_covariance(channels: np.ndarray) -> np.ndarray:
    """(1/T) sum_i h_i h_i^H from stacked rows."""
    X = np.asarray(channels, dtype=np.complex128)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidParameterError("need a nonempty (T, N) stack")
    return (X.T @ X.conj()) / X.shape[0]


def estimate_global_cov(y, op: ObservationOperator, noise: NoiseModel,
                        sample_cov: np.ndarray) -> EstimatorOutput:
    """LMMSE with the global training-set sample covariance."""
    est = lmmse_estimate(y, op.dense(), sample_cov, noise.variance)
    return EstimatorOutput(est, "global_cov")


# ---------------------------------------------------------------------------
# VAE-parameterized conditional mean


def _structured_cov(spectrum: np.ndarray, cov_kind: str, grid_shape):
    if cov_kind == "circulant":
        return CirculantCovariance(spectrum)
    return BlockToeplitzCovariance(spectrum, grid_shape[0], grid_shape[1])


def _vae_filter_phase_shift(y, mean, spectra, A, noise_var):
    """Batched t(z, y) for a circulant decoder covariance and dense A."""
    n = A.shape[1]
    basis = np.sqrt(n) * np.fft.ifft(A, axis=1)  # A F^H
    resid = y - mean @ A.T
    gram = np.einsum("mk,bk,nk->bmn", basis, spectra, basis.conj())
    gram += noise_var * np.eye(A.shape[0])
    sol = np.linalg.solve(gram, resid[..., None])[..., 0]
    back = np.einsum("bk,mk,bm->bk", spectra, basis.conj(), sol)
    return mean + np.sqrt(n) * np.fft.ifft(back, axis=-1)


def _vae_filter_selection(y, mean, spectra, indices, grid_shape, noise_var):
    """Batched t(z, y) for a block-Toeplitz decoder covariance and pilot A."""
    from .covariance import offset_index_map

    n_sub, n_time = grid_shape
    nt2, nc2 = 2 * n_time, 2 * n_sub
    idx = offset_index_map(n_sub, n_time)
    tables = np.fft.fft2(spectra.reshape(-1, nt2, nc2)) / (nt2 * nc2)
    tables = tables.reshape(spectra.shape[0], -1)
    cols = tables[:, idx[:, indices]]                  # (B, N, M): C A^H
    gram = cols[:, indices, :] + noise_var * np.eye(len(indices))
    resid = y - mean[:, indices]
    sol = np.linalg.solve(gram, resid[..., None])[..., 0]
    return mean + np.einsum("bnm,bm->bn", cols, sol)


def estimate_vae_batch(model, y, op: ObservationOperator, noise: NoiseModel,
                       estimator_id: str = "vae", n_z_samples: int = 1,
                       rng_seed: int = 0, chunk: int = 1024) -> EstimatorOutput:
    """Conditional-mean approximation from a trained model, batched.

    The encoder input is A^H y; with the default single latent sample the
    latent is the posterior mean. For n_z_samples > 1 the filter output is
    averaged over posterior draws.
    """
    import torch

    from .vae.model import reparameterize

    yb, single = _as_batch(y)
    if yb.shape[-1] != op.m_rows:
        raise InvalidParameterError("observation length does not match operator")
    arch = model.arch
    if arch.signal_len != op.n_cols:
        raise InvalidParameterError(
            f"model geometry N={arch.signal_len} != operator N={op.n_cols}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 0xE5]))
    out = np.empty((yb.shape[0], op.n_cols), dtype=np.complex128)
    model.eval()
    for start in range(0, yb.shape[0], chunk):
        sl = slice(start, min(start + chunk, yb.shape[0]))
        enc_in = torch.from_numpy(op.adjoint(yb[sl]).astype(np.complex64))
        with torch.no_grad():
            lat = model.encode(enc_in)
            draws = []
            for k in range(n_z_samples):
                if k == 0:
                    z = lat.mean
                else:
                    eps = torch.from_numpy(
                        rng.standard_normal(tuple(lat.mean.shape)).astype(np.float32))
                    z = reparameterize(lat, eps=eps)
                dec = model.decode(z)
                draws.append((dec.mean.numpy().astype(np.complex128),
                              dec.spectrum.numpy().astype(np.float64)))
        ests = []
        for mean, spec in draws:
            if arch.cov_kind == "circulant":
                ests.append(_vae_filter_phase_shift(
                    yb[sl], mean, spec, op.dense(), noise.variance))
            else:
                ests.append(_vae_filter_selection(
                    yb[sl], mean, spec, op.indices, arch.grid_shape, noise.variance))
        out[sl] = np.mean(ests, axis=0)
    est = out[0] if single else out
    return EstimatorOutput(est, estimator_id, {"n_z_samples": n_z_samples})


def estimate_vae(model, y, op: ObservationOperator, noise: NoiseModel,
                 n_z_samples: int = 1, rng_seed: int = 0) -> EstimatorOutput:
    """Single-observation wrapper around estimate_vae_batch."""
    return estimate_vae_batch(model, y, op, noise,
                              n_z_samples=n_z_samples, rng_seed=rng_seed)


# ---------------------------------------------------------------------------
# genie-aided orthogonal matching pursuit


def oversampled_dft_dictionary(n: int, oversampling: int = 2) -> np.ndarray:
    """First n rows of the oversampled DFT, columns scaled to unit norm."""
    k = oversampling * n
    grid = np.outer(np.arange(n), np.arange(k))
    return np.exp(-2j * np.pi * grid / k) / np.sqrt(n)


def omp_sweep(sensing: np.ndarray, y: np.ndarray, s_max: int):
    """Greedy OMP returning the coefficient vector after every step.

    Selection correlates the residual against unit-normalized columns; the
    coefficients are a least-squares fit on the selected raw columns, so the
    residual norm is non-increasing in the step count.
    """
    m, k = sensing.shape
    if s_max > m:
        raise InvalidParameterError(f"sparsity {s_max} exceeds {m} observations")
    norms = np.linalg.norm(sensing, axis=0)
    norms[norms == 0] = 1.0
    selected: list[int] = []
    resid = y.copy()
    coefs, resid_norms = [], []
    for _ in range(s_max):
        corr = np.abs(sensing.conj().T @ resid) / norms
        corr[selected] = -1.0
        selected.append(int(np.argmax(corr)))
        sub = sensing[:, selected]
        x, *_ = np.linalg.lstsq(sub, y, rcond=None)
        resid = y - sub @ x
        full = np.zeros(k, dtype=np.complex128)
        full[selected] = x
        coefs.append(full)
        resid_norms.append(float(np.linalg.norm(resid)))
    return coefs, resid_norms


def estimate_genie_omp(y, op: ObservationOperator, noise: NoiseModel,
                       h_true: np.ndarray, s_max: int | None = None,
                       oversampling: int = 2) -> EstimatorOutput:
    """OMP over s = 1..s_max; the true channel picks the best sparsity order."""
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim != 1:
        raise InvalidParameterError("genie OMP takes a single observation")
    s_max = op.m_rows if s_max is None else s_max
    if s_max > op.m_rows:
        raise InvalidParameterError("s_max exceeds the number of observations")
    dictionary = oversampled_dft_dictionary(op.n_cols, oversampling)
    sensing = op.dense() @ dictionary
    coefs, resid_norms = omp_sweep(sensing, y, s_max)
    errs = [np.linalg.norm(h_true - dictionary @ x) for x in coefs]
    best = int(np.argmin(errs))
    return EstimatorOutput(
        dictionary @ coefs[best],
        "genie_omp",
        {"sparsity": best + 1, "residual_norms": resid_norms},
    )


# ---------------------------------------------------------------------------
# linear interpolation of the pilot grid (wideband)


def _interp_complex(x, xp, fp):
    return np.interp(x, xp, fp.real) + 1j * np.interp(x, xp, fp.imag)


def li_interpolation_matrix(op: ObservationOperator) -> np.ndarray:
    """(N, M) linear map equivalent of the two-pass grid interpolation.

    Frequency-axis interpolation within each pilot-bearing time column,
    then time-axis interpolation per subcarrier; np.interp clamps to the
    nearest pilot at grid edges and degenerates to nearest-neighbor when an
    axis holds a single pilot.
    """
    if op.kind != PILOT_SELECTION or op.grid_shape is None:
        raise InvalidParameterError("LI needs a pilot selection operator with a grid")
    n_sub, n_time = op.grid_shape
    t_idx = op.indices // n_sub
    c_idx = op.indices % n_sub
    bearing = np.unique(t_idx)
    rows = np.arange(n_sub)
    out = np.zeros((op.n_cols, op.m_rows))
    # interpolation is linear in y: build columns from unit pilot vectors
    for j in range(op.m_rows):
        unit = np.zeros(op.m_rows)
        unit[j] = 1.0
        filled = np.empty((n_sub, bearing.size))
        for bi, t in enumerate(bearing):
            mask = t_idx == t
            order = np.argsort(c_idx[mask])
            filled[:, bi] = np.interp(rows, c_idx[mask][order], unit[mask][order])
        grid = np.empty((n_sub, n_time))
        for c in range(n_sub):
            grid[c] = np.interp(np.arange(n_time), bearing, filled[c])
        out[:, j] = grid_to_vec(grid)
    return out


def estimate_li(y, op: ObservationOperator) -> EstimatorOutput:
    """Scatter A^T y onto the grid and interpolate the missing entries."""
    yb, single = _as_batch(y)
    est = yb @ li_interpolation_matrix(op).T
    return EstimatorOutput(est[0] if single else est, "li")


def build_li_covariance(train_channels: np.ndarray, op: ObservationOperator,
                        noise: NoiseModel, rng_seed: int) -> np.ndarray:
    """Denoised sample covariance of LI estimates of noisy training observations.

    The interpolation noise covariance is approximated by variance * I; after
    the subtraction, negative eigenvalues are truncated to zero.
    """
    from .observation import observe

    y = observe(train_channels, op, noise, rng_seed)
    li_est = y @ li_interpolation_matrix(op).T
    raw = sample_covariance(li_est)
    denoised = raw - noise.variance * np.eye(raw.shape[0])
    evals, evecs = np.linalg.eigh(denoised)
    return (evecs * np.clip(evals, 0.0, None)) @ evecs.conj().T


def estimate_global_li(y, op: ObservationOperator, noise: NoiseModel,
                       li_cov: np.ndarray) -> EstimatorOutput:
    """LMMSE with the denoised LI sample covariance."""
    est = lmmse_estimate(y, op.dense(), li_cov, noise.variance)
    return EstimatorOutput(est, "global_li")


# ---------------------------------------------------------------------------


def nmse(estimates, truths) -> float:
    """(1 / (T N)) sum_i ||h_i - hhat_i||^2."""
    est = np.asarray(estimates)
    tru = np.asarray(truths)
    if est.size == 0 or tru.size == 0:
        raise InvalidParameterError("empty input")
    if est.shape != tru.shape:
        raise InvalidParameterError(f"shape mismatch {est.shape} vs {tru.shape}")
    return float(np.sum(np.abs(est - tru) ** 2) / est.size)
