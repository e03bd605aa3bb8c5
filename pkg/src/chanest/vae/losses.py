"""Training objectives: structured Gaussian NLL plus closed-form KL.

The channel-space NLL uses the decoder covariance directly (circulant via
FFT, block-Toeplitz via a dense Cholesky with a hand-written backward). The
observation-space NLL replaces the mean with A mu and the covariance with
A C A^H + noise * I, factorized densely at size M.
"""

from __future__ import annotations

import numpy as np
import torch

from ..covariance import offset_index_map
from ..errors import InvalidParameterError, NumericalError
from ..observation import (
    NoiseModel,
    ObservationOperator,
    PHASE_SHIFT,
    PILOT_SELECTION,
)
from .model import DecoderOutput, LatentGaussian, VaeModel, reparameterize

_LOG_PI = float(np.log(np.pi))

_INDEX_CACHE: dict = {}


def _complex_dtype(real_dtype):
    return torch.complex64 if real_dtype == torch.float32 else torch.complex128


def _bt_index(n_sub: int, n_time: int) -> torch.Tensor:
    key = (n_sub, n_time)
    if key not in _INDEX_CACHE:
        _INDEX_CACHE[key] = torch.from_numpy(
            offset_index_map(n_sub, n_time).astype(np.int64))
    return _INDEX_CACHE[key]


def kl_standard_normal(lat: LatentGaussian) -> torch.Tensor:
    """KL(q || N(0, I)) = 0.5 sum(sigma^2 + mu^2 - 1 - log sigma^2), per sample."""
    var = lat.std ** 2
    return 0.5 * torch.sum(var + lat.mean ** 2 - 1.0 - torch.log(var), dim=-1)


def nll_circulant(resid: torch.Tensor, spectrum: torch.Tensor) -> torch.Tensor:
    """log det(pi C) + r^H C^{-1} r for C = F^H diag(c) F, via one FFT."""
    n = resid.shape[-1]
    freq = torch.fft.fft(resid, dim=-1) / np.sqrt(n)
    quad = torch.sum(freq.real ** 2 / spectrum + freq.imag ** 2 / spectrum, dim=-1)
    logdet = torch.sum(torch.log(spectrum), dim=-1) + n * _LOG_PI
    return quad + logdet


def dense_gaussian_nll(resid: torch.Tensor, cov: torch.Tensor) -> torch.Tensor:
    """log det(pi C) + r^H C^{-1} r with batched dense Cholesky."""
    try:
        chol = torch.linalg.cholesky(cov)
    except torch.linalg.LinAlgError as exc:
        raise NumericalError(f"loss covariance not positive definite: {exc}") from exc
    sol = torch.cholesky_solve(resid.unsqueeze(-1), chol).squeeze(-1)
    quad = torch.sum((resid.conj() * sol).real, dim=-1)
    diag = torch.diagonal(chol, dim1=-2, dim2=-1).real
    logdet = 2.0 * torch.sum(torch.log(diag), dim=-1) + resid.shape[-1] * _LOG_PI
    return quad + logdet


def bt_assemble(spectrum: torch.Tensor, n_sub: int, n_time: int) -> torch.Tensor:
    """Dense (B, N, N) block-Toeplitz matrices from (B, 4 N_c N_t) spectra.

    Every entry is a 2D-DFT sample of the spectrum, so assembly is one small
    FFT plus a gather; the result equals Q^H diag(c) Q exactly.
    """
    k = spectrum.shape[-1]
    cdt = _complex_dtype(spectrum.dtype)
    table = torch.fft.fft2(
        spectrum.reshape(-1, 2 * n_time, 2 * n_sub).to(cdt)) / k
    idx = _bt_index(n_sub, n_time)
    return table.reshape(spectrum.shape[0], -1)[:, idx]


def _jittered_cholesky(cov: torch.Tensor, spectrum: torch.Tensor) -> torch.Tensor:
    """Cholesky with a relative diagonal jitter ladder for float32 spectra.

    Adding j*I equals flooring the spectrum at j (the factor columns are
    orthonormal), so the retry stays inside the model family. The jitter is
    treated as a constant, keeping gradients exact for the jittered loss.
    """
    scale = spectrum.detach().mean(dim=-1).to(cov.dtype).reshape(-1, 1, 1)
    eye = torch.eye(cov.shape[-1], dtype=cov.dtype)
    for jitter in (0.0, 1e-6, 1e-3):
        try:
            return torch.linalg.cholesky(cov + jitter * scale * eye)
        except torch.linalg.LinAlgError:
            continue
    raise NumericalError(
        "block-Toeplitz loss covariance failed after diagonal jitter")


class _BlockToeplitzNll(torch.autograd.Function):
    """NLL under C = Q^H diag(c) Q with an O(N^3) hand-written backward.

    The gradient w.r.t. the spectrum needs only offset sums of C^{-1} - x x^H
    followed by one 2D FFT, which avoids differentiating through the Cholesky.
    """

    @staticmethod
    def forward(ctx, spectrum, resid, n_sub, n_time):
        with torch.no_grad():
            cov = bt_assemble(spectrum, n_sub, n_time)
            chol = _jittered_cholesky(cov, spectrum)
            sol = torch.cholesky_solve(resid.unsqueeze(-1), chol).squeeze(-1)
            quad = torch.sum((resid.conj() * sol).real, dim=-1)
            diag = torch.diagonal(chol, dim1=-2, dim2=-1).real
            logdet = 2.0 * torch.sum(torch.log(diag), dim=-1)
            nll = quad + logdet + resid.shape[-1] * _LOG_PI
        ctx.save_for_backward(chol, sol)
        ctx.dims = (n_sub, n_time, spectrum.shape[-1])
        return nll

    @staticmethod
    def backward(ctx, grad_out):
        chol, sol = ctx.saved_tensors
        n_sub, n_time, k = ctx.dims
        batch = chol.shape[0]
        # d logdet / dc_k = (Q C^{-1} Q^H)_kk: offset sums of C^{-1}, then a DFT
        cinv = torch.cholesky_inverse(chol)
        idx = _bt_index(n_sub, n_time).reshape(-1)
        bins = torch.zeros(batch, k, dtype=cinv.dtype)
        bins.index_add_(1, idx, cinv.reshape(batch, -1))
        term_logdet = torch.fft.fft2(
            bins.conj().reshape(batch, 2 * n_time, 2 * n_sub)
        ).reshape(batch, k).real / k
        # d quad / dc_k = -|(Q x)_k|^2 with x = C^{-1} r, one zero-padded DFT
        pad = torch.zeros(batch, 2 * n_time, 2 * n_sub, dtype=sol.dtype)
        pad[:, :n_time, :n_sub] = sol.reshape(batch, n_time, n_sub)
        term_quad = torch.fft.fft2(pad).abs().reshape(batch, k) ** 2 / k
        grad_spec = grad_out.reshape(-1, 1) * (term_logdet - term_quad)
        grad_resid = 2.0 * grad_out.reshape(-1, 1) * sol
        return grad_spec.to(chol.real.dtype), grad_resid, None, None


def nll_block_toeplitz(resid: torch.Tensor, spectrum: torch.Tensor,
                       n_sub: int, n_time: int,
                       use_custom_backward: bool = True) -> torch.Tensor:
    """Channel-space NLL for the block-Toeplitz decoder covariance."""
    if use_custom_backward:
        return _BlockToeplitzNll.apply(spectrum, resid, n_sub, n_time)
    return dense_gaussian_nll(resid, bt_assemble(spectrum, n_sub, n_time))


# ---------------------------------------------------------------------------
# observation-space NLL (the VAE-real transformation)


def phase_shift_basis(A: torch.Tensor) -> torch.Tensor:
    """B = A F^H for the unitary DFT, so A C A^H = B diag(c) B^H."""
    n = A.shape[-1]
    return torch.fft.ifft(A, dim=-1) * np.sqrt(n)


def nll_observed_phase_shift(y: torch.Tensor, mean: torch.Tensor,
                             spectrum: torch.Tensor, A: torch.Tensor,
                             noise_var) -> torch.Tensor:
    """NLL of y under N(A mu, A C A^H + noise I) with circulant C."""
    basis = phase_shift_basis(A)
    spec_c = spectrum.to(basis.dtype)
    if A.ndim == 2:
        resid = y - torch.einsum("mn,bn->bm", A, mean)
        cov = torch.einsum("mk,bk,nk->bmn", basis, spec_c, basis.conj())
    else:
        resid = y - torch.einsum("bmn,bn->bm", A, mean)
        cov = torch.einsum("bmk,bk,bnk->bmn", basis, spec_c, basis.conj())
    cov = cov + _noise_eye(noise_var, y.shape[-1], cov.dtype)
    return dense_gaussian_nll(resid, cov)


def nll_observed_selection(y: torch.Tensor, mean: torch.Tensor,
                           spectrum: torch.Tensor, pilot_idx: torch.Tensor,
                           n_sub: int, n_time: int, noise_var) -> torch.Tensor:
    """NLL of y under N(A mu, A C A^H + noise I) with block-Toeplitz C.

    For a selection matrix, A C A^H is the pilot submatrix of C, gathered
    straight from the spectrum's DFT table.
    """
    k = spectrum.shape[-1]
    cdt = _complex_dtype(spectrum.dtype)
    table = torch.fft.fft2(
        spectrum.reshape(-1, 2 * n_time, 2 * n_sub).to(cdt)) / k
    table = table.reshape(spectrum.shape[0], -1)
    idx = _bt_index(n_sub, n_time)
    if pilot_idx.ndim == 1:
        sub = idx[pilot_idx][:, pilot_idx]
        cov = table[:, sub]
        resid = y - mean[:, pilot_idx]
    else:
        sub = idx[pilot_idx.unsqueeze(-1), pilot_idx.unsqueeze(-2)]
        cov = torch.gather(table, 1, sub.reshape(sub.shape[0], -1))
        cov = cov.reshape(sub.shape)
        resid = y - torch.gather(mean, 1, pilot_idx)
    cov = cov + _noise_eye(noise_var, y.shape[-1], cov.dtype)
    return dense_gaussian_nll(resid, cov)


def _noise_eye(noise_var, m: int, cdtype) -> torch.Tensor:
    eye = torch.eye(m, dtype=cdtype)
    if torch.is_tensor(noise_var) and noise_var.ndim == 1:
        return noise_var.reshape(-1, 1, 1).to(cdtype) * eye
    return float(noise_var) * eye


# ---------------------------------------------------------------------------
# per-variant batch objectives


def elbo_loss_noisy(model: VaeModel, enc_in: torch.Tensor, h: torch.Tensor,
                    eps=None, generator=None) -> torch.Tensor:
    """Per-sample negative ELBO with ground-truth channels in the NLL."""
    lat = model.encode(enc_in)
    dec = model.decode(reparameterize(lat, eps=eps, generator=generator))
    resid = h - dec.mean
    if dec.cov_kind == "circulant":
        nll = nll_circulant(resid, dec.spectrum)
    else:
        n_sub, n_time = model.arch.grid_shape
        nll = nll_block_toeplitz(resid, dec.spectrum, n_sub, n_time)
    return nll + kl_standard_normal(lat)


def elbo_loss_real(model: VaeModel, enc_in: torch.Tensor, y: torch.Tensor,
                   op_payload, noise_var, eps=None, generator=None) -> torch.Tensor:
    """Per-sample negative ELBO built from observations only (no channels)."""
    lat = model.encode(enc_in)
    dec = model.decode(reparameterize(lat, eps=eps, generator=generator))
    if dec.cov_kind == "circulant":
        nll = nll_observed_phase_shift(y, dec.mean, dec.spectrum, op_payload,
                                       noise_var)
    else:
        n_sub, n_time = model.arch.grid_shape
        nll = nll_observed_selection(y, dec.mean, dec.spectrum, op_payload,
                                     n_sub, n_time, noise_var)
    return nll + kl_standard_normal(lat)


# ---------------------------------------------------------------------------
# single-observation wrappers over numpy inputs


def _to_complex_tensor(arr, model: VaeModel) -> torch.Tensor:
    cdt = _complex_dtype(model._dtype)
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.complex128)).to(cdt)
    return t.unsqueeze(0) if t.ndim == 1 else t


def _eps_for(model: VaeModel, rng_seed, eps):
    if eps is not None:
        e = torch.as_tensor(eps, dtype=model._dtype)
        return e.unsqueeze(0) if e.ndim == 1 else e
    gen = torch.Generator().manual_seed(0 if rng_seed is None else int(rng_seed))
    return torch.randn((1, model.arch.latent_dim), generator=gen,
                       dtype=model._dtype)


def op_payload_tensor(op: ObservationOperator, model: VaeModel):
    if op.kind == PHASE_SHIFT:
        return torch.from_numpy(op.matrix).to(_complex_dtype(model._dtype))
    return torch.from_numpy(op.indices.astype(np.int64))


def loss_vae_noisy(model: VaeModel, h, y, op: ObservationOperator,
                   noise: NoiseModel, rng_seed=None, eps=None) -> float:
    """Negative ELBO of one sample; encoder input is A^H y."""
    enc_in = _to_complex_tensor(op.adjoint(np.asarray(y)), model)
    h_t = _to_complex_tensor(h, model)
    loss = elbo_loss_noisy(model, enc_in, h_t, eps=_eps_for(model, rng_seed, eps))
    value = float(loss.detach().squeeze(0))
    if not np.isfinite(value):
        raise NumericalError("non-finite training loss")
    return value


def loss_vae_real(model: VaeModel, y, op: ObservationOperator,
                  noise: NoiseModel, rng_seed=None, eps=None) -> float:
    """Negative ELBO of one sample from the observation alone."""
    y_arr = np.asarray(y)
    if y_arr.shape[-1] != op.m_rows:
        raise InvalidParameterError("observation length does not match operator")
    enc_in = _to_complex_tensor(op.adjoint(y_arr), model)
    y_t = _to_complex_tensor(y_arr, model)
    loss = elbo_loss_real(model, enc_in, y_t, op_payload_tensor(op, model),
                          noise.variance, eps=_eps_for(model, rng_seed, eps))
    value = float(loss.detach().squeeze(0))
    if not np.isfinite(value):
        raise NumericalError("non-finite training loss")
    return value
