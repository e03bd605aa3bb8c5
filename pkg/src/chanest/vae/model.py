"""Encoder/decoder networks with conditionally Gaussian structured outputs.

The encoder maps a complex length-N input (2 real channels) through strided
1D conv blocks to a diagonal Gaussian over the latent space. The decoder
mirrors it with transposed convolutions and emits a complex mean of length N
plus a positive covariance spectrum (circulant: length N; block-Toeplitz:
length 4 N_c N_t).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..errors import InvalidParameterError, NumericalError

RAW_CLAMP = 20.0  # raw log-scale outputs are clamped to +-RAW_CLAMP

CIRCULANT = "circulant"
BLOCK_TOEPLITZ = "block_toeplitz"

VARIANT_NOISY = "noisy"
VARIANT_REAL_FIX = "real_fix"
VARIANT_REAL_VAR = "real_var"
VARIANTS = (VARIANT_NOISY, VARIANT_REAL_FIX, VARIANT_REAL_VAR)


@dataclass(frozen=True)
class VaeArchitecture:
    """Everything needed to rebuild the parameter shapes."""

    signal_len: int
    latent_dim: int
    conv_channels: tuple = (32, 64, 128)
    kernel_size: int = 7
    cov_kind: str = CIRCULANT
    grid_shape: tuple | None = None  # (n_subcarriers, n_timeslots)

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.grid_shape is not None:
            object.__setattr__(self, "grid_shape", tuple(self.grid_shape))
        if self.latent_dim < 1 or self.signal_len < 2:
            raise InvalidParameterError("latent_dim and signal_len must be positive")
        depth = len(self.conv_channels)
        if depth < 1 or self.signal_len % (2 ** depth):
            raise InvalidParameterError(
                f"signal_len {self.signal_len} not divisible by 2^{depth}"
            )
        if self.cov_kind == BLOCK_TOEPLITZ:
            if self.grid_shape is None:
                raise InvalidParameterError("block-Toeplitz needs a grid shape")
            if self.grid_shape[0] * self.grid_shape[1] != self.signal_len:
                raise InvalidParameterError("grid does not match signal_len")
        elif self.cov_kind != CIRCULANT:
            raise InvalidParameterError(f"unknown cov_kind {self.cov_kind!r}")

    @property
    def spectrum_len(self) -> int:
        if self.cov_kind == CIRCULANT:
            return self.signal_len
        return 4 * self.grid_shape[0] * self.grid_shape[1]

    @property
    def spectrum_channels(self) -> int:
        return self.spectrum_len // self.signal_len

    @property
    def min_len(self) -> int:
        return self.signal_len >> len(self.conv_channels)


@dataclass
class LatentGaussian:
    """Diagonal Gaussian over the latent space; std is positive by the exp map."""

    mean: torch.Tensor
    std: torch.Tensor


@dataclass
class DecoderOutput:
    """Complex mean plus the positive covariance spectrum."""

    mean: torch.Tensor      # complex (B, N)
    spectrum: torch.Tensor  # real (B, spectrum_len)
    cov_kind: str


def _as_complex_batch(x) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.complex64))
    if not torch.is_complex(x):
        raise InvalidParameterError("encoder input must be complex")
    return x.unsqueeze(0) if x.ndim == 1 else x


class VaeModel(nn.Module):
    """Conv encoder + transposed-conv decoder; final heads start at zero.

    Zero-initialized heads give mu_phi = 0, sigma_phi = 1 and a unit decoder
    spectrum at initialization, which keeps the first optimization steps well
    conditioned.
    """

    def __init__(self, arch: VaeArchitecture, variant: str = VARIANT_NOISY):
        super().__init__()
        if variant not in VARIANTS:
            raise InvalidParameterError(f"unknown variant {variant!r}")
        self.arch = arch
        self.variant = variant
        k, pad = arch.kernel_size, arch.kernel_size // 2
        chans = (2,) + arch.conv_channels
        enc = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            enc += [nn.Conv1d(cin, cout, k, stride=2, padding=pad),
                    nn.BatchNorm1d(cout), nn.ReLU()]
        self.encoder = nn.Sequential(*enc)
        flat = arch.conv_channels[-1] * arch.min_len
        self.enc_head = nn.Linear(flat, 2 * arch.latent_dim)
        self.dec_lift = nn.Linear(arch.latent_dim, flat)
        rev = tuple(reversed(arch.conv_channels))
        dec = []
        for cin, cout in zip(rev[:-1], rev[1:]):
            dec += [nn.ConvTranspose1d(cin, cout, k, stride=2, padding=pad,
                                       output_padding=1),
                    nn.BatchNorm1d(cout), nn.ReLU()]
        dec.append(nn.ConvTranspose1d(rev[-1], 2 + arch.spectrum_channels, k,
                                      stride=2, padding=pad, output_padding=1))
        self.decoder = nn.Sequential(*dec)
        nn.init.zeros_(self.enc_head.weight)
        nn.init.zeros_(self.enc_head.bias)
        nn.init.zeros_(self.decoder[-1].weight)
        nn.init.zeros_(self.decoder[-1].bias)

    @property
    def _dtype(self):
        return self.enc_head.weight.dtype

    def encode(self, x) -> LatentGaussian:
        """Diagonal posterior from a complex (B, N) or (N,) input."""
        x = _as_complex_batch(x)
        if x.shape[-1] != self.arch.signal_len:
            raise InvalidParameterError(
                f"expected length {self.arch.signal_len}, got {x.shape[-1]}"
            )
        feats = torch.stack([x.real, x.imag], dim=1).to(self._dtype)
        hidden = self.encoder(feats).flatten(1)
        mean, raw = self.enc_head(hidden).chunk(2, dim=-1)
        std = torch.exp(torch.clamp(raw, -RAW_CLAMP, RAW_CLAMP) / 2.0)
        return LatentGaussian(mean, std)

    def decode(self, z) -> DecoderOutput:
        """Complex mean and positive spectrum from latent (B, N_L) or (N_L,)."""
        if isinstance(z, np.ndarray):
            z = torch.from_numpy(np.ascontiguousarray(z, dtype=np.float32))
        z = z.unsqueeze(0) if z.ndim == 1 else z
        z = z.to(self._dtype)
        lift = self.dec_lift(z)
        lift = lift.view(z.shape[0], self.arch.conv_channels[-1], self.arch.min_len)
        out = self.decoder(lift)
        mean = torch.complex(out[:, 0], out[:, 1])
        raw = out[:, 2:].reshape(z.shape[0], self.arch.spectrum_len)
        spectrum = torch.exp(torch.clamp(raw, -RAW_CLAMP, RAW_CLAMP))
        if not (torch.isfinite(mean).all() and torch.isfinite(spectrum).all()):
            raise NumericalError("decoder produced non-finite outputs")
        return DecoderOutput(mean, spectrum, self.arch.cov_kind)

    def forward(self, x, eps=None, generator=None):
        lat = self.encode(x)
        z = reparameterize(lat, eps=eps, generator=generator)
        return self.decode(z), lat


def reparameterize(lat: LatentGaussian, eps=None, generator=None) -> torch.Tensor:
    """z = mean + std * eps with eps ~ N(0, I); gradients flow to both."""
    if eps is None:
        eps = torch.randn(lat.mean.shape, generator=generator,
                          dtype=lat.mean.dtype, device=lat.mean.device)
    return lat.mean + lat.std * eps


def randomize_(model: VaeModel, seed: int, scale: float = 0.3) -> VaeModel:
    """Re-draw every parameter; batch-norm weights stay near one."""
    gen = torch.Generator().manual_seed(seed)
    for name, param in model.named_parameters():
        with torch.no_grad():
            param.uniform_(-scale, scale, generator=gen)
            if "weight" in name and param.ndim == 1:  # norm layers
                param.add_(1.0)
    return model


def build_model(arch: VaeArchitecture, variant: str, seed: int) -> VaeModel:
    """Construct with a seeded default initialization (heads at zero)."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return VaeModel(arch, variant)


# ---------------------------------------------------------------------------
# checkpoints: JSON descriptor + raw little-endian payload

_DTYPES = {"float32": np.dtype("<f4"), "int64": np.dtype("<i8")}


def save_model(model: VaeModel, prefix) -> Path:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    tensors = []
    blob = bytearray()
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        dtype = "int64" if arr.dtype.kind == "i" else "float32"
        arr = arr.astype(_DTYPES[dtype])
        tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": dtype,
            "offset": len(blob),
        })
        blob += arr.tobytes()
    meta = {
        "architecture": asdict(model.arch),
        "variant": model.variant,
        "tensors": tensors,
    }
    Path(str(prefix) + ".json").write_text(json.dumps(meta, indent=1))
    Path(str(prefix) + ".bin").write_bytes(bytes(blob))
    return Path(str(prefix) + ".json")


def load_model(prefix) -> VaeModel:
    from .. import fileio

    prefix = Path(prefix)
    fileio.note_read(str(prefix) + ".json")
    fileio.note_read(str(prefix) + ".bin")
    meta = json.loads(Path(str(prefix) + ".json").read_text())
    arch_kw = dict(meta["architecture"])
    arch_kw["conv_channels"] = tuple(arch_kw["conv_channels"])
    if arch_kw.get("grid_shape"):
        arch_kw["grid_shape"] = tuple(arch_kw["grid_shape"])
    model = VaeModel(VaeArchitecture(**arch_kw), meta["variant"])
    blob = Path(str(prefix) + ".bin").read_bytes()
    state = {}
    for spec in meta["tensors"]:
        dtype = _DTYPES[spec["dtype"]]
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count,
                            offset=spec["offset"]).reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state, strict=True)
    return model
