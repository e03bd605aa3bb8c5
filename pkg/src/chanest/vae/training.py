"""Training loop and observation providers for the three VAE variants.

VAE-noisy synthesizes fresh noisy observations from ground-truth channels
every epoch. The real variants consume observation tuples only: either a
static pre-generated set (one tuple per sample, as collected during regular
operation) or a synthesizing provider whose operator factory is invoked once
per iteration (the varying-A training trick).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import InvalidParameterError, NumericalError
from ..fileio import ObservationSet
from ..observation import ObservationOperator, PHASE_SHIFT, PILOT_SELECTION, build_phase_shift_operator
from .losses import elbo_loss_noisy, elbo_loss_real
from .model import VaeModel, VARIANT_NOISY, VARIANT_REAL_FIX, VARIANT_REAL_VAR


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 128
    learning_rate: float = 5e-4
    seed: int = 0
    snr_range_db: tuple = (-10.0, 40.0)
    shuffle: bool = True
    keep_best: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise InvalidParameterError("hyperparameters must be positive")


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _complex_t(arr) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.complex64))


class SynthesizingProvider:
    """Regenerates noisy observations from channels each epoch.

    For the varying-A variant the operator factory is called exactly once per
    iteration with the global iteration index.
    """

    def __init__(self, channels: np.ndarray, *, variant: str, seed: int,
                 batch_size: int, snr_range_db=(-10.0, 40.0),
                 op: ObservationOperator | None = None, op_factory=None,
                 shuffle: bool = True):
        self.channels = np.ascontiguousarray(channels, dtype=np.complex128)
        self.variant = variant
        self.seed = seed
        self.batch_size = batch_size
        self.snr_range_db = snr_range_db
        self.shuffle = shuffle
        if variant == VARIANT_REAL_VAR:
            if op_factory is None:
                raise InvalidParameterError("varying-A training needs an op_factory")
            self.op, self.op_factory = None, op_factory
        else:
            if op is None:
                raise InvalidParameterError("fixed-A training needs an operator")
            self.op, self.op_factory = op, None

    def __len__(self):
        return self.channels.shape[0]

    def iterations_per_epoch(self) -> int:
        return int(np.ceil(len(self) / self.batch_size))

    def batches(self, epoch: int, start_iteration: int = 0):
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, 0x0B5, epoch]))
        order = rng.permutation(len(self)) if self.shuffle else np.arange(len(self))
        snr_db = rng.uniform(*self.snr_range_db, size=len(self))
        iteration = start_iteration
        for start in range(0, len(self), self.batch_size):
            idx = order[start:start + self.batch_size]
            h = self.channels[idx]
            op = self.op if self.op_factory is None else self.op_factory(iteration)
            clean = op.apply(h)
            s2 = 10.0 ** (-snr_db[start:start + self.batch_size] / 10.0)
            noise = (rng.standard_normal(clean.shape)
                     + 1j * rng.standard_normal(clean.shape))
            y = clean + np.sqrt(s2 / 2.0)[:, None] * noise
            enc_in = op.adjoint(y)
            batch = {"enc_in": _complex_t(enc_in)}
            if self.variant == VARIANT_NOISY:
                batch["h"] = _complex_t(h)
            else:
                batch["y"] = _complex_t(y)
                batch["noise_var"] = torch.from_numpy(s2.astype(np.float32))
                if op.kind == PHASE_SHIFT:
                    batch["payload"] = _complex_t(op.matrix)
                else:
                    batch["payload"] = torch.from_numpy(op.indices.astype(np.int64))
            yield batch
            iteration += 1


class StaticObservationProvider:
    """Fixed per-sample observation tuples (y_i, A_i, snr_i) from files.

    Used by the real variants so training never touches the channel files;
    per-sample phase-shift operators are regenerated from their stored seeds.
    """

    def __init__(self, obs: ObservationSet, *, seed: int, batch_size: int,
                 shuffle: bool = True):
        self.obs = obs
        self.seed = seed
        self.batch_size = batch_size
        self.shuffle = shuffle
        self.noise_var = (10.0 ** (-obs.snr_db / 10.0)).astype(np.float32)
        self._shared_payload = None
        if obs.shared_operator is not None:
            op = obs.shared_operator
            if op.kind == PHASE_SHIFT:
                self._shared_payload = _complex_t(op.matrix)
            else:
                self._shared_payload = torch.from_numpy(op.indices.astype(np.int64))

    def __len__(self):
        return len(self.obs)

    def iterations_per_epoch(self) -> int:
        return int(np.ceil(len(self) / self.batch_size))

    def _operators(self, idx) -> np.ndarray:
        mats = np.empty((len(idx), self.obs.m_rows, self.obs.n_cols),
                        dtype=np.complex128)
        for j, i in enumerate(idx):
            mats[j] = build_phase_shift_operator(
                self.obs.m_rows, self.obs.n_cols,
                np.random.SeedSequence([int(self.obs.operator_seeds[i])])).matrix
        return mats

    def batches(self, epoch: int, start_iteration: int = 0):
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, 0x0B6, epoch]))
        order = rng.permutation(len(self)) if self.shuffle else np.arange(len(self))
        for start in range(0, len(self), self.batch_size):
            idx = order[start:start + self.batch_size]
            y = self.obs.y[idx].astype(np.complex128)
            batch = {
                "y": _complex_t(y),
                "noise_var": torch.from_numpy(self.noise_var[idx]),
            }
            if self._shared_payload is not None:
                batch["payload"] = self._shared_payload
                batch["enc_in"] = _complex_t(self.obs.shared_operator.adjoint(y))
            elif self.obs.kind == PHASE_SHIFT:
                mats = self._operators(idx)
                batch["payload"] = _complex_t(mats)
                batch["enc_in"] = _complex_t(
                    np.einsum("bmn,bm->bn", mats.conj(), y))
            else:
                pil = self.obs.pilot_indices[idx]
                scattered = np.zeros((len(idx), self.obs.n_cols), dtype=np.complex128)
                np.put_along_axis(scattered, pil, y, axis=1)
                batch["payload"] = torch.from_numpy(pil.astype(np.int64))
                batch["enc_in"] = _complex_t(scattered)
            yield batch


@dataclass
class TrainResult:
    model: VaeModel
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = np.inf


def _batch_loss(model: VaeModel, variant: str, batch: dict,
                eps_generator) -> torch.Tensor:
    if variant == VARIANT_NOISY:
        return elbo_loss_noisy(model, batch["enc_in"], batch["h"],
                               generator=eps_generator)
    # real variants must never see ground-truth channels
    assert "h" not in batch, "real-variant loss path received channel data"
    return elbo_loss_real(model, batch["enc_in"], batch["y"], batch["payload"],
                          batch["noise_var"], generator=eps_generator)


def train(model: VaeModel, train_provider, val_provider,
          cfg: TrainConfig) -> TrainResult:
    """Adam loop with per-epoch validation; the best-validation state wins."""
    variant = model.variant
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    eps_gen = torch.Generator().manual_seed(_derived_seed(cfg.seed, 0xE95))
    result = TrainResult(model=model)
    best_state = None
    iteration = 0
    for epoch in range(cfg.epochs):
        model.train()
        running, count = 0.0, 0
        for batch in train_provider.batches(epoch, start_iteration=iteration):
            optimizer.zero_grad()
            losses = _batch_loss(model, variant, batch, eps_gen)
            loss = losses.mean()
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"training diverged at epoch {epoch}, iteration {iteration}")
            loss.backward()
            optimizer.step()
            running += float(losses.detach().sum())
            count += losses.shape[0]
            iteration += 1
        train_loss = running / max(count, 1)
        val_loss = evaluate_loss(model, val_provider, variant,
                                 seed=_derived_seed(cfg.seed, 0xA1, epoch))
        result.history.append({
            "epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
        })
        if cfg.keep_best and val_loss < result.best_val:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
    if cfg.keep_best and best_state is not None:
        model.load_state_dict(best_state)
    return result


def evaluate_loss(model: VaeModel, provider, variant: str, seed: int) -> float:
    """Mean per-sample loss over one pass, with seeded latent draws."""
    eps_gen = torch.Generator().manual_seed(seed)
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for batch in provider.batches(epoch=0):
            losses = _batch_loss(model, variant, batch, eps_gen)
            total += float(losses.sum())
            count += losses.shape[0]
    model.train()
    return total / max(count, 1)


def save_loss_csv(history, path) -> None:
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{row['epoch']},{row['train_loss']:.8e},{row['val_loss']:.8e}"
              for row in history]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
