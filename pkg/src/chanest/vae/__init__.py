from .model import (
    BLOCK_TOEPLITZ,
    CIRCULANT,
    DecoderOutput,
    LatentGaussian,
    VaeArchitecture,
    VaeModel,
    VARIANT_NOISY,
    VARIANT_REAL_FIX,
    VARIANT_REAL_VAR,
    VARIANTS,
    build_model,
    load_model,
    randomize_,
    reparameterize,
    save_model,
)
from .losses import (
    elbo_loss_noisy,
    elbo_loss_real,
    kl_standard_normal,
    loss_vae_noisy,
    loss_vae_real,
)
from .training import (
    StaticObservationProvider,
    SynthesizingProvider,
    TrainConfig,
    TrainResult,
    evaluate_loss,
    save_loss_csv,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
