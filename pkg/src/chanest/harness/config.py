"""Experiment configuration: dataclasses, profiles, and TOML loading."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from ..errors import ConfigError
from ..vae.model import VARIANT_NOISY, VARIANT_REAL_FIX, VARIANT_REAL_VAR

HYBRID = "hybrid"
WIDEBAND = "wideband"

HYBRID_ESTIMATORS = ("genie_cme", "global_cov", "genie_omp",
                     "vae_noisy", "vae_real_fix", "vae_real_var")
WIDEBAND_ESTIMATORS = ("global_cov", "li", "global_li",
                       "vae_noisy", "vae_real_fix", "vae_real_var")

VARIANT_OF_ESTIMATOR = {
    "vae_noisy": VARIANT_NOISY,
    "vae_real_fix": VARIANT_REAL_FIX,
    "vae_real_var": VARIANT_REAL_VAR,
}


@dataclass(frozen=True)
class DataSizes:
    n_train: int
    n_val: int
    n_test: int


@dataclass(frozen=True)
class HybridGeometry:
    n_antennas: int = 32
    n_rf_chains: int = 8


@dataclass(frozen=True)
class WidebandGeometry:
    n_subcarriers: int = 12
    n_timeslots: int = 14
    n_pilots: int = 20
    layout: str = "lattice"
    lattice_subcarriers: tuple = (1, 4, 7, 10)
    lattice_timeslots: tuple = (0, 3, 6, 10, 13)


@dataclass(frozen=True)
class TrainSettings:
    epochs: int
    batch_size: int
    learning_rate: float = 5e-4
    latent_dim: int = 16
    conv_channels: tuple = (32, 64, 128)
    kernel_size: int = 7
    snr_min_db: float = -10.0
    snr_max_db: float = 40.0
    variants: tuple = ()


@dataclass(frozen=True)
class EvalSettings:
    snr_grid_db: tuple
    estimators: tuple
    operator_seed: int = 777
    noise_seed: int = 2024
    rf_chains: tuple = (8, 16)
    rf_snr_db: float = 20.0
    redraw_operator_per_sample: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    profile: str
    seed: int
    out_dir: str
    sizes: DataSizes
    hybrid: HybridGeometry
    wideband: WidebandGeometry
    train: TrainSettings
    eval: EvalSettings

    @property
    def n_dim(self) -> int:
        if self.scenario == HYBRID:
            return self.hybrid.n_antennas
        return self.wideband.n_subcarriers * self.wideband.n_timeslots

    @property
    def m_default(self) -> int:
        if self.scenario == HYBRID:
            return self.hybrid.n_rf_chains
        return self.wideband.n_pilots

    def geometry_tag(self, m_rows: int | None = None) -> str:
        m = self.m_default if m_rows is None else m_rows
        if self.scenario == HYBRID:
            return f"hybrid-N{self.hybrid.n_antennas}-M{m}"
        wb = self.wideband
        return f"wideband-{wb.n_subcarriers}x{wb.n_timeslots}-Np{m}"

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in (HYBRID, WIDEBAND):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if not self.eval.snr_grid_db:
            raise ConfigError("SNR grid must be non-empty")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self.sizes, name) < 1:
                raise ConfigError(f"dataset size {name} must be positive")
        if self.train.epochs < 1 or self.train.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.train.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        allowed = HYBRID_ESTIMATORS if self.scenario == HYBRID else WIDEBAND_ESTIMATORS
        for est in self.eval.estimators:
            if est not in allowed:
                raise ConfigError(
                    f"estimator {est!r} is not available for {self.scenario}")
        for variant in self.train.variants:
            if variant not in (VARIANT_NOISY, VARIANT_REAL_FIX, VARIANT_REAL_VAR):
                raise ConfigError(f"unknown training variant {variant!r}")
        if self.scenario == HYBRID:
            if self.hybrid.n_rf_chains >= self.hybrid.n_antennas:
                raise ConfigError("hybrid geometry must be underdetermined (M < N)")
            if any(m < 1 for m in self.eval.rf_chains):
                raise ConfigError("rf sweep counts must be positive")
        else:
            wb = self.wideband
            if wb.layout == "lattice":
                count = len(wb.lattice_subcarriers) * len(wb.lattice_timeslots)
                if count != wb.n_pilots:
                    raise ConfigError(
                        f"lattice layout yields {count} pilots, configured {wb.n_pilots}")
            if wb.n_pilots >= wb.n_subcarriers * wb.n_timeslots:
                raise ConfigError("wideband geometry must be underdetermined")
        return self


def _required_variants(estimators) -> tuple:
    return tuple(VARIANT_OF_ESTIMATOR[e] for e in estimators
                 if e in VARIANT_OF_ESTIMATOR)


def default_config(scenario: str, profile: str = "desk",
                   seed: int = 1234, out_dir: str = "runs/default") -> ExperimentConfig:
    """Built-in desk/paper profiles; desk targets a two-core CPU budget."""
    if profile not in ("desk", "paper"):
        raise ConfigError(f"unknown profile {profile!r}")
    if scenario == HYBRID:
        desk = profile == "desk"
        estimators = ("genie_cme", "vae_noisy", "vae_real_var", "global_cov") if desk \
            else ("genie_cme", "vae_noisy", "vae_real_fix", "vae_real_var",
                  "global_cov", "genie_omp")
        cfg = ExperimentConfig(
            scenario=HYBRID,
            profile=profile,
            seed=seed,
            out_dir=out_dir,
            sizes=DataSizes(20_000, 2_000, 10_000) if desk
            else DataSizes(180_000, 10_000, 10_000),
            hybrid=HybridGeometry(32, 8) if desk else HybridGeometry(128, 32),
            wideband=WidebandGeometry(),
            train=TrainSettings(
                epochs=50 if desk else 100,
                batch_size=128,
                latent_dim=16,
                variants=_required_variants(estimators),
            ),
            eval=EvalSettings(
                snr_grid_db=tuple(range(-10, 41, 10)) if desk
                else tuple(range(-10, 41, 5)),
                estimators=estimators,
                rf_chains=(8, 16) if desk else (8, 16, 32, 64),
            ),
        )
    elif scenario == WIDEBAND:
        desk = profile == "desk"
        estimators = ("vae_noisy", "vae_real_fix", "vae_real_var",
                      "global_cov", "li", "global_li")
        cfg = ExperimentConfig(
            scenario=WIDEBAND,
            profile=profile,
            seed=seed,
            out_dir=out_dir,
            sizes=DataSizes(20_000, 2_000, 10_000) if desk
            else DataSizes(180_000, 10_000, 10_000),
            hybrid=HybridGeometry(),
            wideband=WidebandGeometry(),
            train=TrainSettings(
                epochs=25 if desk else 100,
                batch_size=256 if desk else 128,
                latent_dim=24,
                variants=_required_variants(estimators),
            ),
            eval=EvalSettings(
                snr_grid_db=tuple(range(-10, 41, 10)) if desk
                else tuple(range(-10, 41, 5)),
                estimators=estimators,
                rf_chains=(),
            ),
        )
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    return cfg.validate()


_SECTION_TYPES = {
    "data": ("sizes", DataSizes),
    "geometry_hybrid": ("hybrid", HybridGeometry),
    "geometry_wideband": ("wideband", WidebandGeometry),
    "train": ("train", TrainSettings),
    "eval": ("eval", EvalSettings),
}


def _apply_section(obj, updates: dict, section: str):
    known = {f.name for f in fields(obj)}
    bad = set(updates) - known
    if bad:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
    coerced = {}
    for key, value in updates.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return replace(obj, **coerced)


def load_config(path, profile: str | None = None, seed: int | None = None,
                out_dir: str | None = None) -> ExperimentConfig:
    """Read a TOML config on top of its profile defaults, then CLI overrides."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    exp = raw.get("experiment", {})
    scenario = exp.get("scenario")
    if scenario is None:
        raise ConfigError("[experiment].scenario is required")
    chosen_profile = profile or exp.get("profile", "desk")
    cfg = default_config(scenario, chosen_profile,
                         seed=exp.get("seed", 1234),
                         out_dir=exp.get("out_dir", "runs/" + scenario))
    for section, payload in raw.items():
        if section == "experiment":
            extra = set(payload) - {"scenario", "profile", "seed", "out_dir"}
            if extra:
                raise ConfigError(f"unknown keys in [experiment]: {sorted(extra)}")
            continue
        if section == "geometry":
            attr = "hybrid" if scenario == HYBRID else "wideband"
            cfg = replace(cfg, **{attr: _apply_section(getattr(cfg, attr),
                                                       payload, section)})
            continue
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
        attr, _ = _SECTION_TYPES[section]
        cfg = replace(cfg, **{attr: _apply_section(getattr(cfg, attr),
                                                   payload, section)})
    if "variants" not in raw.get("train", {}):
        # keep the trained variants in sync with the requested estimators
        cfg = replace(cfg, train=replace(
            cfg.train, variants=_required_variants(cfg.eval.estimators)))
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out_dir is not None:
        cfg = replace(cfg, out_dir=out_dir)
    if profile is not None:
        cfg = replace(cfg, profile=profile)
    return cfg.validate()
