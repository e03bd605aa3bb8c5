"""Experiment orchestration: data generation, training, and NMSE sweeps.

Every random stage draws from a stream derived from (config seed, stage tag),
so a full pipeline rerun with the same config reproduces identical files and
CSV reports.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import fileio
from ..channels import WidebandModelConfig, sample_spatial_channels, sample_wideband_channels
from ..errors import ConfigError
from ..estimators import (
    build_li_covariance,
    estimate_genie_omp,
    estimate_vae_batch,
    li_interpolation_matrix,
    lmmse_estimate,
    nmse,
    sample_covariance,
)
from ..observation import (
    LATTICE,
    NoiseModel,
    RANDOM,
    build_phase_shift_operator,
    build_pilot_selection_operator,
    observe,
)
from ..vae.model import build_model, load_model, save_model, VaeArchitecture
from ..vae.training import (
    StaticObservationProvider,
    SynthesizingProvider,
    TrainConfig,
    save_loss_csv,
    train,
)
from .config import HYBRID, ExperimentConfig, VARIANT_OF_ESTIMATOR

CSV_HEADER = "estimator,snr_db,geometry,nmse,n_test,seed"


def _snr_key(snr_db: float) -> int:
    """Non-negative integer key for an SNR point (milli-dB, offset)."""
    return int(round(1000.0 * snr_db)) + 10**6


def stream_seed(base: int, tag: str, *extra: int) -> int:
    """Deterministic stage seed from the run seed and a named stage."""
    parts = [base, zlib.crc32(tag.encode())] + [int(e) for e in extra]
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


@dataclass
class RunPaths:
    root: Path

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def ensure(self) -> "RunPaths":
        for p in (self.data, self.models, self.reports):
            p.mkdir(parents=True, exist_ok=True)
        return self


def run_paths(cfg: ExperimentConfig) -> RunPaths:
    return RunPaths(Path(cfg.out_dir)).ensure()


def operator_for(cfg: ExperimentConfig, m_rows: int | None = None):
    """The fixed evaluation-time operator for a geometry, seeded per M."""
    m = cfg.m_default if m_rows is None else m_rows
    if cfg.scenario == HYBRID:
        seed = np.random.SeedSequence([cfg.eval.operator_seed, m])
        return build_phase_shift_operator(m, cfg.hybrid.n_antennas, seed)
    wb = cfg.wideband
    if wb.layout == LATTICE:
        return build_pilot_selection_operator(
            LATTICE, m, wb.n_subcarriers, wb.n_timeslots,
            lattice_subcarriers=wb.lattice_subcarriers,
            lattice_timeslots=wb.lattice_timeslots,
        )
    return build_pilot_selection_operator(
        RANDOM, m, wb.n_subcarriers, wb.n_timeslots,
        rng_seed=np.random.SeedSequence([cfg.eval.operator_seed, m]),
    )


def _sample_split(cfg: ExperimentConfig, split: str, n: int):
    seed = stream_seed(cfg.seed, f"data/{split}")
    if cfg.scenario == HYBRID:
        return sample_spatial_channels(n, cfg.hybrid.n_antennas, seed,
                                       split_tag=split)
    wb_cfg = WidebandModelConfig(n_subcarriers=cfg.wideband.n_subcarriers,
                                 n_timeslots=cfg.wideband.n_timeslots)
    return sample_wideband_channels(n, seed, wb_cfg, split_tag=split)


def _obs_varying(cfg: ExperimentConfig, channels: np.ndarray, split: str,
                 m_rows: int) -> fileio.ObservationSet:
    """Per-sample operators: fresh phase shifts or fresh pilot placements."""
    base = stream_seed(cfg.seed, f"obs-var/{split}", m_rows)
    rng = np.random.default_rng(np.random.SeedSequence([base, 1]))
    t = channels.shape[0]
    snr_db = rng.uniform(cfg.train.snr_min_db, cfg.train.snr_max_db, t)
    noise_scale = np.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
    y = np.empty((t, m_rows), dtype=np.complex128)
    op_seeds = None
    pilot_idx = None
    if cfg.scenario == HYBRID:
        op_seeds = np.random.SeedSequence([base, 2]).generate_state(t).astype(np.int64)
        for i in range(t):
            op = build_phase_shift_operator(
                m_rows, cfg.hybrid.n_antennas,
                np.random.SeedSequence([int(op_seeds[i])]))
            y[i] = op.apply(channels[i])
        grid = None
        kind = "phase_shift"
        n_cols = cfg.hybrid.n_antennas
    else:
        wb = cfg.wideband
        n_cols = wb.n_subcarriers * wb.n_timeslots
        pilot_idx = np.empty((t, m_rows), dtype=np.int64)
        for i in range(t):
            idx = np.sort(rng.choice(n_cols, m_rows, replace=False))
            pilot_idx[i] = idx
            y[i] = channels[i, idx]
        grid = (wb.n_subcarriers, wb.n_timeslots)
        kind = "pilot_selection"
    noise = (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    y += noise_scale[:, None] * noise
    return fileio.ObservationSet(
        y=y.astype(np.complex64), snr_db=snr_db, kind=kind, n_cols=n_cols,
        operator_seeds=op_seeds, pilot_indices=pilot_idx, grid_shape=grid,
    )


def _obs_fixed(cfg: ExperimentConfig, channels: np.ndarray, split: str,
               m_rows: int) -> fileio.ObservationSet:
    """One shared operator (the evaluation-time A) for every sample."""
    base = stream_seed(cfg.seed, f"obs-fix/{split}", m_rows)
    rng = np.random.default_rng(np.random.SeedSequence([base]))
    op = operator_for(cfg, m_rows)
    t = channels.shape[0]
    snr_db = rng.uniform(cfg.train.snr_min_db, cfg.train.snr_max_db, t)
    noise_scale = np.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
    clean = op.apply(channels)
    noise = (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))
    y = clean + noise_scale[:, None] * noise
    return fileio.ObservationSet(
        y=y.astype(np.complex64), snr_db=snr_db, kind=op.kind, n_cols=op.n_cols,
        shared_operator=op, grid_shape=op.grid_shape,
    )


def _obs_prefix(paths: RunPaths, mode: str, split: str, m_rows: int) -> Path:
    return paths.data / f"obs_{mode}_{split}_M{m_rows}"


def ensure_observations(cfg: ExperimentConfig, mode: str, m_rows: int) -> None:
    """Create the observation files for (mode, M) if they are missing."""
    paths = run_paths(cfg)
    for split in ("train", "val"):
        prefix = _obs_prefix(paths, mode, split, m_rows)
        if Path(str(prefix) + ".json").exists():
            continue
        channels = fileio.load_dataset(paths.data, split).samples
        builder = _obs_varying if mode == "var" else _obs_fixed
        fileio.save_observations(builder(cfg, channels, split, m_rows), prefix)


def gen_data(cfg: ExperimentConfig) -> dict:
    """Write channel datasets, the evaluation operator, and observation sets."""
    paths = run_paths(cfg)
    out = {}
    for split, n in (("train", cfg.sizes.n_train), ("val", cfg.sizes.n_val),
                     ("test", cfg.sizes.n_test)):
        ds = _sample_split(cfg, split, n)
        out[split] = fileio.save_dataset(ds, paths.data, split)
    out["operator"] = fileio.save_operator(operator_for(cfg),
                                           paths.data / "op_eval")
    variants = set(cfg.train.variants)
    if "real_var" in variants:
        ensure_observations(cfg, "var", cfg.m_default)
    if "real_fix" in variants:
        ensure_observations(cfg, "fix", cfg.m_default)
    return out


def _architecture(cfg: ExperimentConfig) -> VaeArchitecture:
    if cfg.scenario == HYBRID:
        return VaeArchitecture(cfg.hybrid.n_antennas, cfg.train.latent_dim,
                               cfg.train.conv_channels, cfg.train.kernel_size,
                               cov_kind="circulant")
    wb = cfg.wideband
    return VaeArchitecture(wb.n_subcarriers * wb.n_timeslots,
                           cfg.train.latent_dim, cfg.train.conv_channels,
                           cfg.train.kernel_size, cov_kind="block_toeplitz",
                           grid_shape=(wb.n_subcarriers, wb.n_timeslots))


def checkpoint_prefix(cfg: ExperimentConfig, variant: str,
                      m_rows: int | None = None) -> Path:
    return run_paths(cfg).models / f"{variant}-{cfg.geometry_tag(m_rows)}"


def train_variant(cfg: ExperimentConfig, variant: str,
                  m_rows: int | None = None):
    """Train one VAE variant for one geometry and persist the checkpoint."""
    paths = run_paths(cfg)
    m = cfg.m_default if m_rows is None else m_rows
    tcfg = TrainConfig(
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        learning_rate=cfg.train.learning_rate,
        seed=stream_seed(cfg.seed, f"train/{variant}", m),
        snr_range_db=(cfg.train.snr_min_db, cfg.train.snr_max_db),
    )
    if variant == "noisy":
        train_ch = fileio.load_dataset(paths.data, "train").samples
        val_ch = fileio.load_dataset(paths.data, "val").samples
        op = operator_for(cfg, m)
        prov = SynthesizingProvider(
            train_ch, variant=variant, seed=tcfg.seed,
            batch_size=tcfg.batch_size, snr_range_db=tcfg.snr_range_db, op=op)
        val_prov = SynthesizingProvider(
            val_ch, variant=variant, seed=stream_seed(cfg.seed, "val/noisy", m),
            batch_size=tcfg.batch_size, snr_range_db=tcfg.snr_range_db, op=op)
    elif variant in ("real_fix", "real_var"):
        mode = "var" if variant == "real_var" else "fix"
        ensure_observations(cfg, mode, m)
        obs_train = fileio.load_observations(_obs_prefix(paths, mode, "train", m))
        obs_val = fileio.load_observations(_obs_prefix(paths, mode, "val", m))
        prov = StaticObservationProvider(obs_train, seed=tcfg.seed,
                                         batch_size=tcfg.batch_size)
        val_prov = StaticObservationProvider(
            obs_val, seed=stream_seed(cfg.seed, f"val/{variant}", m),
            batch_size=tcfg.batch_size)
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    model = build_model(_architecture(cfg), variant,
                        seed=stream_seed(cfg.seed, f"init/{variant}", m))
    result = train(model, prov, val_prov, tcfg)
    prefix = checkpoint_prefix(cfg, variant, m)
    save_model(model, prefix)
    save_loss_csv(result.history, Path(str(prefix) + "-loss.csv"))
    return prefix, result


@dataclass
class NmseRow:
    estimator: str
    snr_db: float
    geometry: str
    nmse: float
    n_test: int
    seed: int


def write_report(rows, path) -> Path:
    rows = sorted(rows, key=lambda r: (r.estimator, r.geometry, r.snr_db))
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(f"{r.estimator},{r.snr_db:g},{r.geometry},"
                     f"{r.nmse:.10e},{r.n_test},{r.seed}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_report(path) -> list:
    rows = []
    for line in Path(path).read_text().strip().splitlines()[1:]:
        est, snr, geom, val, n_test, seed = line.split(",")
        rows.append(NmseRow(est, float(snr), geom, float(val),
                            int(n_test), int(seed)))
    return rows


def write_wide_data(rows, path, axis: str = "snr") -> Path:
    """Gnuplot-friendly layout: one row per sweep point, one column per estimator."""
    if axis == "snr":
        key = lambda r: r.snr_db
    else:
        key = lambda r: int(r.geometry.rsplit("-M", 1)[1]) \
            if "-M" in r.geometry else r.geometry
    estimators = sorted({r.estimator for r in rows})
    points = sorted({key(r) for r in rows})
    table = {(key(r), r.estimator): r.nmse for r in rows}
    lines = ["# " + axis + " " + " ".join(estimators)]
    for p in points:
        cells = [f"{table[(p, est)]:.10e}" if (p, est) in table else "nan"
                 for est in estimators]
        lines.append(f"{p:g} " + " ".join(cells))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def _genie_cme_nmse(cfg, test_ds, op, observations, noise_vars, chunk=512):
    """Per-sample LMMSE with the true cluster covariance, chunked over samples."""
    a = op.dense()
    m = a.shape[0]
    t = len(test_ds)
    sq_err = np.zeros(len(noise_vars))
    for start in range(0, t, chunk):
        idx = np.arange(start, min(start + chunk, t))
        covs = test_ds.genie_covariance_batch(idx)
        cah = np.einsum("bnl,ml->bnm", covs, a.conj())
        gram0 = np.einsum("mn,bnk->bmk", a, cah)
        truth = test_ds.samples[idx]
        for j, nv in enumerate(noise_vars):
            gram = gram0 + nv * np.eye(m)
            sol = np.linalg.solve(gram, observations[j][idx][..., None])[..., 0]
            est = np.einsum("bnm,bm->bn", cah, sol)
            sq_err[j] += float(np.sum(np.abs(est - truth) ** 2))
    return sq_err / (t * test_ds.n)


def evaluate(cfg: ExperimentConfig, *, snr_grid=None, m_rows: int | None = None,
             estimator_ids=None) -> list:
    """NMSE of every configured estimator on the test split, per SNR.

    One fixed operator per run is shared by all estimators; each SNR point
    gets a fresh seeded noise draw, reused across estimators for fairness.
    """
    paths = run_paths(cfg)
    m = cfg.m_default if m_rows is None else m_rows
    grid = tuple(cfg.eval.snr_grid_db if snr_grid is None else snr_grid)
    estimators = tuple(cfg.eval.estimators if estimator_ids is None
                       else estimator_ids)
    test_ds = fileio.load_dataset(paths.data, "test")
    truth = test_ds.samples
    if cfg.eval.redraw_operator_per_sample:
        return _evaluate_redrawn(cfg, test_ds, grid, estimators, m)
    op = operator_for(cfg, m)
    geometry = cfg.geometry_tag(m)
    noise_models = [NoiseModel.from_snr_db(s) for s in grid]
    observations = [
        observe(truth, op, nm,
                np.random.SeedSequence([cfg.eval.noise_seed, m, _snr_key(s)]))
        for s, nm in zip(grid, noise_models)
    ]
    needs_train = {"global_cov", "global_li"} & set(estimators)
    train_ch = (fileio.load_dataset(paths.data, "train").samples
                if needs_train else None)
    rows = []

    def add(est_id, snr_db, value):
        rows.append(NmseRow(est_id, float(snr_db), geometry, float(value),
                            len(test_ds), cfg.seed))

    for est_id in estimators:
        if est_id == "genie_cme":
            vals = _genie_cme_nmse(cfg, test_ds, op, observations,
                                   [nm.variance for nm in noise_models])
            for s, v in zip(grid, vals):
                add(est_id, s, v)
        elif est_id == "global_cov":
            cov = sample_covariance(train_ch)
            for s, nm, ys in zip(grid, noise_models, observations):
                est = lmmse_estimate(ys, op.dense(), cov, nm.variance)
                add(est_id, s, nmse(est, truth))
        elif est_id == "genie_omp":
            for s, nm, ys in zip(grid, noise_models, observations):
                err = 0.0
                for i in range(len(test_ds)):
                    out = estimate_genie_omp(ys[i], op, nm, truth[i])
                    err += float(np.sum(np.abs(out.estimate - truth[i]) ** 2))
                add(est_id, s, err / truth.size)
        elif est_id == "li":
            li_mat = li_interpolation_matrix(op)
            for s, ys in zip(grid, observations):
                add(est_id, s, nmse(ys @ li_mat.T, truth))
        elif est_id == "global_li":
            for s, nm, ys in zip(grid, noise_models, observations):
                li_cov = build_li_covariance(
                    train_ch, op, nm,
                    np.random.SeedSequence(
                        [stream_seed(cfg.seed, "li-cov", m), _snr_key(s)]))
                est = lmmse_estimate(ys, op.dense(), li_cov, nm.variance)
                add(est_id, s, nmse(est, truth))
        elif est_id in VARIANT_OF_ESTIMATOR:
            variant = VARIANT_OF_ESTIMATOR[est_id]
            prefix = checkpoint_prefix(cfg, variant, m)
            if not Path(str(prefix) + ".json").exists():
                raise ConfigError(
                    f"missing checkpoint {prefix}; run `train` first")
            model = load_model(prefix)
            for s, nm, ys in zip(grid, noise_models, observations):
                out = estimate_vae_batch(model, ys, op, nm, estimator_id=est_id)
                add(est_id, s, nmse(out.estimate, truth))
        else:
            raise ConfigError(f"unknown estimator {est_id!r}")
    rows.sort(key=lambda r: (r.estimator, r.geometry, r.snr_db))
    return rows


def _evaluate_redrawn(cfg: ExperimentConfig, test_ds, grid, estimators, m):
    """Diagnostic path: a fresh phase-shift A per test sample.

    Sample-major loops with single-observation estimator calls; much slower
    than the shared-operator default and meant for small diagnostic runs.
    """
    if cfg.scenario != HYBRID:
        raise ConfigError("per-sample operator redraw applies to hybrid runs")
    paths = run_paths(cfg)
    truth = test_ds.samples
    t, n = truth.shape
    geometry = cfg.geometry_tag(m)
    noise_models = [NoiseModel.from_snr_db(s) for s in grid]
    ops = [build_phase_shift_operator(
        m, n, np.random.SeedSequence([cfg.eval.operator_seed, m, i]))
        for i in range(t)]
    observations = []
    for s, nm in zip(grid, noise_models):
        rng = np.random.default_rng(np.random.SeedSequence(
            [cfg.eval.noise_seed, m, _snr_key(s)]))
        observations.append(np.stack([
            ops[i].apply(truth[i]) + nm.sample((m,), rng) for i in range(t)]))
    needs_train = {"global_cov"} & set(estimators)
    train_cov = (sample_covariance(fileio.load_dataset(paths.data, "train").samples)
                 if needs_train else None)
    models = {}
    for est_id in estimators:
        if est_id in VARIANT_OF_ESTIMATOR:
            prefix = checkpoint_prefix(cfg, VARIANT_OF_ESTIMATOR[est_id], m)
            if not Path(str(prefix) + ".json").exists():
                raise ConfigError(f"missing checkpoint {prefix}; run `train` first")
            models[est_id] = load_model(prefix)
    rows = []
    for est_id in estimators:
        for j, (s, nm) in enumerate(zip(grid, noise_models)):
            err = 0.0
            for i in range(t):
                y_i, op_i = observations[j][i], ops[i]
                if est_id == "genie_cme":
                    est = lmmse_estimate(y_i, op_i.dense(),
                                         test_ds.genie_covariance(i).matrix,
                                         nm.variance)
                elif est_id == "global_cov":
                    est = lmmse_estimate(y_i, op_i.dense(), train_cov, nm.variance)
                elif est_id == "genie_omp":
                    est = estimate_genie_omp(y_i, op_i, nm, truth[i]).estimate
                elif est_id in models:
                    est = estimate_vae_batch(models[est_id], y_i, op_i, nm,
                                             estimator_id=est_id).estimate
                else:
                    raise ConfigError(
                        f"estimator {est_id!r} unsupported with per-sample A")
                err += float(np.sum(np.abs(est - truth[i]) ** 2))
            rows.append(NmseRow(est_id, float(s), geometry, err / truth.size,
                                t, cfg.seed))
    rows.sort(key=lambda r: (r.estimator, r.geometry, r.snr_db))
    return rows


def sweep_rf(cfg: ExperimentConfig) -> list:
    """Evaluate every configured estimator across the RF-chain grid."""
    if cfg.scenario != HYBRID:
        raise ConfigError("the RF sweep applies to the hybrid scenario")
    rows = []
    for m in cfg.eval.rf_chains:
        if not 1 <= m < cfg.hybrid.n_antennas:
            raise ConfigError(f"rf sweep count {m} out of range for "
                              f"N={cfg.hybrid.n_antennas}")
        rows.extend(evaluate(cfg, snr_grid=(cfg.eval.rf_snr_db,), m_rows=m))
    return rows
