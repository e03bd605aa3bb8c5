import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from chanest import fileio
from chanest.errors import ConfigError
from chanest.harness import config as hconfig
from chanest.harness import pipeline
from chanest.harness.config import default_config, load_config


def micro_hybrid(tmp_path, **kw):
    cfg = default_config("hybrid", "desk", seed=77,
                         out_dir=str(tmp_path / "run"))
    cfg = replace(
        cfg,
        sizes=hconfig.DataSizes(300, 64, 128),
        hybrid=hconfig.HybridGeometry(16, 4),
        train=replace(cfg.train, epochs=2, batch_size=64, latent_dim=4,
                      conv_channels=(8,)),
        eval=replace(cfg.eval, snr_grid_db=(0.0, 20.0),
                     estimators=("genie_cme", "global_cov", "vae_noisy",
                                 "vae_real_var"),
                     rf_chains=(4, 6)),
    )
    cfg = replace(cfg, train=replace(cfg.train, variants=("noisy", "real_var")))
    for key, val in kw.items():
        cfg = replace(cfg, **{key: val})
    return cfg.validate()


def micro_wideband(tmp_path):
    cfg = default_config("wideband", "desk", seed=78,
                         out_dir=str(tmp_path / "runw"))
    cfg = replace(
        cfg,
        sizes=hconfig.DataSizes(300, 64, 128),
        train=replace(cfg.train, epochs=2, batch_size=64, latent_dim=4,
                      conv_channels=(8,), variants=("real_var",)),
        eval=replace(cfg.eval, snr_grid_db=(0.0, 20.0),
                     estimators=("li", "global_li", "vae_real_var")),
    )
    return cfg.validate()


class TestConfig:
    def test_default_profiles_validate(self):
        for scenario in ("hybrid", "wideband"):
            for profile in ("desk", "paper"):
                default_config(scenario, profile).validate()

    def test_toml_roundtrip_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("""
[experiment]
scenario = "hybrid"
profile = "desk"
seed = 5

[geometry]
n_antennas = 64
n_rf_chains = 16

[data]
n_train = 1000
n_val = 100
n_test = 200

[eval]
snr_grid_db = [0, 10]
estimators = ["genie_cme", "vae_noisy"]
""")
        cfg = load_config(path)
        assert cfg.hybrid.n_antennas == 64
        assert cfg.sizes.n_train == 1000
        assert cfg.eval.snr_grid_db == (0, 10)
        assert cfg.train.variants == ("noisy",)
        cfg2 = load_config(path, seed=9, out_dir="elsewhere")
        assert cfg2.seed == 9 and cfg2.out_dir == "elsewhere"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("""
[experiment]
scenario = "hybrid"

[train]
epochz = 3
""")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_estimator_scenario_mismatch(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("""
[experiment]
scenario = "wideband"

[eval]
estimators = ["genie_cme"]
""")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_empty_snr_grid_rejected(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        with pytest.raises(ConfigError):
            replace(cfg, eval=replace(cfg.eval, snr_grid_db=())).validate()

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("nonexistent.toml")


class TestGenData:
    def test_file_shapes_and_idempotence(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        out = pipeline.gen_data(cfg)
        test_bin = Path(out["test"])
        assert test_bin.stat().st_size == 128 * 16 * 8
        before = test_bin.read_bytes()
        pipeline.gen_data(cfg)
        assert test_bin.read_bytes() == before

    def test_wideband_sample_length(self, tmp_path):
        cfg = micro_wideband(tmp_path)
        pipeline.gen_data(cfg)
        ds = fileio.load_dataset(pipeline.run_paths(cfg).data, "test")
        assert ds.samples.shape == (128, 168)

    def test_observation_sets_written(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        pipeline.gen_data(cfg)
        data = pipeline.run_paths(cfg).data
        obs = fileio.load_observations(data / "obs_var_train_M4")
        assert len(obs) == 300 and obs.varying


@pytest.mark.slow
class TestTrainEvaluate:
    def test_full_micro_pipeline(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        pipeline.gen_data(cfg)
        for variant in cfg.train.variants:
            prefix, result = pipeline.train_variant(cfg, variant)
            assert Path(str(prefix) + ".json").exists()
            loss_csv = Path(str(prefix) + "-loss.csv")
            lines = loss_csv.read_text().strip().splitlines()
            assert len(lines) == cfg.train.epochs + 1  # header + one per epoch
        rows = pipeline.evaluate(cfg)
        # completeness: every (estimator, snr) pair exactly once
        seen = {(r.estimator, r.snr_db) for r in rows}
        assert len(rows) == len(seen) == 4 * 2
        assert all(np.isfinite(r.nmse) and r.nmse >= 0 for r in rows)
        report = pipeline.write_report(rows,
                                       pipeline.run_paths(cfg).reports / "r.csv")
        again = pipeline.read_report(report)
        assert [(r.estimator, r.snr_db) for r in again] == \
            [(r.estimator, r.snr_db) for r in rows]
        np.testing.assert_allclose([r.nmse for r in again],
                                   [r.nmse for r in rows], rtol=1e-9)

    def test_real_variant_training_never_reads_channel_files(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        pipeline.gen_data(cfg)
        with fileio.audit_reads() as log:
            pipeline.train_variant(cfg, "real_var")
        channel_files = [p for p in log
                         if p.endswith(("train.bin", "val.bin", "test.bin"))]
        assert channel_files == []

    def test_eleven_row_snr_grid(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        cfg = replace(cfg, eval=replace(
            cfg.eval, snr_grid_db=tuple(range(-10, 41, 5)),
            estimators=("global_cov",)))
        pipeline.gen_data(cfg)
        rows = pipeline.evaluate(cfg)
        assert len(rows) == 11

    def test_genie_nmse_monotone_in_snr(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        cfg = replace(cfg, eval=replace(
            cfg.eval, snr_grid_db=tuple(range(-10, 41, 10)),
            estimators=("genie_cme",)))
        pipeline.gen_data(cfg)
        rows = sorted(pipeline.evaluate(cfg), key=lambda r: r.snr_db)
        vals = [r.nmse for r in rows]
        for lo, hi in zip(vals[1:], vals[:-1]):
            assert lo <= hi * 1.05

    def test_missing_checkpoint_is_config_error(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        pipeline.gen_data(cfg)
        with pytest.raises(ConfigError):
            pipeline.evaluate(cfg, estimator_ids=("vae_noisy",))

    def test_rf_sweep_geometry_tags(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        cfg = replace(cfg, eval=replace(cfg.eval, estimators=("global_cov",),
                                        rf_chains=(4, 6)))
        pipeline.gen_data(cfg)
        rows = pipeline.sweep_rf(cfg)
        assert {r.geometry for r in rows} == {"hybrid-N16-M4", "hybrid-N16-M6"}
        assert all(r.snr_db == cfg.eval.rf_snr_db for r in rows)

    def test_redrawn_operator_path(self, tmp_path):
        cfg = micro_hybrid(tmp_path)
        cfg = replace(cfg,
                      sizes=hconfig.DataSizes(100, 32, 40),
                      eval=replace(cfg.eval, snr_grid_db=(10.0,),
                                   estimators=("genie_cme", "global_cov"),
                                   redraw_operator_per_sample=True))
        pipeline.gen_data(cfg)
        rows = pipeline.evaluate(cfg)
        assert len(rows) == 2 and all(np.isfinite(r.nmse) for r in rows)

    def test_wideband_micro_pipeline(self, tmp_path):
        cfg = micro_wideband(tmp_path)
        pipeline.gen_data(cfg)
        pipeline.train_variant(cfg, "real_var")
        rows = pipeline.evaluate(cfg)
        assert {r.estimator for r in rows} == {"li", "global_li", "vae_real_var"}
        assert all(r.geometry == "wideband-12x14-Np20" for r in rows)


@pytest.mark.slow
class TestCli:
    def _run(self, *args):
        return subprocess.run([sys.executable, "-m", "chanest", *args],
                              capture_output=True, text=True)

    def test_exit_codes(self, tmp_path):
        missing = self._run("gen-data", "--config", str(tmp_path / "no.toml"))
        assert missing.returncode == 2
        bad = tmp_path / "bad.toml"
        bad.write_text("[experiment]\nscenario = 'underwater'\n")
        assert self._run("gen-data", "--config", str(bad)).returncode == 2

    def test_gen_and_evaluate_via_cli(self, tmp_path):
        cfg_file = tmp_path / "micro.toml"
        cfg_file.write_text(f"""
[experiment]
scenario = "hybrid"
out_dir = "{tmp_path / 'run'}"
seed = 3

[geometry]
n_antennas = 16
n_rf_chains = 4

[data]
n_train = 200
n_val = 50
n_test = 80

[train]
epochs = 1
batch_size = 64
latent_dim = 4
conv_channels = [8]

[eval]
snr_grid_db = [10]
estimators = ["global_cov"]
""")
        out = self._run("gen-data", "--config", str(cfg_file))
        assert out.returncode == 0, out.stderr
        out = self._run("evaluate", "--config", str(cfg_file))
        assert out.returncode == 0, out.stderr
        report = tmp_path / "run" / "reports" / "nmse.csv"
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "estimator,snr_db,geometry,nmse,n_test,seed"
        assert len(lines) == 2
