import numpy as np
import pytest

from buff.cli import CONFIG_KEYS, main, parse_config, run_stage, RunPaths
from buff.errors import ConfigError


TINY = [
    "data.count=6", "data.eval_count=2", "data.size=16", "data.patch=16",
    "data.stride=16", "bayes.iterations=40", "bayes.channels=8",
    "diffusion.iterations=50", "diffusion.T=8", "diffusion.base_channels=8",
    "diffusion.enc_channels=4", "diffusion.pretrain_iters=20",
]


def tiny_overrides(run_dir, extra=()):
    return TINY + [f"paths.run_dir={run_dir}", *extra]


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config(None, env={})
        assert cfg["refine.k"] == 10.0
        assert cfg["refine.delta1"] == 1.2
        assert cfg["diffusion.lr"] == 2e-4
        assert cfg["bayes.lr"] == 1e-4
        assert cfg["diffusion.batch"] == 16
        assert cfg["diffusion.lr_schedule"] == "cosine"

    def test_every_key_has_documented_default(self):
        for key, (_, _, help_text) in CONFIG_KEYS.items():
            assert help_text, f"{key} lacks help text"

    def test_file_then_cli_precedence(self):
        text = "refine.delta1 = 1.3\ndiffusion.T = 50\n# comment\n\n"
        cfg = parse_config(text, ["refine.delta1=1.4"], env={})
        assert cfg["refine.delta1"] == 1.4
        assert cfg["diffusion.T"] == 50

    def test_unknown_key_named_with_line(self):
        with pytest.raises(ConfigError, match=r"refine\.bogus.*line 2"):
            parse_config("refine.k = 9\nrefine.bogus = 1\n", env={})

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match=r"refine\.delta1"):
            parse_config(None, ["refine.delta1=abc"], env={})

    def test_env_seed_wins(self):
        cfg = parse_config("data.seed = 5", ["data.seed=6"], env={"BUFF_SEED": "7"})
        assert cfg["data.seed"] == 7

    def test_env_seed_validated(self):
        with pytest.raises(ConfigError, match="BUFF_SEED"):
            parse_config(None, env={"BUFF_SEED": "x"})


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("tiny_run")
    cfg = parse_config(None, tiny_overrides(run_dir), env={})
    for stage in ("train-bayes", "make-masks", "train-diff", "infer", "eval"):
        assert run_stage(stage, cfg) == 0, f"stage {stage} failed"
    return run_dir, cfg


class TestStages:
    def test_artifacts_exist(self, tiny_run):
        run_dir, _ = tiny_run
        paths = RunPaths(run_dir)
        for p in (paths.bayes_ckpt, paths.masks, paths.diffusion_ckpt, paths.metrics_csv):
            assert p.exists(), p
        assert (paths.sr_dir / "sr_0001.pgm").exists()
        assert (paths.data_dir / "train_0000.pgm").exists()

    def test_metrics_csv_layout(self, tiny_run):
        run_dir, _ = tiny_run
        lines = (run_dir / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "image_id,psnr_db,ssim,ause"
        assert len(lines) == 3

    def test_missing_prerequisite_names_artifact(self, tmp_path, capsys):
        cfg = parse_config(None, tiny_overrides(tmp_path / "fresh"), env={})
        assert run_stage("infer", cfg) == 2
        err = capsys.readouterr().err
        assert "bayes.ckpt" in err or "uncertainty checkpoint" in err
        assert "train-bayes" in err

    def test_mask_rerun_is_byte_identical(self, tiny_run):
        run_dir, cfg = tiny_run
        masks_path = RunPaths(run_dir).masks
        before = masks_path.read_bytes()
        assert run_stage("make-masks", cfg) == 0
        assert masks_path.read_bytes() == before

    def test_eval_rerun_mutates_no_earlier_artifacts(self, tiny_run):
        run_dir, cfg = tiny_run
        paths = RunPaths(run_dir)
        earlier = [paths.bayes_ckpt, paths.masks, paths.diffusion_ckpt] + sorted(
            paths.sr_dir.glob("*.pgm")
        )
        snapshot = [p.read_bytes() for p in earlier]
        assert run_stage("eval", cfg) == 0
        assert [p.read_bytes() for p in earlier] == snapshot

    def test_repeat_pipeline_byte_identical(self, tiny_run, tmp_path):
        run_dir, _ = tiny_run
        cfg2 = parse_config(None, tiny_overrides(tmp_path / "again"), env={})
        for stage in ("train-bayes", "make-masks", "train-diff", "infer", "eval"):
            assert run_stage(stage, cfg2) == 0
        a, b = RunPaths(run_dir), RunPaths(tmp_path / "again")
        for pa, pb in (
            (a.bayes_ckpt, b.bayes_ckpt),
            (a.masks, b.masks),
            (a.diffusion_ckpt, b.diffusion_ckpt),
            (a.metrics_csv, b.metrics_csv),
        ):
            assert pa.read_bytes() == pb.read_bytes(), pa.name
        for sa in sorted(a.sr_dir.glob("*.pgm")):
            assert sa.read_bytes() == (b.sr_dir / sa.name).read_bytes()


class TestSelfcheckStage:
    def test_exit_zero(self, tmp_path):
        cfg = parse_config(None, [f"paths.run_dir={tmp_path / 'sc'}"], env={})
        assert run_stage("selfcheck", cfg) == 0


class TestMain:
    def test_cli_selfcheck_and_bad_key(self, tmp_path, capsys):
        assert main(["selfcheck", f"paths.run_dir={tmp_path / 'm'}"]) == 0
        assert main(["train-bayes", "no.such.key=1"]) == 2
        assert "no.such.key" in capsys.readouterr().err

    def test_config_file_read(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("data.count = 6\n")
        run_dir = tmp_path / "from_file"
        code = main(
            ["selfcheck", "--config", str(cfg_file), f"paths.run_dir={run_dir}"]
        )
        assert code == 0
        assert (run_dir / "run.log").exists()
