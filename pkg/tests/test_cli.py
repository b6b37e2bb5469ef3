import json

import pytest
import yaml
from click.testing import CliRunner

from difscil.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def fast_mock_cfg(**extra):
    cfg = {
        "backbone": "mock",
        "c_agg": 12,
        "d_neck": 16,
        "d_cls": 16,
        "batch_size": 4,
        "base_epochs": 1,
        "inc_iters": 2,
        "replay_per_step": 1,
        "prompt": {"lr": 1e-2, "warmup_iters": 2, "iters": 2, "batch": 1, "n_vec": 2},
        "efficiency": {"generation_steps": 3},
    }
    cfg.update(extra)
    return cfg


def write_cfg(tmp_path, **extra):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(fast_mock_cfg(**extra)))
    return path


class TestConfigErrors:
    def test_invalid_m_exits_2_naming_constraint(self, runner, tmp_path):
        path = write_cfg(tmp_path, m=1)
        result = runner.invoke(main, ["run", "--config", str(path)])
        assert result.exit_code == 2
        assert "config error: m: timestep grid needs m > 1" in result.output

    def test_multiple_problems_each_reported(self, runner, tmp_path):
        path = write_cfg(tmp_path, m=0, beta_init=3.0)
        result = runner.invoke(main, ["train", "--config", str(path)])
        assert result.exit_code == 2
        assert result.output.count("config error:") == 2

    def test_unknown_preset_exits_2(self, runner):
        result = runner.invoke(main, ["ablate", "nonexistent"])
        assert result.exit_code == 2
        assert "config error" in result.output


class TestPrepareBackbone:
    def test_mock_backbone_written(self, runner, tmp_path):
        out = tmp_path / "bb.pt"
        result = runner.invoke(
            main, ["prepare-backbone", "--kind", "mock", "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        assert out.exists()

        from difscil.backbone import load_backbone

        bb = load_backbone(out)
        assert bb.checksum()


class TestRunCommand:
    def test_full_run_emits_artifacts(self, runner, tmp_path):
        path = write_cfg(tmp_path)
        out = tmp_path / "out"
        result = runner.invoke(
            main, ["run", "--config", str(path), "--seed", "1", "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        for name in ("results.jsonl", "summary.csv", "curve.svg", "resolved_config.yaml"):
            assert (out / name).exists()
        records = [
            json.loads(l) for l in (out / "results.jsonl").read_text().splitlines()
        ]
        assert [r["session"] for r in records] == [0, 1, 2]
        assert [r["num_classes"] for r in records] == [10, 12, 14]
        assert all(r["seed"] == 1 for r in records)
        header = (out / "summary.csv").read_text().splitlines()[0]
        assert header == "run_id,session,acc,aa,base,inc,fi"
        resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
        assert resolved["seed"] == 1 and resolved["backbone"] == "mock"

    def test_seed_override_changes_results(self, runner, tmp_path):
        path = write_cfg(tmp_path)
        outs = {}
        for seed in ("1", "1", "2"):
            out = tmp_path / f"o{len(outs)}"
            result = runner.invoke(
                main, ["run", "--config", str(path), "--seed", seed, "--out", str(out)]
            )
            assert result.exit_code == 0, result.output
            outs[len(outs)] = (out / "results.jsonl").read_bytes()
        assert outs[0] == outs[1]  # same seed, byte identical


class TestTrainEval:
    def test_train_then_eval_checkpoint(self, runner, tmp_path):
        path = write_cfg(tmp_path)
        out = tmp_path / "train_out"
        result = runner.invoke(
            main, ["train", "--config", str(path), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        ck = out / "checkpoint.pt"
        assert ck.exists()

        eval_out = tmp_path / "eval_out"
        result = runner.invoke(
            main,
            ["eval", "--checkpoint", str(ck), "--config", str(path),
             "--out", str(eval_out)],
        )
        assert result.exit_code == 0, result.output
        assert (eval_out / "summary.csv").exists()

    def test_learn_prompts_writes_store(self, runner, tmp_path):
        path = write_cfg(tmp_path)
        out = tmp_path / "prompts.pt"
        result = runner.invoke(
            main, ["learn-prompts", "--config", str(path), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output

        from difscil.prompts import PromptStore

        store = PromptStore.load(out)
        assert store.class_ids() == list(range(14))


class TestAblate:
    def test_help_lists_subcommands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for cmd in ("prepare-backbone", "learn-prompts", "train", "eval", "run", "ablate"):
            assert cmd in result.output
