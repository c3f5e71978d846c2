import json
import zipfile
import pytest

import avemo.experiment as experiment_module
from avemo.checkpoint import load_checkpoint
from avemo.cli import main as cli_main
from avemo.data import load_manifest
from avemo.experiment import (
    ExperimentConfig,
    apply_ablation,
    compare,
    load_trial_reports,
    run_experiment,
)
from avemo.model import FusionMode, ModelConfig


def synth_doc(**overrides):
    doc = dict(
        num_samples=36,
        num_speakers=6,
        num_classes=3,
        acoustic_dim=8,
        visual_dim=8,
        noise_scale=0.3,
    )
    doc.update(overrides)
    return doc


def experiment_config(**overrides):
    base = dict(
        synth=synth_doc(),
        model={
            "encoder": {"d_model": 8, "ffn_hidden": 16, "num_heads": 2,
                        "layers_acoustic": 1, "layers_visual": 1, "layers_shared": 1},
            "head_hidden": [16, 8],
        },
        train={"epochs": 2, "lr": 1e-3, "batch_size": 8},
        trials=2,
        base_seed=3,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# config and ablations
# ---------------------------------------------------------------------------

def test_config_requires_one_data_source():
    with pytest.raises(ValueError):
        ExperimentConfig()
    with pytest.raises(ValueError):
        ExperimentConfig(manifest="x.json", synth=synth_doc())


def test_apply_ablation_mapping():
    base = ModelConfig()
    assert apply_ablation(base, "none") == base
    assert apply_ablation(base, "no-residual").use_residual is False
    assert apply_ablation(base, "no-recon").use_reconstruction is False
    assert apply_ablation(base, "avg-fusion").fusion is FusionMode.AVERAGE
    with pytest.raises(ValueError):
        apply_ablation(base, "bogus")


# ---------------------------------------------------------------------------
# run_experiment artifacts
# ---------------------------------------------------------------------------

def test_run_experiment_emits_expected_artifacts(tmp_path):
    out = run_experiment(experiment_config(), tmp_path / "exp")
    assert (out / "experiment.json").is_file()
    assert (out / "run_log.json").is_file()
    assert (out / "aggregate.json").is_file()
    assert (out / "table.txt").is_file()
    assert (out / "table.csv").is_file()
    for trial in (0, 1):
        trial_dir = out / f"trial_{trial:02d}"
        assert (trial_dir / "report.json").is_file()
        assert (trial_dir / "model.ckpt").is_file()
        assert (trial_dir / "train_log.jsonl").is_file()

    # every emitted file is re-parseable by the project's own loaders
    reports = load_trial_reports(out)
    assert len(reports) == 2
    for trial in (0, 1):
        model, meta = load_checkpoint(out / f"trial_{trial:02d}" / "model.ckpt")
        assert meta["trial"] == trial
        for line in (out / f"trial_{trial:02d}" / "train_log.jsonl").read_text().splitlines():
            json.loads(line)
    aggregate = json.loads((out / "aggregate.json").read_text())
    assert aggregate["trials"] == 2
    assert "audio_visual" in aggregate["conditions"]
    assert "embedding_mean_cosine_distance" in aggregate
    table = (out / "table.txt").read_text()
    assert "audio_visual" in table and "macro_f1" in table


def test_run_experiment_is_deterministic(tmp_path):
    out_a = run_experiment(experiment_config(), tmp_path / "a")
    out_b = run_experiment(experiment_config(), tmp_path / "b")
    for rel in ("aggregate.json", "table.txt", "table.csv",
                "trial_00/report.json", "trial_00/model.ckpt", "trial_00/train_log.jsonl"):
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel


def test_avg_fusion_checkpoints_lack_fusion_group(tmp_path):
    out = run_experiment(experiment_config(ablation="avg-fusion"), tmp_path / "exp")
    with zipfile.ZipFile(out / "trial_00" / "model.ckpt") as archive:
        assert not any(name.startswith("params/fusion/") for name in archive.namelist())
        assert any(name.startswith("params/acoustic/") for name in archive.namelist())


def test_failed_trial_is_recorded_and_run_continues(tmp_path, monkeypatch):
    real_train = experiment_module.train

    def train_failing_first(dataset, splits, model_config, config, **kwargs):
        if config.seed == 3:  # base_seed + trial 0
            raise RuntimeError("injected failure")
        return real_train(dataset, splits, model_config, config, **kwargs)

    monkeypatch.setattr(experiment_module, "train", train_failing_first)
    out = run_experiment(experiment_config(), tmp_path / "exp")
    run_log = json.loads((out / "run_log.json").read_text())
    assert [f["trial"] for f in run_log["failures"]] == [0]
    assert run_log["failures"][0]["message"] == "injected failure"
    assert not (out / "trial_00" / "report.json").exists()
    assert (out / "trial_01" / "report.json").is_file()
    assert json.loads((out / "aggregate.json").read_text())["trials"] == 1


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def test_compare_directory_with_itself(tmp_path):
    out = run_experiment(experiment_config(), tmp_path / "exp")
    result = compare(out, out, "macro_f1")
    for condition, cell in result["conditions"].items():
        assert cell["p_value"] == 1.0, condition


def test_compare_distinct_configs_reports_p_values(tmp_path):
    out_full = run_experiment(experiment_config(), tmp_path / "full")
    out_ablt = run_experiment(experiment_config(ablation="no-residual"), tmp_path / "ablt")
    result = compare(out_full, out_ablt, "macro_f1")
    for cell in result["conditions"].values():
        assert 0.0 <= cell["p_value"] <= 1.0
        assert set(cell) >= {"p_value", "significant", "mean_a", "mean_b"}


def test_compare_missing_metric(tmp_path):
    out = run_experiment(experiment_config(), tmp_path / "exp")
    with pytest.raises(ValueError, match="absent"):
        compare(out, out, "mean_ccc")  # regression metric vs classification experiment


# ---------------------------------------------------------------------------
# CLI end to end
# ---------------------------------------------------------------------------

def test_cli_full_pipeline(tmp_path, capsys):
    synth_spec_path = tmp_path / "synth.json"
    synth_spec_path.write_text(json.dumps({**synth_doc(), "seed": 5}))
    data_dir = tmp_path / "data"
    assert cli_main(["synth", "--spec", str(synth_spec_path), "--out", str(data_dir)]) == 0
    assert (data_dir / "manifest.json").is_file()
    assert (data_dir / "synth_meta.json").is_file()
    dataset = load_manifest(data_dir / "manifest.json")
    assert len(dataset) == 36

    exp_config = tmp_path / "experiment.json"
    exp_config.write_text(json.dumps({
        "manifest": str(data_dir / "manifest.json"),
        "model": {
            "encoder": {"d_model": 8, "ffn_hidden": 16, "num_heads": 2,
                        "layers_acoustic": 1, "layers_visual": 1, "layers_shared": 1},
            "head_hidden": [16, 8],
        },
        "train": {"epochs": 2, "lr": 1e-3, "batch_size": 8},
        "trials": 2,
        "base_seed": 1,
    }))
    exp_dir = tmp_path / "exp"
    assert cli_main(["train", "--config", str(exp_config), "--out", str(exp_dir)]) == 0
    capsys.readouterr()

    ckpt = exp_dir / "trial_00" / "model.ckpt"
    report_path = tmp_path / "eval.json"
    assert cli_main(["eval", "--ckpt", str(ckpt), "--manifest", str(data_dir / "manifest.json"),
                     "--condition", "av", "--out", str(report_path)]) == 0
    eval_doc = json.loads(report_path.read_text())
    assert eval_doc["reports"][0]["condition"] == "audio_visual"
    assert "macro_f1" in eval_doc["reports"][0]["metrics"]

    embed_path = tmp_path / "embed.json"
    assert cli_main(["embed-analysis", "--ckpt", str(ckpt), "--manifest", str(data_dir / "manifest.json"),
                     "--out", str(embed_path)]) == 0
    embed_doc = json.loads(embed_path.read_text())
    assert embed_doc["mean_cosine_distance"] > 0.0

    cmp_path = tmp_path / "cmp.json"
    assert cli_main(["compare", "--a", str(exp_dir), "--b", str(exp_dir),
                     "--metric", "macro_f1", "--out", str(cmp_path)]) == 0
    cmp_doc = json.loads(cmp_path.read_text())
    assert all(cell["p_value"] == 1.0 for cell in cmp_doc["conditions"].values())


def test_cli_failure_emits_machine_readable_error(tmp_path, capsys):
    rc = cli_main(["eval", "--ckpt", str(tmp_path / "missing.ckpt"),
                   "--manifest", str(tmp_path / "missing.json"), "--condition", "av"])
    assert rc == 1
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "CheckpointError"
    assert "missing.ckpt" in record["message"]


def test_cli_train_overrides(tmp_path, capsys):
    exp_config = tmp_path / "experiment.json"
    exp_config.write_text(json.dumps({
        "synth": synth_doc(),
        "model": {
            "encoder": {"d_model": 8, "ffn_hidden": 16, "num_heads": 2,
                        "layers_acoustic": 1, "layers_visual": 1, "layers_shared": 1},
            "head_hidden": [16, 8],
        },
        "train": {"epochs": 1, "lr": 1e-3, "batch_size": 8},
        "trials": 3,
        "base_seed": 0,
    }))
    exp_dir = tmp_path / "exp"
    rc = cli_main(["train", "--config", str(exp_config), "--out", str(exp_dir),
                   "--trials", "1", "--ablation", "avg-fusion", "--seed", "9"])
    assert rc == 0
    capsys.readouterr()
    assert (exp_dir / "trial_00").is_dir()
    assert not (exp_dir / "trial_01").exists()
    exp_doc = json.loads((exp_dir / "experiment.json").read_text())
    assert exp_doc["config"]["ablation"] == "avg-fusion"
    assert exp_doc["config"]["base_seed"] == 9
    assert exp_doc["model"]["fusion"] == "average"
