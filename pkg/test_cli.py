#!/usr/bin/env python3
"""
Tests for the pairtune command-line interface on a micro experiment
"""

import json

import numpy as np
import pandas as pd
import pytest

from src.cli.main import main, parse_bindings
from src.evaluation.report import REPORT_COLUMNS
from src.inference.export import load_frames, load_manifest
from src.utils.errors import InvalidArgumentError

MICRO_EXPERIMENT = {
    "config_version": 1,
    "seed": 0,
    "subject_classes": ["cat", "dog"],
    "steps": 2,
    "prior_image_count": 4,
    "heatmap_every": 0,
    "log_every": 1,
    "denoiser_level_channel_counts": [8, 8, 16, 16],
    "denoiser_attention_head_count": 2,
    "denoiser_text_embedding_width": 16,
    "denoiser_time_embedding_width": 16,
    "denoiser_max_frames": 8,
    "schedule_timesteps": 50,
    "sampler_steps": 2,
    "sampler_frames": 2,
}


def _write_config(directory, **overrides):
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "experiment.json"
    path.write_text(json.dumps({**MICRO_EXPERIMENT, "output_dir": "run", **overrides}), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = _write_config(root)
    assert main(["train", "--config", str(config)]) == 0
    return {"root": root, "config": config, "checkpoint": root / "run" / "checkpoint.pt"}


def test_no_arguments_shows_help():
    assert main([]) == 0


def test_unknown_command_is_a_usage_error():
    assert main(["frobnicate"]) == 2
    assert main(["train"]) == 2


def test_parse_bindings():
    assert parse_bindings(["Cat=<NEW1>", "dog = <new2>"]) == [("cat", "<new1>"), ("dog", "<new2>")]
    with pytest.raises(InvalidArgumentError):
        parse_bindings(["cat"])


def test_train_with_bad_config_key_fails_without_checkpoint(tmp_path):
    config = _write_config(tmp_path, stepz=3)
    assert main(["train", "--config", str(config)]) == 1
    assert not (tmp_path / "run" / "checkpoint.pt").exists()


def test_synth_assets(tmp_path):
    assert main(["synth-assets", "--classes", "cat", "hat", "--output", str(tmp_path)]) == 0
    lines = (tmp_path / "manifest.txt").read_text(encoding="utf-8").splitlines()
    assert lines[1:] == ["cat.png cat_mask.png cat <new1>", "hat.png hat_mask.png hat <new2>"]
    assert main(["synth-assets", "--classes", "unicorn", "--output", str(tmp_path / "bad")]) == 1


def test_train_writes_checkpoint_and_loss_log(trained):
    run = trained["root"] / "run"
    assert trained["checkpoint"].exists()
    assert len(pd.read_csv(run / "loss_log.csv")) == 2
    assert (run / "assets" / "manifest.txt").exists()


def test_generate_from_template(trained, tmp_path):
    args = [
        "generate", "--checkpoint", str(trained["checkpoint"]), "--config", str(trained["config"]),
        "--template", "1", "--bind", "cat=<new1>", "--bind", "dog=<new2>", "--seed", "3",
    ]
    assert main(args + ["--output", str(tmp_path / "a")]) == 0
    assert main(args + ["--output", str(tmp_path / "b")]) == 0

    manifest = load_manifest(tmp_path / "a")
    assert manifest.prompt == "a <new1> cat and a <new2> dog sitting on an antique table"
    assert manifest.template_id == 1
    assert manifest.frame_count == 2
    assert np.array_equal(load_frames(tmp_path / "a"), load_frames(tmp_path / "b"))


def test_generate_batch_over_templates_and_seeds(trained, tmp_path):
    args = [
        "generate", "--checkpoint", str(trained["checkpoint"]), "--all-templates",
        "--bind", "cat=<new1>", "--bind", "dog=<new2>", "--seed", "0", "1", "2", "3",
        "--steps", "1", "--frames", "1", "--output", str(tmp_path),
    ]
    assert main(args) == 0
    directories = sorted(p.name for p in tmp_path.iterdir() if p.is_dir())
    assert len(directories) == 40
    assert directories[0] == "template01_seed0"
    assert load_manifest(tmp_path / "template07_seed2").seed == 2


def test_generate_needs_a_prompt_source(trained, tmp_path):
    assert main(["generate", "--checkpoint", str(trained["checkpoint"]), "--output", str(tmp_path)]) == 1
    assert main([
        "generate", "--checkpoint", str(tmp_path / "missing.pt"), "--prompt", "a cat", "--output", str(tmp_path)
    ]) == 1


def test_eval_writes_report(trained, tmp_path):
    videos = tmp_path / "videos"
    assert main([
        "generate", "--checkpoint", str(trained["checkpoint"]), "--config", str(trained["config"]),
        "--template", "1", "--bind", "cat=<new1>", "--bind", "dog=<new2>", "--output", str(videos),
    ]) == 0
    assets = trained["root"] / "run" / "assets"
    report = tmp_path / "report.csv"
    assert main([
        "eval", "--frames", str(videos), "--references", str(assets / "cat.png"), str(assets / "dog.png"),
        "--output", str(report),
    ]) == 0
    frame = pd.read_csv(report)
    assert list(frame.columns) == ["label"] + REPORT_COLUMNS
    assert len(frame) == 1
    assert 0.0 <= frame.loc[0, "Co-occ."] <= 1.0

    assert main(["eval", "--frames", str(videos), "--output", str(report)]) == 1


def test_visualize_attention(trained, tmp_path):
    assert main(["visualize-attn", "--checkpoint", str(trained["checkpoint"]), "--output", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("step00000_l3_*_overlay.png"))) == 2
    assert len(list(tmp_path.glob("step00000_l3_*.json"))) == 2

    assert main([
        "visualize-attn", "--checkpoint", str(trained["checkpoint"]), "--level", "l9", "--output", str(tmp_path)
    ]) == 1


def test_config_command(tmp_path):
    config = _write_config(tmp_path)
    assert main(["config", str(config), "--show"]) == 0
    assert main(["config", str(tmp_path / "missing.json")]) == 1
