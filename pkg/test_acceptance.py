#!/usr/bin/env python3
"""
End-to-end desk runs with the shipped configuration: a full fine-tuning run,
the co-occurrence trend against training without concatenation, and the
attention IoU trend against training without the positive attention term.

Skipped unless PAIRTUNE_RUN_SLOW=1.
"""

import os
from pathlib import Path

import pandas as pd
import pytest
import torch

from src.diffusion.checkpoint import load_checkpoint
from src.diffusion.schedule import make_schedule
from src.evaluation.harness import run_ablation
from src.training.ablations import AblationRow
from src.training.config import AblationFlag
from src.training.experiment import train_from_experiment
from src.training.pretrain import run_pretraining
from src.training.trainer import select_trainable
from src.utils.experiment_config import load_experiment_config

ROOT = Path(__file__).parent

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(os.environ.get("PAIRTUNE_RUN_SLOW") != "1", reason="set PAIRTUNE_RUN_SLOW=1"),
]


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    config = load_experiment_config(ROOT / "config" / "experiment.json", {"output_dir": str(root)})
    schedule = make_schedule(config.schedule.timesteps, config.schedule.kind)
    base = run_pretraining(config.pretrain, config.denoiser, schedule, root / "base.pt")
    return config.model_copy(update={"base_checkpoint": base, "eval_seeds": [0, 1]})


@pytest.fixture(scope="module")
def trend_reports(experiment):
    rows = [
        AblationRow(label="full"),
        AblationRow(label="w/o concat", ablations=[AblationFlag.NO_CONCAT]),
        AblationRow(label="w/o pos. attn.", ablations=[AblationFlag.NO_POS_ATTN]),
    ]
    return {report.label: report for report in run_ablation(rows, experiment)}


def test_full_run_keeps_frozen_parameters_bit_identical(experiment):
    result = train_from_experiment(experiment, experiment.output_dir / "freeze")
    assert result.steps == 500
    assert len(pd.read_csv(result.loss_log_path)) == 500

    base = load_checkpoint(experiment.base_checkpoint).bundle
    trained = load_checkpoint(result.checkpoint_path).bundle
    trainable = select_trainable(trained)
    trained_params = dict(trained.named_parameters())

    checked = 0
    for name, value in base.named_parameters():
        if name in trainable:
            continue
        assert torch.equal(trained_params[name], value), name
        checked += 1
    assert any(".temporal.self_attn." in name for name, _ in base.named_parameters() if name not in trainable)
    assert checked > len(trainable.cross_attention_names)


def test_cooccurrence_exceeds_training_without_concat(trend_reports):
    full = trend_reports["full"]
    without_concat = trend_reports["w/o concat"]
    assert full.video_count == 20
    assert full.cooccurrence >= 0.8
    assert full.cooccurrence - without_concat.cooccurrence >= 0.2


def test_attention_iou_exceeds_training_without_positive_term(trend_reports):
    full = trend_reports["full"].attention_iou
    without_positive = trend_reports["w/o pos. attn."].attention_iou
    assert set(full) == {"<new1>", "<new2>"}
    mean_full = sum(full.values()) / len(full)
    mean_without = sum(without_positive.values()) / len(without_positive)
    assert mean_full - mean_without >= 0.15
