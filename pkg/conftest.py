"""
Shared fixtures: a micro denoiser that runs in milliseconds on CPU,
its model bundle and schedule, and synthetic subject assets.
"""

import os
import sys

import numpy as np
import pytest
import torch

# Add src to path
sys.path.insert(0, os.path.dirname(__file__))

os.environ.setdefault("LOGFIRE_CONSOLE", "false")

from src.composition.models import SubjectAsset
from src.composition.synthetic import Pose, draw_subject, get_signature
from src.diffusion.denoiser import DenoiserConfig
from src.diffusion.schedule import make_schedule
from src.training.config import TrainConfig
from src.training.pretrain import create_base_bundle

MICRO_TIMESTEPS = 50


def micro_denoiser_config(**overrides) -> DenoiserConfig:
    values = dict(
        level_channel_counts=[8, 8, 16, 16],
        attention_head_count=2,
        text_embedding_width=16,
        time_embedding_width=16,
        max_frames=8,
    )
    values.update(overrides)
    return DenoiserConfig(**values)


def make_asset(class_name: str, token_name: str, seed: int = 0) -> SubjectAsset:
    rng = np.random.default_rng(seed)
    image, mask = draw_subject(get_signature(class_name), 32, 22, rng, Pose.centered(32, 22))
    return SubjectAsset(image=image, mask=mask, class_name=class_name, token_name=token_name)


def micro_train_config(**overrides) -> TrainConfig:
    values = dict(steps=3, prior_image_count=4, heatmap_every=0, log_every=1, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture(autouse=True)
def deterministic_torch():
    torch.manual_seed(0)
    torch.set_num_threads(1)
    yield


@pytest.fixture
def micro_config() -> DenoiserConfig:
    return micro_denoiser_config()


@pytest.fixture
def schedule():
    return make_schedule(MICRO_TIMESTEPS)


@pytest.fixture
def micro_bundle(micro_config):
    return create_base_bundle(micro_config, seed=0)


@pytest.fixture
def subject_assets():
    return [make_asset("cat", "<new1>", seed=1), make_asset("dog", "<new2>", seed=2)]
