#!/usr/bin/env python3
"""
Tests for classifier-free guidance, the DDIM and DPM-Solver++ updates,
video sampling and frame export
"""

import json
import os
import subprocess
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest
import torch

from src.diffusion.checkpoint import LoadedCheckpoint
from src.diffusion.denoiser import predict_noise
from src.diffusion.schedule import add_noise
from src.inference.config import SamplerConfig, SolverKind
from src.inference.export import FrameManifest, export_frames, load_frames, load_manifest
from src.inference.sampler import (
    DPMSolverState,
    cfg_predict,
    combine_guidance,
    ddim_step,
    dpm_solver_step,
    sample_video,
    timestep_subset,
)
from src.utils.errors import CheckpointError, FileIOError, InvalidArgumentError, NotFoundError

ROOT = Path(__file__).parent


@pytest.fixture
def checkpoint(micro_bundle, schedule):
    return LoadedCheckpoint(bundle=micro_bundle, schedule=schedule, path=Path("in-memory"))


def test_guidance_scale_one_returns_conditional():
    uncond, cond = torch.randn(2, 3), torch.randn(2, 3)
    assert torch.equal(combine_guidance(uncond, cond, 1.0), cond)
    assert torch.equal(combine_guidance(cond, cond, 7.5), cond)


def test_guidance_extrapolates():
    out = combine_guidance(torch.ones(1), torch.full((1,), 2.0), 7.5)
    assert float(out) == pytest.approx(8.5)
    assert float(combine_guidance(torch.ones(1), torch.full((1,), 2.0), 0.0)) == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        combine_guidance(torch.ones(1), torch.ones(1), -1.0)


def test_cfg_predict_combines_both_branches(micro_bundle):
    zt = torch.randn(1, 1, 32, 48, 3)
    cond = micro_bundle.text.encode_batch(["a cat"])
    uncond = micro_bundle.text.encode_empty().embedding[None]
    denoiser = micro_bundle.denoiser.eval()
    with torch.no_grad():
        expected_cond, _ = predict_noise(denoiser, zt, cond, 20)
        expected_uncond, _ = predict_noise(denoiser, zt, uncond, 20)
        guided = cfg_predict(denoiser, zt, 20, cond, uncond, 3.0)
        plain = cfg_predict(denoiser, zt, 20, cond, uncond, 1.0)
    assert torch.allclose(guided, expected_uncond + 3.0 * (expected_cond - expected_uncond), atol=1e-6)
    assert torch.allclose(plain, expected_cond, atol=1e-6)
    with pytest.raises(InvalidArgumentError):
        cfg_predict(denoiser, zt, 20, cond, uncond, -0.5)


def test_timestep_subset():
    subset = timestep_subset(1000, 50)
    assert len(subset) == 50
    assert subset[0] == 981 and subset[-1] == 1
    assert all(a > b for a, b in zip(subset, subset[1:]))
    assert timestep_subset(50, 50) == list(range(50, 0, -1))
    with pytest.raises(InvalidArgumentError):
        timestep_subset(10, 0)
    with pytest.raises(InvalidArgumentError):
        timestep_subset(10, 11)


def _noised(schedule, t=30):
    x0 = torch.rand(1, 2, 4, 4, 3) * 1.8 - 0.9
    eps = torch.randn(1, 2, 4, 4, 3)
    return x0, eps, add_noise(x0, eps, t, schedule)


def test_ddim_with_true_noise_recovers_clean_latent(schedule):
    x0, eps, zt = _noised(schedule)
    assert torch.allclose(ddim_step(zt, eps, 30, 0, schedule), x0, atol=1e-4)
    assert torch.allclose(ddim_step(zt, eps, 30, 10, schedule), add_noise(x0, eps, 10, schedule), atol=1e-4)


def test_dpm_solver_first_step_equals_ddim(schedule):
    x0, eps, zt = _noised(schedule)
    state = DPMSolverState()
    dpm = dpm_solver_step(zt, eps, 30, 20, schedule, state, clip=False)
    ddim = ddim_step(zt, eps, 30, 20, schedule, clip=False)
    assert torch.allclose(dpm, ddim, atol=1e-5)
    assert state.last_x0 is not None and state.last_h is not None


def test_dpm_solver_second_order_is_exact_for_consistent_noise(schedule):
    x0, eps, zt = _noised(schedule)
    state = DPMSolverState()
    z = dpm_solver_step(zt, eps, 30, 20, schedule, state)
    z = dpm_solver_step(z, eps, 20, 10, schedule, state)
    assert torch.allclose(z, add_noise(x0, eps, 10, schedule), atol=1e-4)
    final = dpm_solver_step(z, eps, 10, 0, schedule, state)
    assert torch.allclose(final, x0, atol=1e-4)


def test_sample_video_shape_range_and_determinism(checkpoint):
    sampler = SamplerConfig(steps=3, frames=2, seed=4)
    first = sample_video("a cat and a dog", sampler, checkpoint)
    second = sample_video("a cat and a dog", sampler, checkpoint)
    assert first.shape == (2, 32, 48, 3)
    assert float(first.min()) >= 0.0 and float(first.max()) <= 1.0
    assert torch.equal(first, second)

    other = sample_video("a cat and a dog", sampler.model_copy(update={"seed": 5}), checkpoint)
    assert not torch.equal(first, other)


def test_sample_single_frame_with_dpm_solver(checkpoint):
    sampler = SamplerConfig(steps=2, frames=1, solver=SolverKind.DPM_SOLVER_PP)
    frames = sample_video("a cat", sampler, checkpoint)
    assert frames.shape == (1, 32, 48, 3)
    assert torch.isfinite(frames).all()


def test_sample_video_errors(checkpoint):
    with pytest.raises(InvalidArgumentError):
        sample_video("a <new9> cat", SamplerConfig(steps=2, frames=1), checkpoint)
    with pytest.raises(InvalidArgumentError):
        sample_video("a cat", SamplerConfig(steps=2, frames=1, height=40), checkpoint)
    with pytest.raises(InvalidArgumentError):
        sample_video("a cat", SamplerConfig(steps=100, frames=1), checkpoint)


def test_sampling_path_never_imports_mask_or_training_code():
    script = textwrap.dedent(f"""
        import importlib.abc
        import sys
        from pathlib import Path

        BLOCKED = ("src.attention_control", "src.composition", "src.training")

        class Blocker(importlib.abc.MetaPathFinder):
            def find_spec(self, name, path, target=None):
                if name.startswith(BLOCKED):
                    raise ImportError("blocked " + name)
                return None

        sys.meta_path.insert(0, Blocker())
        sys.path.insert(0, {str(ROOT)!r})

        from src.diffusion.checkpoint import LoadedCheckpoint, ModelBundle
        from src.diffusion.denoiser import DenoiserConfig
        from src.diffusion.schedule import make_schedule
        from src.inference.config import SamplerConfig
        from src.inference.export import FrameManifest, export_frames
        from src.inference.sampler import sample_video

        config = DenoiserConfig(
            level_channel_counts=[8, 8, 16, 16], attention_head_count=2,
            text_embedding_width=16, time_embedding_width=16, max_frames=8,
        )
        bundle = ModelBundle.create(config, ["a", "cat"], max_tokens=8)
        checkpoint = LoadedCheckpoint(bundle=bundle, schedule=make_schedule(50), path=Path("."))
        frames = sample_video("a cat", SamplerConfig(steps=2, frames=1), checkpoint)
        print(tuple(frames.shape))
        print(any(name.startswith(BLOCKED) for name in sys.modules))
    """)
    result = subprocess.run(
        [sys.executable, "-c", script],
        capture_output=True, text=True, timeout=300,
        env={**os.environ, "LOGFIRE_CONSOLE": "false"},
    )
    assert result.returncode == 0, result.stderr
    assert result.stdout.split() == ["(1,", "32,", "48,", "3)", "False"]


def test_export_and_load_frames(tmp_path):
    frames = torch.rand(3, 32, 48, 3)
    manifest = FrameManifest(prompt="a <new1> cat", seed=2, template_id=1, bindings=[["cat", "<new1>"]])
    written = export_frames(frames, tmp_path, manifest)
    assert [p.name for p in written] == ["frame_0000.png", "frame_0001.png", "frame_0002.png", "manifest.json"]

    loaded = load_frames(tmp_path)
    assert loaded.shape == (3, 32, 48, 3)
    assert np.allclose(loaded, frames.numpy(), atol=0.5 / 255 + 1e-6)

    stored = load_manifest(tmp_path)
    assert stored.frame_count == 3
    assert (stored.height, stored.width) == (32, 48)
    assert stored.bindings == [["cat", "<new1>"]]
    assert json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))["prompt"] == "a <new1> cat"


def test_export_replaces_stale_frames(tmp_path):
    manifest = FrameManifest(prompt="a cat", seed=0)
    export_frames(torch.rand(3, 16, 16, 3), tmp_path, manifest)
    export_frames(torch.rand(1, 16, 16, 3), tmp_path, manifest)
    assert sorted(p.name for p in tmp_path.glob("frame_*.png")) == ["frame_0000.png"]


def test_export_and_load_errors(tmp_path):
    with pytest.raises(InvalidArgumentError):
        export_frames(torch.rand(32, 48, 3), tmp_path, FrameManifest(prompt="a cat", seed=0))
    with pytest.raises(NotFoundError):
        load_frames(tmp_path / "empty")
    with pytest.raises(NotFoundError):
        load_manifest(tmp_path / "empty")


def test_export_into_a_file_path_raises_file_error(tmp_path):
    blocker = tmp_path / "video"
    blocker.write_text("not a directory", encoding="utf-8")
    with pytest.raises(FileIOError) as excinfo:
        export_frames(torch.rand(1, 16, 16, 3), blocker, FrameManifest(prompt="a cat", seed=0))
    assert not isinstance(excinfo.value, CheckpointError)
    assert excinfo.value.path == str(blocker)
