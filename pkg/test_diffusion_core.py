#!/usr/bin/env python3
"""
Tests for the noise schedule, the denoiser, cross-attention capture and checkpoints
"""

import math

import pytest
import torch

from conftest import micro_denoiser_config
from src.diffusion.attention import (
    ALL_LEVELS,
    AttentionLevel,
    AttentionTap,
    CrossAttention,
    cross_attention,
    level_size,
)
from src.diffusion.checkpoint import ModelBundle, load_checkpoint, save_checkpoint
from src.diffusion.denoiser import VideoDenoiser, predict_noise
from src.diffusion.schedule import add_noise, make_schedule, mix_noise, validate_latent
from src.text.vocabulary import TokenInit
from src.utils.errors import CheckpointError, InvalidArgumentError, NotFoundError


def test_linear_schedule_is_monotone_and_spans_the_noise_range():
    schedule = make_schedule(1000, "linear-beta")
    assert schedule.alpha.numel() == 1000
    assert (schedule.alpha[1:] <= schedule.alpha[:-1]).all()
    assert float(schedule.alpha_at(1)) > 0.99
    assert float(schedule.alpha_at(1000)) < 0.01


def test_cosine_schedule_and_minimal_length():
    cosine = make_schedule(1000, "cosine")
    assert (cosine.alpha[1:] <= cosine.alpha[:-1]).all()
    short = make_schedule(2)
    assert short.alpha.numel() == 2
    assert float(short.alpha_at(1)) >= float(short.alpha_at(2))


def test_schedule_rejects_short_or_unknown():
    with pytest.raises(InvalidArgumentError):
        make_schedule(1)
    with pytest.raises(InvalidArgumentError):
        make_schedule(10, "quadratic")


def test_schedule_is_deterministic():
    assert torch.equal(make_schedule(100).alpha, make_schedule(100).alpha)


def test_mix_noise_endpoints_are_exact():
    z0 = torch.randn(1, 2, 4, 4, 3)
    eps = torch.randn(1, 2, 4, 4, 3)
    assert torch.equal(mix_noise(z0, eps, 1.0), z0)
    assert torch.equal(mix_noise(z0, eps, 0.0), eps)


def test_mix_noise_closed_form():
    z0 = torch.ones(1, 1, 1, 1, 1)
    eps = torch.full((1, 1, 1, 1, 1), 0.5)
    assert math.isclose(float(mix_noise(z0, eps, 0.6)), 1.0, rel_tol=1e-6)


def test_add_noise_matches_schedule_and_validates(schedule):
    z0 = torch.randn(2, 1, 4, 4, 3)
    eps = torch.randn(2, 1, 4, 4, 3)
    t = torch.tensor([1, schedule.timesteps])
    noised = add_noise(z0, eps, t, schedule)
    alpha = schedule.alpha_at(t).float()
    expected = alpha.view(-1, 1, 1, 1, 1) * z0 + torch.sqrt(1 - alpha ** 2).view(-1, 1, 1, 1, 1) * eps
    assert torch.allclose(noised, expected, atol=1e-6)

    with pytest.raises(InvalidArgumentError):
        add_noise(z0, eps[:1], 3, schedule)
    with pytest.raises(InvalidArgumentError):
        add_noise(z0, eps, 0, schedule)
    with pytest.raises(InvalidArgumentError):
        add_noise(z0, eps, schedule.timesteps + 1, schedule)


def test_validate_latent_rejects_bad_tensors():
    with pytest.raises(InvalidArgumentError):
        validate_latent(torch.zeros(1, 4, 4, 3))
    with pytest.raises(InvalidArgumentError):
        validate_latent(torch.full((1, 1, 2, 2, 3), float("nan")))


def test_level_sizes_follow_halving_rule():
    sizes = [level_size((320, 576), level, base_stride=8) for level in ALL_LEVELS]
    assert sizes == [(40, 72), (20, 36), (10, 18), (5, 9)]
    assert level_size((32, 48), "l3", base_stride=2) == (4, 6)
    with pytest.raises(InvalidArgumentError):
        level_size((30, 48), "l4", base_stride=8)


def test_attention_level_parsing():
    assert AttentionLevel.parse("ℓ3") == AttentionLevel.L3
    assert AttentionLevel.parse(2) == AttentionLevel.L2
    assert AttentionLevel.parse("L4") == AttentionLevel.L4
    with pytest.raises(InvalidArgumentError):
        AttentionLevel.parse("l5")


def test_cross_attention_single_key_gives_weight_one():
    layer = CrossAttention(4, 6, heads=1)
    _, probs = cross_attention(layer, torch.randn(1, 1, 4), torch.randn(1, 1, 6))
    assert torch.allclose(probs, torch.ones_like(probs))


def test_cross_attention_identical_keys_split_evenly():
    layer = CrossAttention(4, 6, heads=2)
    key = torch.randn(1, 1, 6)
    _, probs = cross_attention(layer, torch.randn(1, 3, 4), key.repeat(1, 2, 1))
    assert torch.allclose(probs, torch.full_like(probs, 0.5))


def test_cross_attention_matches_brute_force_softmax():
    layer = CrossAttention(8, 5, heads=1)
    x = torch.randn(1, 3, 8)
    context = torch.randn(1, 4, 5)
    _, probs = cross_attention(layer, x, context)

    q = x[0] @ layer.to_q.weight.T
    k = context[0] @ layer.to_k.weight.T
    expected = torch.empty(3, 4)
    for i in range(3):
        scores = [float(q[i] @ k[j]) / math.sqrt(8) for j in range(4)]
        peak = max(scores)
        exps = [math.exp(s - peak) for s in scores]
        for j in range(4):
            expected[i, j] = exps[j] / sum(exps)
    assert torch.allclose(probs[0, 0], expected, atol=1e-6)


def _text(bundle, prompt="a cat and a dog", batch=1):
    return bundle.text.encode_batch([prompt] * batch)


@pytest.mark.parametrize("batch,frames,height,width", [(1, 1, 32, 48), (2, 3, 16, 32), (1, 2, 48, 16)])
def test_predict_noise_preserves_shape(micro_bundle, batch, frames, height, width):
    zt = torch.randn(batch, frames, height, width, 3)
    eps, maps = predict_noise(micro_bundle.denoiser, zt, _text(micro_bundle, batch=batch), 10)
    assert eps.shape == zt.shape
    assert maps == []


def test_tap_at_l3_has_level_size_and_normalized_rows(micro_bundle):
    zt = torch.randn(1, 2, 32, 48, 3)
    tap = AttentionTap(AttentionLevel.L3, [2, 5])
    _, maps = predict_noise(micro_bundle.denoiser, zt, _text(micro_bundle), 7, [tap])
    map_set = maps[0]
    assert tap.captured is map_set
    assert map_set.spatial_size == (4, 6)
    assert map_set.maps.shape == (1, 2, 4, 6)
    assert ((map_set.maps >= 0) & (map_set.maps <= 1)).all()
    sums = map_set.all_tokens.sum(dim=1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)


def test_tap_on_level_without_cross_attention_fails():
    bundle = ModelBundle.create(micro_denoiser_config(cross_attention_levels=["l3"]), ["cat"], max_tokens=8)
    zt = torch.randn(1, 1, 32, 48, 3)
    text = bundle.text.encode_batch(["a cat"])
    with pytest.raises(InvalidArgumentError):
        predict_noise(bundle.denoiser, zt, text, 3, [AttentionTap("l1", [1])])


def test_predict_noise_rejects_bad_inputs(micro_bundle):
    with pytest.raises(InvalidArgumentError):
        predict_noise(micro_bundle.denoiser, torch.randn(1, 1, 30, 48, 3), _text(micro_bundle), 1)
    with pytest.raises(InvalidArgumentError):
        predict_noise(micro_bundle.denoiser, torch.randn(1, 1, 32, 48, 3), torch.randn(1, 40, 7), 1)


def test_predict_noise_is_deterministic(micro_bundle):
    zt = torch.randn(1, 2, 32, 48, 3)
    text = _text(micro_bundle)
    with torch.no_grad():
        first, _ = predict_noise(micro_bundle.denoiser, zt, text, 12)
        second, _ = predict_noise(micro_bundle.denoiser, zt, text, 12)
    assert torch.equal(first, second)


def test_key_value_weights_are_addressable(micro_bundle):
    names = dict(micro_bundle.named_parameters())
    assert "denoiser.levels.2.down.spatial.cross_attn.to_k.weight" in names
    assert "denoiser.levels.2.up.temporal.cross_attn.to_v.weight" in names
    assert "denoiser.levels.2.down.temporal.self_attn.to_q.weight" in names


def test_checkpoint_round_trip(tmp_path, micro_bundle, schedule):
    micro_bundle.text.register_learnable_token("<new1>", TokenInit.CLASS_WORD_COPY, "cat")
    path = save_checkpoint(tmp_path / "model.pt", micro_bundle, schedule, {"kind": "test"})
    assert not (tmp_path / "model.pt.tmp").exists()

    loaded = load_checkpoint(path)
    assert loaded.metadata["kind"] == "test"
    assert loaded.schedule.timesteps == schedule.timesteps
    assert "<new1>" in loaded.bundle.text.learnable_tokens
    original = micro_bundle.state_dict()
    for key, value in loaded.bundle.state_dict().items():
        assert torch.equal(value, original[key]), key


def test_checkpoint_errors(tmp_path):
    with pytest.raises(NotFoundError):
        load_checkpoint(tmp_path / "missing.pt")

    torch.save({"format": "something-else"}, tmp_path / "other.pt")
    with pytest.raises(InvalidArgumentError):
        load_checkpoint(tmp_path / "other.pt")

    (tmp_path / "garbage.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "garbage.pt")


def test_denoiser_config_validation():
    with pytest.raises(ValueError):
        micro_denoiser_config(level_channel_counts=[8, 8, 16])
    with pytest.raises(ValueError):
        micro_denoiser_config(level_channel_counts=[8, 8, 15, 16])
    assert VideoDenoiser(micro_denoiser_config()).config.spatial_divisor == 16
