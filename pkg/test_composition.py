#!/usr/bin/env python3
"""
Tests for background removal, concatenation, class priors, augmentation and manifests
"""

import math

import numpy as np
import pytest
import torch
from PIL import Image, ImageDraw

from conftest import make_asset
from src.composition.augment import AugmentSpec, augment, random_augment_spec
from src.composition.manifest import (
    desk_pairs,
    dump_composite,
    load_asset_manifest,
    load_image,
    load_subject_pairs,
    save_image,
    write_synthetic_assets,
)
from src.composition.pipeline import (
    compose_concat,
    extend_to_video,
    fit_to_canvas,
    remove_background,
    single_subject_sample,
    synth_class_prior,
)
from src.composition.synthetic import (
    CATALOGUE,
    WHITE,
    Pose,
    Shape,
    chroma_mask,
    draw_subject,
    get_signature,
    rasterize_shape,
)
from src.utils.errors import CheckpointError, FileIOError, InvalidArgumentError, NotFoundError


def _cleaned(class_name, token_name, seed=0):
    asset = make_asset(class_name, token_name, seed)
    return remove_background(asset.image, asset.mask, asset.class_name, asset.token_name)


def test_remove_background_with_full_mask_is_identity():
    image = np.random.default_rng(0).random((8, 6, 3)).astype(np.float32)
    asset = remove_background(image, np.ones((8, 6), dtype=bool))
    assert np.array_equal(asset.image, image)


def test_remove_background_fills_outside_white():
    image = np.random.default_rng(0).random((8, 6, 3)).astype(np.float32)
    mask = np.zeros((8, 6), dtype=bool)
    mask[:, :3] = True
    asset = remove_background(image, mask, fill=WHITE)
    assert np.all(asset.image[:, 3:] == 1.0)
    assert np.array_equal(asset.image[:, :3], image[:, :3])
    assert np.array_equal(asset.mask, mask)


def test_remove_background_errors():
    image = np.zeros((4, 4, 3), dtype=np.float32)
    with pytest.raises(InvalidArgumentError):
        remove_background(image, np.zeros((4, 4), dtype=bool))
    with pytest.raises(InvalidArgumentError):
        remove_background(image, np.ones((4, 5), dtype=bool))


def test_red_circle_area_matches_independent_rasterizer():
    height, width = 64, 48
    pose = Pose.centered(height, width)
    image, mask = draw_subject(get_signature("cat"), height, width, np.random.default_rng(0), pose)
    cy, cx = pose.center
    r = pose.radius

    canvas = Image.new("L", (width * 4, height * 4), 0)
    ImageDraw.Draw(canvas).ellipse(
        [(cx - r) * 4, (cy - r) * 4, (cx + r) * 4, (cy + r) * 4], fill=255
    )
    oracle = (np.asarray(canvas) > 0).sum() / 16.0

    assert abs(mask.sum() - oracle) / oracle < 0.05
    assert abs(mask.sum() - math.pi * r * r) / (math.pi * r * r) < 0.05
    assert np.allclose(image[mask], CATALOGUE["cat"].color, atol=1e-6)


def test_rasterize_shape_covers_every_shape():
    for shape in Shape:
        mask = rasterize_shape(shape, 32, 32, (16, 16), 10)
        assert mask.any(), shape
        assert not mask[0, 0]
    with pytest.raises(InvalidArgumentError):
        rasterize_shape(Shape.CIRCLE, 8, 8, (4, 4), 0)


def test_compose_concat_two_subjects():
    cat, dog = _cleaned("cat", "<new1>"), _cleaned("dog", "<new2>")
    sample = compose_concat([cat, dog], gutter=0)
    assert sample.image.shape == (32, 44, 3)
    assert sample.prompt == "a <new1> cat and a <new2> dog"
    assert sample.token_positions == [2, 6]
    stacked = np.stack(sample.per_subject_masks).astype(int)
    assert stacked.sum(axis=0).max() <= 1
    assert stacked[0][:, 22:].sum() == 0
    assert stacked[1][:, :22].sum() == 0

    foreground = np.any(sample.image != 1.0, axis=-1)
    assert np.array_equal(foreground, sample.foreground)


def test_compose_concat_with_gutter_and_three_subjects():
    assets = [_cleaned("person", "<new1>"), _cleaned("hat", "<new2>"), _cleaned("cat", "<new3>")]
    sample = compose_concat(assets)
    assert sample.image.shape[1] == 3 * 22 + 2 * 4
    assert sample.subject_count == 3
    assert len(sample.token_positions) == 3
    assert sample.prompt == "a <new1> person, a <new2> hat and a <new3> cat"


def test_compose_concat_errors():
    cat = _cleaned("cat", "<new1>")
    with pytest.raises(InvalidArgumentError):
        compose_concat([cat])
    with pytest.raises(InvalidArgumentError):
        compose_concat([cat, _cleaned("dog", "<new1>")])
    with pytest.raises(InvalidArgumentError):
        compose_concat([cat, _cleaned("dog", "<new2>")], layout="vertical")


def test_compose_concat_resizes_to_common_height():
    cat = _cleaned("cat", "<new1>")
    rng = np.random.default_rng(0)
    image, mask = draw_subject(get_signature("dog"), 16, 16, rng, Pose.centered(16, 16))
    dog = remove_background(image, mask, "dog", "<new2>")
    sample = compose_concat([cat, dog], gutter=0)
    assert sample.image.shape == (32, 22 + 32, 3)


def test_fit_to_canvas_keeps_masks_disjoint():
    sample = compose_concat([_cleaned("cat", "<new1>"), _cleaned("dog", "<new2>")])
    fitted = fit_to_canvas(sample, 32, 48)
    assert fitted.image.shape == (32, 48, 3)
    stacked = np.stack(fitted.per_subject_masks).astype(int)
    assert stacked.sum(axis=0).max() <= 1
    assert all(mask.any() for mask in fitted.per_subject_masks)


def test_single_subject_sample():
    sample = single_subject_sample(_cleaned("cat", "<new1>"))
    assert sample.subject_count == 1
    assert sample.prompt == "a <new1> cat"
    assert sample.token_positions == [2]


def test_synth_class_prior():
    priors = synth_class_prior(["cat", "dog"], 3, rng=np.random.default_rng(1))
    assert len(priors) == 3
    for prior in priors:
        assert prior.prompt == "a cat and a dog"
        assert "<" not in prior.prompt
        assert prior.image.shape == (32, 48, 3)
    one = synth_class_prior(["cat"], 1)
    assert len(one) == 1
    with pytest.raises(InvalidArgumentError):
        synth_class_prior(["unicorn"], 1)
    with pytest.raises(InvalidArgumentError):
        synth_class_prior(["cat"], 0)


def test_synth_class_prior_default_count():
    priors = synth_class_prior(["cat", "dog"], 200, rng=np.random.default_rng(0))
    assert len(priors) == 200
    assert len({prior.image.tobytes() for prior in priors}) > 1


def _fitted_pair():
    sample = compose_concat([_cleaned("cat", "<new1>"), _cleaned("dog", "<new2>")])
    return fit_to_canvas(sample, 32, 48)


def test_flip_twice_is_identity():
    sample = _fitted_pair()
    twice = augment(augment(sample, AugmentSpec(flip=True)), AugmentSpec(flip=True))
    assert np.array_equal(twice.image, sample.image)
    for a, b in zip(twice.per_subject_masks, sample.per_subject_masks):
        assert np.array_equal(a, b)
    assert twice.prompt == sample.prompt


def test_flip_mirrors_image_and_masks_together():
    sample = _fitted_pair()
    flipped = augment(sample, AugmentSpec(flip=True))
    assert np.array_equal(flipped.image, sample.image[:, ::-1])
    for a, b in zip(flipped.per_subject_masks, sample.per_subject_masks):
        assert np.array_equal(a, b[:, ::-1])


def test_crop_resize_scales_foreground():
    sample = _fitted_pair()
    crop = (4, 6, 24, 36)
    cropped = augment(sample, AugmentSpec(crop=crop))
    assert cropped.prompt.startswith("close up ")
    assert cropped.token_positions == [4, 8]

    top, left, height, width = crop
    for before, after in zip(sample.per_subject_masks, cropped.per_subject_masks):
        inside = before[top:top + height, left:left + width].sum()
        expected = inside * (32 * 48) / (height * width)
        assert abs(after.sum() - expected) / expected < 0.15


def test_zoom_out_prefixes_prompt():
    sample = _fitted_pair()
    zoomed = augment(sample, AugmentSpec(zoom_out=1.5))
    assert zoomed.prompt.startswith("very small ")
    for before, after in zip(sample.per_subject_masks, zoomed.per_subject_masks):
        assert after.sum() < before.sum()


def test_crop_outside_bounds_fails():
    with pytest.raises(InvalidArgumentError):
        augment(_fitted_pair(), AugmentSpec(crop=(10, 10, 30, 40)))
    with pytest.raises(ValueError):
        AugmentSpec(crop=(0, 0, 4, 4), zoom_out=1.5)


def test_random_augmentations_keep_masks_disjoint():
    sample = _fitted_pair()
    rng = np.random.default_rng(7)
    for _ in range(20):
        augmented = augment(sample, random_augment_spec(rng, 32, 48))
        stacked = np.stack(augmented.per_subject_masks).astype(int)
        assert stacked.sum(axis=0).max() <= 1
        assert len(augmented.token_positions) == augmented.subject_count


def test_extend_to_video():
    sample = _fitted_pair()
    single = extend_to_video(sample, 1)
    assert single.latent.shape == (1, 1, 32, 48, 3)
    video = extend_to_video(sample, 4)
    assert all(torch.equal(video.latent[0, 0], video.latent[0, k]) for k in range(4))
    assert float(video.latent.min()) >= -1.0 and float(video.latent.max()) <= 1.0
    for a, b in zip(video.masks, sample.per_subject_masks):
        assert np.array_equal(a, b)
    with pytest.raises(InvalidArgumentError):
        extend_to_video(sample, 0)


def test_manifest_round_trip(tmp_path):
    manifest = write_synthetic_assets(["cat", "dog"], tmp_path / "assets", seed=3)
    assets = load_asset_manifest(manifest)
    assert [(a.class_name, a.token_name) for a in assets] == [("cat", "<new1>"), ("dog", "<new2>")]
    assert all(a.mask.any() for a in assets)


def test_manifest_without_masks_uses_chroma_key(tmp_path):
    with_masks = load_asset_manifest(write_synthetic_assets(["cat"], tmp_path / "a", seed=3))
    keyed = load_asset_manifest(write_synthetic_assets(["cat"], tmp_path / "b", seed=3, with_masks=False))
    overlap = np.logical_and(with_masks[0].mask, keyed[0].mask).sum()
    union = np.logical_or(with_masks[0].mask, keyed[0].mask).sum()
    assert overlap / union > 0.95


def test_chroma_mask_separates_background():
    image, mask = draw_subject(get_signature("dog"), 32, 22, np.random.default_rng(0))
    assert np.array_equal(chroma_mask(image), mask)


def test_manifest_errors(tmp_path):
    with pytest.raises(NotFoundError):
        load_asset_manifest(tmp_path / "missing.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("cat.png cat\n", encoding="utf-8")
    with pytest.raises(InvalidArgumentError):
        load_asset_manifest(bad)
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n", encoding="utf-8")
    with pytest.raises(InvalidArgumentError):
        load_asset_manifest(empty)


def test_unreadable_and_unwritable_images_raise_file_errors(tmp_path):
    broken = tmp_path / "broken.png"
    broken.write_bytes(b"not a png")
    with pytest.raises(FileIOError) as excinfo:
        load_image(broken)
    assert not isinstance(excinfo.value, CheckpointError)
    assert excinfo.value.path == str(broken)
    assert excinfo.value.to_dict()["code"] == "io-failure"

    blocker = tmp_path / "blocker"
    blocker.write_text("file", encoding="utf-8")
    with pytest.raises(FileIOError):
        save_image(np.zeros((4, 4, 3), dtype=np.float32), blocker / "out.png")


def test_dump_composite(tmp_path):
    written = dump_composite(_fitted_pair(), tmp_path)
    assert (tmp_path / "composite.png").exists()
    assert (tmp_path / "composite_mask2.png").exists()
    assert (tmp_path / "composite.json").exists()
    assert len(written) == 3


def test_subject_pair_taxonomy():
    pairs = load_subject_pairs()
    assert len(pairs) == 25
    assert sum(1 for pair in pairs if pair.subject_count == 3) == 10
    resolved = desk_pairs()
    assert ["cat", "dog"] in resolved
    assert all(len(set(pair)) == len(pair) for pair in resolved)
