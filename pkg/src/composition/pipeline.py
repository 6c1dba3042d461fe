"""
Training-sample construction: background removal, side-by-side
concatenation, class-prior composites and single-frame video extension.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..text.prompts import class_prompt, training_prompt
from ..text.vocabulary import learnable_positions
from ..utils.errors import InvalidArgumentError
from .models import ClassPriorSample, CompositeSample, SubjectAsset
from .synthetic import WHITE, Color, draw_subject, get_signature, random_pose, random_variant

DEFAULT_GUTTER = 4


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an [H, W, 3] image"""
    if image.shape[:2] == (height, width):
        return image.copy()
    tensor = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)[None]
    resized = F.interpolate(tensor, size=(height, width), mode="bilinear", align_corners=False)
    return resized[0].permute(1, 2, 0).numpy().clip(0.0, 1.0).astype(np.float32)


def resize_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of a binary mask"""
    if mask.shape == (height, width):
        return mask.copy()
    tensor = torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))[None, None]
    resized = F.interpolate(tensor, size=(height, width), mode="nearest")
    return resized[0, 0].numpy() > 0.5


def remove_background(
    image: np.ndarray,
    mask: np.ndarray,
    class_name: str = "",
    token_name: str = "",
    fill: Color = WHITE,
) -> SubjectAsset:
    """Set every pixel outside the mask to ``fill``"""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise InvalidArgumentError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    if not mask.any():
        raise InvalidArgumentError("cannot remove the background with an empty mask")
    cleaned = np.array(image, dtype=np.float32, copy=True)
    cleaned[~mask] = np.asarray(fill, dtype=np.float32)
    return SubjectAsset(image=cleaned, mask=mask.copy(), class_name=class_name, token_name=token_name)


def _concatenate(
    images: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    gutter: int,
    fill: Color,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    height = max(image.shape[0] for image in images)
    scaled = []
    for image, mask in zip(images, masks):
        width = max(1, int(round(image.shape[1] * height / image.shape[0])))
        scaled.append((resize_image(image, height, width), resize_mask(mask, height, width)))

    total_width = sum(image.shape[1] for image, _ in scaled) + gutter * (len(scaled) - 1)
    canvas = np.empty((height, total_width, 3), dtype=np.float32)
    canvas[:] = np.asarray(fill, dtype=np.float32)
    placed = []
    offset = 0
    for image, mask in scaled:
        width = image.shape[1]
        canvas[:, offset:offset + width] = image
        full_mask = np.zeros((height, total_width), dtype=bool)
        full_mask[:, offset:offset + width] = mask
        placed.append(full_mask)
        offset += width + gutter
    return canvas, placed


def compose_concat(
    assets: Sequence[SubjectAsset],
    layout: str = "horizontal",
    gutter: int = DEFAULT_GUTTER,
    fill: Color = WHITE,
) -> CompositeSample:
    """Place the subjects side by side and render the training prompt"""
    if layout != "horizontal":
        raise InvalidArgumentError(f"Unknown layout: {layout}")
    if len(assets) < 2:
        raise InvalidArgumentError("concatenation needs at least 2 subjects; use single_subject_sample")
    return _build_composite(assets, gutter, fill)


def single_subject_sample(asset: SubjectAsset) -> CompositeSample:
    """One-subject sample for the no-concat and mixed training paths"""
    return _build_composite([asset], 0, WHITE)


def _build_composite(assets: Sequence[SubjectAsset], gutter: int, fill: Color) -> CompositeSample:
    tokens = [asset.token_name for asset in assets]
    if len(set(tokens)) != len(tokens):
        raise InvalidArgumentError(f"every subject needs its own token, got {tokens}")
    image, masks = _concatenate([a.image for a in assets], [a.mask for a in assets], gutter, fill)
    prompt = training_prompt([(asset.class_name, asset.token_name) for asset in assets])
    return CompositeSample(
        image=image,
        per_subject_masks=masks,
        prompt=prompt,
        token_positions=token_positions_in(prompt, tokens),
        token_names=tokens,
        class_names=[asset.class_name for asset in assets],
    )


def token_positions_in(prompt: str, token_names: Sequence[str]) -> List[int]:
    by_token = learnable_positions(prompt, token_names)
    positions = []
    for name in token_names:
        if len(by_token[name]) != 1:
            raise InvalidArgumentError(f"token {name} must appear exactly once in {prompt!r}")
        positions.append(by_token[name][0])
    return positions


def fit_to_canvas(sample, height: int, width: int, fill: Color = WHITE):
    """Aspect-preserving resize into a ``height`` x ``width`` canvas, centered"""
    src_height, src_width = sample.image.shape[:2]
    scale = min(height / src_height, width / src_width)
    new_height = max(1, min(height, int(round(src_height * scale))))
    new_width = max(1, min(width, int(round(src_width * scale))))
    top = (height - new_height) // 2
    left = (width - new_width) // 2

    canvas = np.empty((height, width, 3), dtype=np.float32)
    canvas[:] = np.asarray(fill, dtype=np.float32)
    canvas[top:top + new_height, left:left + new_width] = resize_image(sample.image, new_height, new_width)

    masks = []
    for mask in sample.per_subject_masks:
        placed = np.zeros((height, width), dtype=bool)
        placed[top:top + new_height, left:left + new_width] = resize_mask(mask, new_height, new_width)
        masks.append(placed)

    if isinstance(sample, CompositeSample):
        return CompositeSample(
            image=canvas,
            per_subject_masks=masks,
            prompt=sample.prompt,
            token_positions=list(sample.token_positions),
            token_names=list(sample.token_names),
            class_names=list(sample.class_names),
        )
    return ClassPriorSample(
        image=canvas, prompt=sample.prompt, class_names=list(sample.class_names), per_subject_masks=masks
    )


def synth_class_prior(
    class_names: Sequence[str],
    count: int,
    rng: Optional[np.random.Generator] = None,
    height: int = 32,
    width: int = 48,
    subject_height: int = 32,
    subject_width: int = 22,
    gutter: int = DEFAULT_GUTTER,
) -> List[ClassPriorSample]:
    """Class-generic composites: random colors and poses, backgrounds removed, concatenated"""
    if count < 1:
        raise InvalidArgumentError(f"prior count must be at least 1, got {count}")
    if not class_names:
        raise InvalidArgumentError("prior generation needs at least one class")
    for name in class_names:
        get_signature(name)
    rng = rng or np.random.default_rng(0)

    samples = []
    for _ in range(count):
        images, masks = [], []
        for name in class_names:
            variant = random_variant(name, rng)
            image, mask = draw_subject(
                variant, subject_height, subject_width, rng, random_pose(subject_height, subject_width, rng)
            )
            cleaned = remove_background(image, mask, class_name=name)
            images.append(cleaned.image)
            masks.append(cleaned.mask)
        image, placed = _concatenate(images, masks, gutter if len(images) > 1 else 0, WHITE)
        prior = ClassPriorSample(
            image=image, prompt=class_prompt(class_names), class_names=list(class_names), per_subject_masks=placed
        )
        samples.append(fit_to_canvas(prior, height, width))
    return samples


@dataclass
class VideoSample:
    latent: torch.Tensor  # [1, L, H, W, 3] in [-1, 1]
    masks: List[np.ndarray]


def image_to_latent(image: np.ndarray) -> torch.Tensor:
    """[H, W, 3] in [0, 1] -> [H, W, 3] in [-1, 1]"""
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)) * 2.0 - 1.0


def latent_to_image(latent: torch.Tensor) -> np.ndarray:
    return ((latent.detach().cpu().float() + 1.0) / 2.0).clamp(0.0, 1.0).numpy()


def extend_to_video(sample, frames: int = 1) -> VideoSample:
    """Replicate the sample image as every frame of an L-frame latent video"""
    if frames < 1:
        raise InvalidArgumentError(f"frame count must be at least 1, got {frames}")
    latent = image_to_latent(sample.image)
    video = latent[None, None].expand(1, frames, *latent.shape).contiguous()
    return VideoSample(latent=video, masks=list(sample.per_subject_masks))
