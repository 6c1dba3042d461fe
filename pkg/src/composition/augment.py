from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..utils.errors import InvalidArgumentError
from .models import CompositeSample
from .pipeline import token_positions_in, resize_image, resize_mask
from .synthetic import WHITE, Color

ZOOM_IN_PREFIX = "close up "
ZOOM_OUT_PREFIX = "very small "


class AugmentSpec(BaseModel):
    """Geometry applied identically to the image and every mask.

    ``crop`` is (top, left, height, width) in pixels and zooms in;
    ``zoom_out`` > 1 shrinks the sample onto a larger canvas at ``offset``.
    """
    flip: bool = Field(default=False, description="Mirror horizontally")
    crop: Optional[Tuple[int, int, int, int]] = Field(default=None, description="Zoom-in crop box")
    zoom_out: float = Field(default=1.0, ge=1.0, description="Canvas scale for zoom-out")
    offset: Tuple[float, float] = Field(default=(0.5, 0.5), description="Zoom-out placement (y, x) in [0, 1]")

    @model_validator(mode="after")
    def check_exclusive(self):
        if self.crop is not None and self.zoom_out > 1.0:
            raise ValueError("crop and zoom_out cannot be combined")
        if not all(0.0 <= o <= 1.0 for o in self.offset):
            raise ValueError("offset entries must lie in [0, 1]")
        return self


def augment(sample: CompositeSample, spec: AugmentSpec, fill: Color = WHITE) -> CompositeSample:
    height, width = sample.image.shape[:2]
    image = sample.image
    masks = list(sample.per_subject_masks)
    prompt = sample.prompt

    if spec.flip:
        image = image[:, ::-1].copy()
        masks = [mask[:, ::-1].copy() for mask in masks]

    if spec.crop is not None:
        top, left, crop_height, crop_width = spec.crop
        if top < 0 or left < 0 or crop_height < 1 or crop_width < 1 \
                or top + crop_height > height or left + crop_width > width:
            raise InvalidArgumentError(f"crop {spec.crop} falls outside the {height}x{width} image")
        image = resize_image(image[top:top + crop_height, left:left + crop_width], height, width)
        masks = [
            resize_mask(mask[top:top + crop_height, left:left + crop_width], height, width)
            for mask in masks
        ]
        prompt = ZOOM_IN_PREFIX + prompt
    elif spec.zoom_out > 1.0:
        canvas_height = int(round(height * spec.zoom_out))
        canvas_width = int(round(width * spec.zoom_out))
        top = int(round((canvas_height - height) * spec.offset[0]))
        left = int(round((canvas_width - width) * spec.offset[1]))
        canvas = np.empty((canvas_height, canvas_width, 3), dtype=np.float32)
        canvas[:] = np.asarray(fill, dtype=np.float32)
        canvas[top:top + height, left:left + width] = image
        image = resize_image(canvas, height, width)
        resized_masks = []
        for mask in masks:
            placed = np.zeros((canvas_height, canvas_width), dtype=bool)
            placed[top:top + height, left:left + width] = mask
            resized_masks.append(resize_mask(placed, height, width))
        masks = resized_masks
        prompt = ZOOM_OUT_PREFIX + prompt

    return CompositeSample(
        image=image,
        per_subject_masks=masks,
        prompt=prompt,
        token_positions=token_positions_in(prompt, sample.token_names),
        token_names=list(sample.token_names),
        class_names=list(sample.class_names),
    )


def random_augment_spec(
    rng: np.random.Generator,
    height: int,
    width: int,
    flip_probability: float = 0.5,
    zoom_probability: float = 0.5,
    crop_range: Tuple[float, float] = (0.75, 0.95),
    zoom_out_range: Tuple[float, float] = (1.2, 1.6),
) -> AugmentSpec:
    """Random flip plus, with ``zoom_probability``, a zoom-in crop or a zoom-out"""
    flip = bool(rng.random() < flip_probability)
    if rng.random() >= zoom_probability:
        return AugmentSpec(flip=flip)
    if rng.random() < 0.5:
        scale = rng.uniform(*crop_range)
        crop_height = max(1, int(round(height * scale)))
        crop_width = max(1, int(round(width * scale)))
        top = int(rng.integers(0, height - crop_height + 1))
        left = int(rng.integers(0, width - crop_width + 1))
        return AugmentSpec(flip=flip, crop=(top, left, crop_height, crop_width))
    return AugmentSpec(
        flip=flip,
        zoom_out=float(rng.uniform(*zoom_out_range)),
        offset=(float(rng.random()), float(rng.random())),
    )
