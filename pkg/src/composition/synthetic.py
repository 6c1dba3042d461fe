"""
Procedural subjects: colored, textured shapes standing in for real subjects.

Each desk class has a fixed shape; a subject's identity is its color and
texture, so fidelity can be checked with color and shape oracles.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..utils.errors import InvalidArgumentError

Color = Tuple[float, float, float]

BACKGROUND_COLOR: Color = (0.5, 0.5, 0.5)
BACKGROUND_NOISE = 0.03
WHITE: Color = (1.0, 1.0, 1.0)


class Shape(str, Enum):
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"
    DIAMOND = "diamond"
    RING = "ring"
    CROSS = "cross"
    BAR = "bar"
    ELLIPSE = "ellipse"


class Texture(str, Enum):
    SOLID = "solid"
    STRIPES = "stripes"
    DOTS = "dots"


class SubjectSignature(BaseModel):
    """Desk-scale identity of a subject"""
    class_name: str = Field(description="Class word used in prompts")
    shape: Shape = Field(description="Silhouette drawn for the class")
    color: Color = Field(description="RGB color in [0, 1]")
    texture: Texture = Field(default=Texture.SOLID, description="Surface pattern")
    category: str = Field(default="", description="Subject-pair category, e.g. pet")


CATALOGUE: Dict[str, SubjectSignature] = {
    s.class_name: s
    for s in [
        SubjectSignature(class_name="cat", shape=Shape.CIRCLE, color=(0.85, 0.12, 0.12), category="pet"),
        SubjectSignature(class_name="dog", shape=Shape.SQUARE, color=(0.12, 0.25, 0.85), category="pet"),
        SubjectSignature(class_name="person", shape=Shape.DIAMOND, color=(0.95, 0.8, 0.1), category="person"),
        SubjectSignature(class_name="hat", shape=Shape.TRIANGLE, color=(0.1, 0.65, 0.2), category="wearable item"),
        SubjectSignature(class_name="car", shape=Shape.BAR, color=(0.8, 0.1, 0.8), category="transport"),
        SubjectSignature(class_name="flower", shape=Shape.CROSS, color=(1.0, 0.5, 0.0), category="plant"),
        SubjectSignature(class_name="teddybear", shape=Shape.RING, color=(0.55, 0.33, 0.12), category="plush"),
        SubjectSignature(class_name="robot", shape=Shape.ELLIPSE, color=(0.0, 0.75, 0.8), category="toy"),
    ]
}


def get_signature(class_name: str) -> SubjectSignature:
    signature = CATALOGUE.get(class_name.lower())
    if signature is None:
        raise InvalidArgumentError(f"Unknown class: {class_name}")
    return signature


@dataclass(frozen=True)
class Pose:
    center: Tuple[float, float]  # (y, x) in pixels
    radius: float
    angle: float = 0.0  # radians

    @classmethod
    def centered(cls, height: int, width: int, fill: float = 0.42) -> "Pose":
        return cls(center=(height / 2, width / 2), radius=fill * min(height, width))


def rasterize_shape(
    shape: Shape,
    height: int,
    width: int,
    center: Tuple[float, float],
    radius: float,
    angle: float = 0.0,
) -> np.ndarray:
    """Binary mask of ``shape`` sampled at pixel centers"""
    if radius <= 0:
        raise InvalidArgumentError("radius must be positive")
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    dy, dx = yy - center[0], xx - center[1]
    cos, sin = np.cos(angle), np.sin(angle)
    u = cos * dx + sin * dy
    v = -sin * dx + cos * dy
    r = radius
    shape = Shape(shape)

    if shape == Shape.CIRCLE:
        return u ** 2 + v ** 2 <= r ** 2
    if shape == Shape.SQUARE:
        return np.maximum(np.abs(u), np.abs(v)) <= 0.85 * r
    if shape == Shape.DIAMOND:
        return np.abs(u) + np.abs(v) <= r
    if shape == Shape.TRIANGLE:
        return (v >= -r) & (v <= 0.6 * r) & (np.abs(u) <= (v + r) / 1.6)
    if shape == Shape.RING:
        dist = u ** 2 + v ** 2
        return (dist <= r ** 2) & (dist >= (0.5 * r) ** 2)
    if shape == Shape.CROSS:
        return ((np.abs(u) <= 0.3 * r) & (np.abs(v) <= r)) | ((np.abs(v) <= 0.3 * r) & (np.abs(u) <= r))
    if shape == Shape.BAR:
        return (np.abs(u) <= r) & (np.abs(v) <= 0.45 * r)
    return (u / r) ** 2 + (v / (0.6 * r)) ** 2 <= 1.0


def apply_texture(mask: np.ndarray, color: Color, texture: Texture) -> np.ndarray:
    """Per-pixel colors of a textured surface -> [H, W, 3]"""
    height, width = mask.shape
    base = np.broadcast_to(np.asarray(color, dtype=np.float32), (height, width, 3)).copy()
    yy, xx = np.mgrid[0:height, 0:width]
    if texture == Texture.STRIPES:
        base[(yy // 2) % 2 == 1] *= 0.75
    elif texture == Texture.DOTS:
        base[(yy % 4 == 1) & (xx % 4 == 1)] = 1.0
    return base


def textured_background(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    noise = rng.uniform(-BACKGROUND_NOISE, BACKGROUND_NOISE, size=(height, width, 1))
    return (np.asarray(BACKGROUND_COLOR, dtype=np.float32) + noise).astype(np.float32)


def draw_subject(
    signature: SubjectSignature,
    height: int,
    width: int,
    rng: np.random.Generator,
    pose: Optional[Pose] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Render a subject on a textured gray background -> (image, mask)"""
    pose = pose or Pose.centered(height, width)
    mask = rasterize_shape(signature.shape, height, width, pose.center, pose.radius, pose.angle)
    if not mask.any():
        raise InvalidArgumentError(f"pose leaves no visible pixels for {signature.class_name}")
    image = textured_background(height, width, rng)
    surface = apply_texture(mask, signature.color, signature.texture)
    image[mask] = surface[mask]
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask


def random_pose(height: int, width: int, rng: np.random.Generator) -> Pose:
    radius = rng.uniform(0.3, 0.45) * min(height, width)
    margin_y = min(radius, height / 2)
    margin_x = min(radius, width / 2)
    center = (
        rng.uniform(margin_y, height - margin_y) if height > 2 * margin_y else height / 2,
        rng.uniform(margin_x, width - margin_x) if width > 2 * margin_x else width / 2,
    )
    return Pose(center=center, radius=radius, angle=rng.uniform(-0.4, 0.4))


def random_variant(class_name: str, rng: np.random.Generator) -> SubjectSignature:
    """Class-generic variant: same silhouette, random color and texture"""
    signature = get_signature(class_name)
    color = tuple(float(c) for c in rng.uniform(0.05, 0.95, size=3))
    texture = Texture(rng.choice([t.value for t in Texture]))
    return signature.model_copy(update={"color": color, "texture": texture})


def chroma_mask(
    image: np.ndarray, background_color: Color = BACKGROUND_COLOR, tolerance: float = 0.1
) -> np.ndarray:
    """Foreground mask by color distance from the background color"""
    distance = np.abs(image - np.asarray(background_color, dtype=image.dtype)).max(axis=-1)
    return distance > tolerance


def estimate_background(image: np.ndarray) -> Color:
    border = np.concatenate([image[0], image[-1], image[:, 0], image[:, -1]], axis=0)
    return tuple(float(c) for c in np.median(border, axis=0))


def catalogue_classes() -> List[str]:
    return list(CATALOGUE)
