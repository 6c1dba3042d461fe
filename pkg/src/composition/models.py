from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..utils.errors import InvalidArgumentError


def _check_image(image: np.ndarray, name: str = "image"):
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError(f"{name} must be [H, W, 3], got {image.shape}")
    if not np.isfinite(image).all():
        raise InvalidArgumentError(f"{name} contains non-finite values")


@dataclass
class SubjectAsset:
    """One reference image, its binary foreground mask and the bound token"""
    image: np.ndarray  # [H, W, 3] float32 in [0, 1]
    mask: np.ndarray  # [H, W] bool
    class_name: str
    token_name: str

    def __post_init__(self):
        _check_image(self.image)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.image.shape[:2]:
            raise InvalidArgumentError(f"mask {self.mask.shape} does not match image {self.image.shape[:2]}")
        if not self.mask.any():
            raise InvalidArgumentError(f"empty mask for subject {self.class_name}")


@dataclass
class CompositeSample:
    """Subjects concatenated without overlap, with one mask per subject"""
    image: np.ndarray  # [H, W_total, 3]
    per_subject_masks: List[np.ndarray]
    prompt: str
    token_positions: List[int]
    token_names: List[str] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        _check_image(self.image)
        coverage = np.zeros(self.image.shape[:2], dtype=np.int32)
        for mask in self.per_subject_masks:
            if mask.shape != self.image.shape[:2]:
                raise InvalidArgumentError("subject mask does not match the composite size")
            coverage += mask.astype(np.int32)
        if (coverage > 1).any():
            raise InvalidArgumentError("subject masks overlap")

    @property
    def subject_count(self) -> int:
        return len(self.per_subject_masks)

    @property
    def foreground(self) -> np.ndarray:
        union = np.zeros(self.image.shape[:2], dtype=bool)
        for mask in self.per_subject_masks:
            union |= mask
        return union


@dataclass
class ClassPriorSample:
    """Class-generic composite with a plain class prompt"""
    image: np.ndarray
    prompt: str
    class_names: List[str] = field(default_factory=list)
    per_subject_masks: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        _check_image(self.image)
        if "<" in self.prompt:
            raise InvalidArgumentError(f"prior prompt must not contain learnable tokens: {self.prompt!r}")
