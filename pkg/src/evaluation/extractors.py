"""Feature extractors behind the alignment metrics, with a cached registry."""

from abc import ABC, abstractmethod
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn.functional as F

from ..composition.pipeline import remove_background
from ..composition.synthetic import CATALOGUE, WHITE, Pose, draw_subject
from ..text.vocabulary import split_words
from ..utils.errors import InvalidArgumentError

RENDER_HEIGHT = 32
RENDER_WIDTH = 22
RENDER_GUTTER = 4


def _check_frame(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise InvalidArgumentError(f"images must be [H, W, 3], got {image.shape}")
    return image


def render_class_prompt(prompt: str) -> np.ndarray:
    """Catalogue rendering of the class words of ``prompt``, side by side on white"""
    classes = [word for word in split_words(prompt) if word in CATALOGUE]
    if not classes:
        raise InvalidArgumentError(f"prompt {prompt!r} names no known class")
    rng = np.random.default_rng(0)
    pose = Pose.centered(RENDER_HEIGHT, RENDER_WIDTH)
    pieces = []
    for index, name in enumerate(classes):
        image, mask = draw_subject(CATALOGUE[name], RENDER_HEIGHT, RENDER_WIDTH, rng, pose)
        pieces.append(remove_background(image, mask).image)
        if index < len(classes) - 1:
            gutter = np.empty((RENDER_HEIGHT, RENDER_GUTTER, 3), dtype=np.float32)
            gutter[:] = np.asarray(WHITE, dtype=np.float32)
            pieces.append(gutter)
    return np.concatenate(pieces, axis=1)


def _seeded_projection(seed: int, width: int, input_width: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((width, input_width)) / np.sqrt(input_width)


class FeatureExtractor(ABC):
    """Image (and optionally text) features compared by cosine similarity"""

    name: str = "base"
    width: int = 0

    @abstractmethod
    def image_features(self, image: np.ndarray) -> np.ndarray:
        """[H, W, 3] in [0, 1] -> [width]"""

    def text_features(self, prompt: str) -> np.ndarray:
        raise InvalidArgumentError(f"extractor {self.name} has no text features")

    @property
    def supports_text(self) -> bool:
        return type(self).text_features is not FeatureExtractor.text_features


class RandomProjectionExtractor(FeatureExtractor):
    """Average-pooled colors, centered and projected by a fixed random matrix.

    Text features are the image features of the catalogue rendering of the
    prompt's class words, which puts prompts and frames in one space.
    """

    name = "random-projection"

    def __init__(self, seed: int = 0, grid: int = 8, width: int = 128):
        self.seed = seed
        self.grid = grid
        self.width = width
        self.projection = _seeded_projection(seed, width, 3 * grid * grid)

    def image_features(self, image: np.ndarray) -> np.ndarray:
        image = _check_frame(image)
        tensor = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)[None]
        pooled = F.adaptive_avg_pool2d(tensor, self.grid)[0].reshape(-1).double().numpy()
        return self.projection @ (pooled - 0.5)

    def text_features(self, prompt: str) -> np.ndarray:
        return self.image_features(render_class_prompt(prompt))


class PatchStatisticsExtractor(FeatureExtractor):
    """Per-patch color mean and spread, projected to a fixed width"""

    name = "patch-stats"

    def __init__(self, seed: int = 0, grid: int = 4, width: int = 128):
        self.seed = seed
        self.grid = grid
        self.width = width
        self.projection = _seeded_projection(seed + 1, width, 6 * grid * grid)

    def image_features(self, image: np.ndarray) -> np.ndarray:
        image = _check_frame(image)
        tensor = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)[None].double()
        mean = F.adaptive_avg_pool2d(tensor, self.grid)
        spread = (F.adaptive_avg_pool2d(tensor ** 2, self.grid) - mean ** 2).clamp(min=0).sqrt()
        stats = torch.cat([mean - 0.5, spread], dim=1)[0].reshape(-1).numpy()
        return self.projection @ stats


class ExtractorRegistry:
    """Registry of extractor instances"""

    def __init__(self):
        self._extractors: Dict[str, FeatureExtractor] = {}

    def register(self, name: str, extractor: FeatureExtractor):
        self._extractors[name] = extractor

    def get(self, name: str) -> Optional[FeatureExtractor]:
        return self._extractors.get(name)

    def list_extractors(self) -> List[str]:
        return list(self._extractors.keys())


# Global extractor registry instance
extractor_registry = ExtractorRegistry()

EXTRACTOR_TYPES = {
    RandomProjectionExtractor.name: RandomProjectionExtractor,
    PatchStatisticsExtractor.name: PatchStatisticsExtractor,
}


def create_extractor(name: str, seed: int = 0) -> FeatureExtractor:
    """Build (or reuse) the extractor registered as ``name`` for this seed"""
    extractor_type = EXTRACTOR_TYPES.get(name)
    if extractor_type is None:
        raise InvalidArgumentError(f"Unknown extractor: {name}. Choose from {sorted(EXTRACTOR_TYPES)}")
    key = f"{name}:{seed}"
    extractor = extractor_registry.get(key)
    if extractor is None:
        extractor = extractor_type(seed=seed)
        extractor_registry.register(key, extractor)
    return extractor
