"""Cosine-similarity metrics over extractor features."""

from typing import Sequence, Union

import numpy as np

from ..utils.errors import InvalidArgumentError
from .extractors import FeatureExtractor

Frames = Union[np.ndarray, Sequence[np.ndarray]]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise InvalidArgumentError("cosine similarity of a zero-norm feature")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def _frame_list(frames: Frames, minimum: int, what: str = "frame") -> list:
    frame_list = list(frames)
    if len(frame_list) < minimum:
        raise InvalidArgumentError(f"need at least {minimum} {what}(s), got {len(frame_list)}")
    return frame_list


def textual_alignment(frames: Frames, prompt: str, extractor: FeatureExtractor) -> float:
    """Mean over frames of cos(frame feature, prompt feature)"""
    frame_list = _frame_list(frames, 1)
    text = extractor.text_features(prompt)
    return float(np.mean([cosine_similarity(extractor.image_features(f), text) for f in frame_list]))


def image_alignment(frames: Frames, references: Sequence[np.ndarray], extractor: FeatureExtractor) -> float:
    """Mean over all frame x reference pairs"""
    frame_list = _frame_list(frames, 1)
    reference_list = _frame_list(references, 1, "reference image")
    reference_features = [extractor.image_features(r) for r in reference_list]
    scores = [
        cosine_similarity(extractor.image_features(frame), reference)
        for frame in frame_list
        for reference in reference_features
    ]
    return float(np.mean(scores))


def temporal_consistency(frames: Frames, extractor: FeatureExtractor) -> float:
    """Mean cosine of consecutive frame pairs"""
    frame_list = _frame_list(frames, 2)
    features = [extractor.image_features(frame) for frame in frame_list]
    return float(np.mean([cosine_similarity(a, b) for a, b in zip(features, features[1:])]))
