"""
Deterministic per-step training batches built from subject assets.

Every batch depends only on (seed, step): the subject order, the
augmentation and the prior samples are drawn from a generator seeded with
both, so a resumed or repeated run sees exactly the same data.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import logfire
import numpy as np

from ..composition.augment import augment, random_augment_spec
from ..composition.models import ClassPriorSample, CompositeSample, SubjectAsset
from ..composition.pipeline import (
    compose_concat,
    fit_to_canvas,
    remove_background,
    single_subject_sample,
    synth_class_prior,
)
from ..utils.errors import InvalidArgumentError
from .config import AblationFlag, TrainConfig


@dataclass
class TrainingBatch:
    step: int
    composites: List[CompositeSample]
    priors: List[ClassPriorSample] = field(default_factory=list)

    @property
    def token_counts(self) -> List[int]:
        return [sample.subject_count for sample in self.composites]


class CustomizationDataset:
    """Composites of the customized subjects plus a pool of class-prior composites"""

    def __init__(
        self,
        assets: Sequence[SubjectAsset],
        config: TrainConfig,
        prior_pool: Optional[List[ClassPriorSample]] = None,
    ):
        if not assets:
            raise InvalidArgumentError("training needs at least one subject asset")
        tokens = [asset.token_name for asset in assets]
        if len(set(tokens)) != len(tokens):
            raise InvalidArgumentError(f"every subject needs its own token, got {tokens}")
        if len(assets) < 2 and not config.has(AblationFlag.NO_CONCAT):
            raise InvalidArgumentError("concatenation needs at least 2 subjects; enable no-concat for one")

        self.config = config
        if config.has(AblationFlag.NO_BACKGROUND_REMOVAL):
            self.assets = list(assets)
        else:
            self.assets = [
                remove_background(a.image, a.mask, class_name=a.class_name, token_name=a.token_name)
                for a in assets
            ]

        self.class_names = [asset.class_name for asset in assets]
        if prior_pool is None and config.beta > 0:
            prior_pool = synth_class_prior(
                self.class_names,
                config.prior_image_count,
                rng=np.random.default_rng([config.seed, 0xC1A55]),
                height=config.height,
                width=config.width,
            )
        self.prior_pool = prior_pool or []

        logfire.info(
            "Customization dataset ready",
            subjects=len(self.assets),
            classes=self.class_names,
            prior_pool=len(self.prior_pool),
            ablations=[flag.value for flag in config.ablations],
        )

    @property
    def token_names(self) -> List[str]:
        return [asset.token_name for asset in self.assets]

    def _uses_single_subject(self, step: int) -> bool:
        if self.config.has(AblationFlag.NO_CONCAT) or len(self.assets) < 2:
            return True
        # mixed training alternates: odd steps single subject, even steps concatenated
        return self.config.has(AblationFlag.SINGLE_AND_CONCAT) and step % 2 == 1

    def composite(self, rng: np.random.Generator, single: bool) -> CompositeSample:
        if single:
            asset = self.assets[int(rng.integers(0, len(self.assets)))]
            sample = single_subject_sample(asset)
        else:
            order = rng.permutation(len(self.assets))
            sample = compose_concat([self.assets[i] for i in order])
        sample = fit_to_canvas(sample, self.config.height, self.config.width)

        if self.config.augment:
            spec = random_augment_spec(rng, self.config.height, self.config.width)
            augmented = augment(sample, spec)
            # a crop may cut a small subject out entirely
            if all(mask.any() for mask in augmented.per_subject_masks):
                sample = augmented
        return sample

    def reference_composite(self) -> CompositeSample:
        """Un-augmented composite in asset order, used for attention dumps"""
        if len(self.assets) < 2:
            sample = single_subject_sample(self.assets[0])
        else:
            sample = compose_concat(self.assets)
        return fit_to_canvas(sample, self.config.height, self.config.width)

    def batch(self, step: int) -> TrainingBatch:
        rng = np.random.default_rng([self.config.seed, step])
        single = self._uses_single_subject(step)
        composites = [self.composite(rng, single) for _ in range(self.config.composites_per_step)]

        priors = []
        if self.prior_pool and self.config.priors_per_step:
            indices = rng.integers(0, len(self.prior_pool), size=self.config.priors_per_step)
            priors = [self.prior_pool[int(i)] for i in indices]
        return TrainingBatch(step=step, composites=composites, priors=priors)
