from dataclasses import dataclass

import torch

from ..diffusion.attention import AttentionMapSet  # noqa: F401  re-exported for callers
from ..utils.errors import InvalidArgumentError

DEFAULT_ETA = -1e-8
MAX_ABS_ETA = 1e-2


def check_eta(eta: float) -> float:
    if eta > 0 or abs(eta) >= MAX_ABS_ETA:
        raise InvalidArgumentError(f"eta must satisfy -{MAX_ABS_ETA} < eta <= 0, got {eta}")
    return float(eta)


@dataclass
class GuidanceMask:
    """Attention-loss targets for one subject at one level.

    ``combined`` is 1 inside the subject and ``eta`` outside; with eta = 0 it
    equals the positive mask.
    """
    positive: torch.Tensor  # [h, w] bool
    combined: torch.Tensor  # [h, w] float32
    eta: float = DEFAULT_ETA

    @property
    def spatial_size(self):
        return tuple(self.positive.shape)
