"""JND perceptual model, indexation losses, Adam and the activation loop."""

from activeindex.activation.activate import (
    FAST_PRESET,
    ActivationConfig,
    ActivationResult,
    EotConfig,
    activate,
    activate_eot,
    activate_images,
    activate_many,
    image_loss,
)
from activeindex.activation.adam import AdamState, adam_step
from activeindex.activation.jnd import jnd_luma, jnd_map
from activeindex.activation.losses import LOSS_KINDS, Target, indexation_loss, make_target

__all__ = [
    "FAST_PRESET",
    "LOSS_KINDS",
    "ActivationConfig",
    "ActivationResult",
    "AdamState",
    "EotConfig",
    "Target",
    "activate",
    "activate_eot",
    "activate_images",
    "activate_many",
    "adam_step",
    "image_loss",
    "indexation_loss",
    "jnd_luma",
    "jnd_map",
    "make_target",
]
