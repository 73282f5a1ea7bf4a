"""Training-time augmentations: time reversal, mirroring and joint jitter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from heatgait.data import PoseSequence
from heatgait.graph import COCO_LEFT_RIGHT

_SWAP = np.arange(17)
for _l, _r in COCO_LEFT_RIGHT:
    _SWAP[_l], _SWAP[_r] = _r, _l


@dataclass
class AugmentConfig:
    enable_reverse: bool = True
    enable_mirror: bool = True
    noise_sigma: float = 0.01
    swap_lr_on_mirror: bool = True
    rng_seed: int = 0
    apply_prob: float = 0.5

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ValueError("apply_prob must lie in [0, 1]")


def reverse_time(seq: PoseSequence) -> PoseSequence:
    return seq.with_frames(seq.frames[::-1].copy())


def mirror(seq: PoseSequence, swap_lr: bool = True) -> PoseSequence:
    """Reflect x about the sequence's mean x (the vertical axis through its centre of gravity)."""
    frames = seq.frames.copy()
    x_bar = seq.frames[..., 0].mean()
    frames[..., 0] = 2.0 * x_bar - seq.frames[..., 0]
    if swap_lr:
        frames = frames[:, _SWAP]
    return seq.with_frames(frames)


def jitter(seq: PoseSequence, sigma: float, rng) -> PoseSequence:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return seq
    frames = seq.frames.copy()
    frames[..., :2] += rng.normal(0.0, sigma, size=frames[..., :2].shape)
    return seq.with_frames(frames)


def augment_pipeline(seq: PoseSequence, config: AugmentConfig, rng) -> PoseSequence:
    """Randomly reverse, randomly mirror, then jitter."""
    # Draw both coins unconditionally so the rng stream does not depend on the flags.
    do_reverse = rng.random() < config.apply_prob
    do_mirror = rng.random() < config.apply_prob
    if config.enable_reverse and do_reverse:
        seq = reverse_time(seq)
    if config.enable_mirror and do_mirror:
        seq = mirror(seq, config.swap_lr_on_mirror)
    return jitter(seq, config.noise_sigma, rng)
