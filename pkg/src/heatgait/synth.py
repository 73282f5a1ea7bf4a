"""Procedural walkers on the COCO-17 skeleton.

Each subject has its own cadence, limb swing amplitudes, phases and body
proportions.  A sequence is a walk seen from one of the 11 view angles.  The
body is modelled in (lateral, forward, vertical) coordinates and rendered as
a side view; the view angle then scales the image x axis by
``view_scale(angle)`` (foreshortening, negative past 90 degrees where the
walker heads the other way).  BG damps
arm swing and occludes the arms; CL damps every swing, bulks out the body
and lowers all detector confidences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from heatgait.data import VIEW_ANGLES, PoseSequence

PRESET_VERSION = "v1"

# (lateral, forward, vertical) in torso-length units; left side is +lateral.
_BODY = np.array([
    [0.00, 0.10, 1.62],   # nose
    [0.04, 0.08, 1.66], [-0.04, 0.08, 1.66],   # eyes
    [0.08, 0.00, 1.63], [-0.08, 0.00, 1.63],   # ears
    [0.20, 0.00, 1.40], [-0.20, 0.00, 1.40],   # shoulders
    [0.23, 0.00, 1.10], [-0.23, 0.00, 1.10],   # elbows
    [0.24, 0.02, 0.82], [-0.24, 0.02, 0.82],   # wrists
    [0.12, 0.00, 0.92], [-0.12, 0.00, 0.92],   # hips
    [0.12, 0.02, 0.50], [-0.12, 0.02, 0.50],   # knees
    [0.12, 0.00, 0.08], [-0.12, 0.00, 0.08],   # ankles
])
_SWING = np.array([0.01, 0.01, 0.01, 0.01, 0.01, 0.03, 0.03, 0.15, 0.15,
                   0.30, 0.30, 0.04, 0.04, 0.20, 0.20, 0.35, 0.35])
_PHASE = np.array([0, 0, 0, 0, 0, np.pi, 0, np.pi, 0, np.pi, 0, 0, np.pi, 0, np.pi, 0, np.pi], dtype=float)
_LIFT = np.zeros(17)
_LIFT[[13, 14]] = 0.04
_LIFT[[15, 16]] = 0.08
_DEPTH = 0.15
_ARMS = np.array([7, 8, 9, 10])
_LEGS = np.array([11, 12, 13, 14, 15, 16])


@dataclass(frozen=True)
class SubjectParams:
    stride_frequency: float
    limb_amplitudes: np.ndarray
    phase_offsets: np.ndarray
    torso_scale: float
    base_confidence: float
    body_offsets: np.ndarray
    leg_ratio: float
    bob: float

    def __post_init__(self):
        if self.stride_frequency <= 0:
            raise ValueError("stride_frequency must be positive")
        if self.torso_scale <= 0:
            raise ValueError("torso_scale must be positive")


def generate_subject(seed) -> SubjectParams:
    rng = np.random.default_rng(seed)
    return SubjectParams(
        stride_frequency=float(rng.uniform(1 / 40, 1 / 22)),
        limb_amplitudes=_SWING * rng.uniform(0.5, 1.5, size=17),
        phase_offsets=_PHASE + rng.normal(0.0, 0.5, size=17),
        torso_scale=float(rng.uniform(0.85, 1.15)),
        base_confidence=float(rng.uniform(0.82, 0.92)),
        body_offsets=rng.normal(0.0, 0.07, size=(17, 3)),
        leg_ratio=float(rng.uniform(0.85, 1.15)),
        bob=float(rng.uniform(0.005, 0.04)),
    )


def view_scale(angle: int) -> float:
    s = 0.35 + 0.65 * np.sin(np.deg2rad(angle))
    return float(s if angle <= 90 else -s)


def _condition_effects(condition):
    """(arm swing factor, global swing factor, confidence shift, arm confidence shift, bulk)."""
    if condition == "NM":
        return 1.0, 1.0, 0.0, 0.0, 0.0
    if condition == "BG":
        return 0.35, 1.0, -0.03, -0.15, 0.0
    if condition == "CL":
        return 0.85, 0.9, -0.24, -0.05, 0.03
    raise ValueError(f"unknown condition {condition!r}")


def generate_sequence(params: SubjectParams, num_frames: int, condition: str = "NM", angle: int = 90,
                      rng=None, subject_id: str = "s000", sequence_index: int = 1) -> PoseSequence:
    if num_frames < 1:
        raise ValueError("num_frames must be at least 1")
    if angle not in VIEW_ANGLES:
        raise ValueError(f"angle must be one of {VIEW_ANGLES}")
    rng = rng if rng is not None else np.random.default_rng(0)
    arm_k, all_k, conf_shift, arm_conf_shift, bulk = _condition_effects(condition)

    body = _BODY + params.body_offsets
    hip_height = body[11, 2]
    body[_LEGS, 2] *= params.leg_ratio
    body[:11, 2] += hip_height * (params.leg_ratio - 1.0)
    if bulk:
        body[:, 0] *= 1.0 + bulk * np.sign(body[:, 0])

    amp = params.limb_amplitudes * all_k
    amp[_ARMS] *= arm_k
    t = np.arange(num_frames)
    phase0 = rng.uniform(0, 2 * np.pi)
    theta = 2 * np.pi * params.stride_frequency * t[:, None] + phase0 + params.phase_offsets[None, :]
    lateral = np.broadcast_to(body[:, 0], (num_frames, 17))
    forward = body[:, 1] + amp * np.sin(theta)
    vertical = (body[:, 2] + _LIFT * all_k * np.maximum(0.0, np.sin(theta + np.pi / 2))
                + params.bob * np.cos(2 * theta[:, [11]]))

    x = view_scale(angle) * (forward + _DEPTH * lateral)
    px = 100.0 * params.torso_scale * rng.uniform(0.9, 1.1)
    frames = np.empty((num_frames, 17, 3))
    frames[..., 0] = 320.0 + px * x + rng.normal(0.0, 0.8, size=(num_frames, 17))
    frames[..., 1] = 400.0 - px * vertical + rng.normal(0.0, 0.8, size=(num_frames, 17))

    level = params.base_confidence + conf_shift + rng.normal(0.0, 0.05, size=(num_frames, 1))
    conf = level + rng.normal(0.0, 0.03, size=(num_frames, 17))
    conf[:, _ARMS] += arm_conf_shift
    frames[..., 2] = np.clip(conf, 0.0, 1.0)
    return PoseSequence(frames, subject_id, condition, sequence_index, angle)


def sequence_plan(seqs_per_subject: int) -> list[tuple[str, int]]:
    """The CASIA-B style layout NM#1-6, BG#1-2, CL#1-2, truncated or extended with NM."""
    plan = [("NM", i) for i in range(1, 7)] + [("BG", 1), ("BG", 2), ("CL", 1), ("CL", 2)]
    if seqs_per_subject <= len(plan):
        return plan[:seqs_per_subject]
    return plan + [("NM", 7 + i) for i in range(seqs_per_subject - len(plan))]


def generate_corpus(num_subjects: int, seqs_per_subject: int = 10, num_frames: int = 60,
                    seed: int = 0) -> list[PoseSequence]:
    """Deterministic corpus; subject ``i`` is ``s{i+1:03d}`` with parameters from ``(seed, i)``."""
    out = []
    for i in range(num_subjects):
        params = generate_subject([seed, i])
        rng = np.random.default_rng([seed, i, 1])
        for condition, idx in sequence_plan(seqs_per_subject):
            angle = int(rng.choice(VIEW_ANGLES))
            out.append(generate_sequence(params, num_frames, condition, angle, rng,
                                         subject_id=f"s{i + 1:03d}", sequence_index=idx))
    return out
