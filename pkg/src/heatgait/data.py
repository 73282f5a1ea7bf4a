"""Keypoint sequences: data model, JSON-Lines IO, filtering and shaping."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from heatgait.errors import (
    DegenerateSequenceError,
    EmptySequenceError,
    ParseError,
    SchemaError,
    TooFewSubjectsError,
)

log = logging.getLogger(__name__)

NUM_JOINTS = 17
CONDITIONS = ("NM", "BG", "CL")
VIEW_ANGLES = tuple(range(0, 181, 18))


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """Frames of 17 keypoints, stored as an ``(N, 17, 3)`` array of ``(x, y, confidence)``."""

    frames: np.ndarray
    subject_id: str
    condition: str = "NM"
    sequence_index: int = 1
    view_angle: int = 90

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self.frames[..., :2]

    @property
    def confidence(self) -> np.ndarray:
        return self.frames[..., 2]

    def with_frames(self, frames) -> "PoseSequence":
        return replace(self, frames=frames)

    def metadata(self) -> tuple:
        return (self.subject_id, self.condition, self.sequence_index, self.view_angle)

    def __eq__(self, other):
        if not isinstance(other, PoseSequence):
            return NotImplemented
        return (
            self.metadata() == other.metadata()
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )

    __hash__ = None

    def validate(self, record=None):
        """Raise :class:`SchemaError` if this sequence breaks the data model."""
        f = self.frames
        if f.ndim != 3 or f.shape[1:] != (NUM_JOINTS, 3):
            raise SchemaError(f"expected frames of shape (N, {NUM_JOINTS}, 3), got {f.shape}", record)
        if f.shape[0] == 0:
            raise SchemaError("sequence has no frames", record)
        if not np.isfinite(f).all():
            raise SchemaError("non-finite coordinate or confidence", record)
        c = f[..., 2]
        if (c < 0).any() or (c > 1).any():
            raise SchemaError("confidence outside [0, 1]", record)
        if self.condition not in CONDITIONS:
            raise SchemaError(f"unknown condition {self.condition!r}", record)
        if self.view_angle not in VIEW_ANGLES:
            raise SchemaError(f"view angle {self.view_angle} not in {VIEW_ANGLES}", record)
        if self.sequence_index < 1:
            raise SchemaError("sequence index must be positive", record)


def mean_confidence(frame) -> float:
    """Average joint confidence of one ``(17, 3)`` frame."""
    frame = np.asarray(frame, dtype=np.float64)
    # fsum is correctly rounded, so the threshold test is independent of summation order
    return math.fsum(frame[:, 2].tolist()) / frame.shape[0]


def frame_confidences(seq: PoseSequence) -> np.ndarray:
    return np.array([mean_confidence(f) for f in seq.frames])


def filter_low_confidence(seq: PoseSequence, threshold: float = 0.6) -> PoseSequence:
    """Drop frames whose mean joint confidence is strictly below ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    keep = frame_confidences(seq) >= threshold
    if not keep.any():
        raise EmptySequenceError(
            f"no frame of {seq.subject_id}/{seq.condition}#{seq.sequence_index} reaches confidence {threshold}"
        )
    return seq.with_frames(seq.frames[keep])


def normalize_coordinates(seq: PoseSequence) -> PoseSequence:
    """Centre on the sequence-wide mean joint position and scale to unit spread."""
    if seq.num_frames == 0:
        raise EmptySequenceError("cannot normalise an empty sequence")
    xy = seq.xy
    centered = xy - xy.reshape(-1, 2).mean(axis=0)
    std = centered.std()
    if std < 1e-9:
        raise DegenerateSequenceError("all joints coincide; cannot normalise")
    frames = seq.frames.copy()
    frames[..., :2] = centered / std
    return seq.with_frames(frames)


def fixed_length(seq: PoseSequence, target: int = 60, mode: str = "eval", rng=None) -> PoseSequence:
    """Crop or pad to ``target`` frames.

    Longer sequences give a contiguous window (random start in ``"train"``
    mode, centred in ``"eval"`` mode); shorter ones repeat the last frame.
    """
    n = seq.num_frames
    if n == 0:
        raise EmptySequenceError("cannot reshape an empty sequence")
    if n == target:
        return seq
    if n < target:
        pad = np.repeat(seq.frames[-1:], target - n, axis=0)
        return seq.with_frames(np.concatenate([seq.frames, pad]))
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs an rng")
        start = int(rng.integers(0, n - target + 1))
    elif mode == "eval":
        start = (n - target) // 2
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return seq.with_frames(seq.frames[start:start + target])


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def subjects(self, part: str) -> set[str]:
        return {s.subject_id for s in getattr(self, part)}


def split_by_subject(sequences: Iterable[PoseSequence], ratios=(0.48, 0.12, 0.40), seed: int = 0) -> DatasetSplit:
    """Partition subjects (not sequences) into train/validation/test."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} do not sum to 1")
    sequences = list(sequences)
    subjects = sorted({s.subject_id for s in sequences})
    order = np.random.default_rng(seed).permutation(len(subjects))
    subjects = [subjects[i] for i in order]
    n = len(subjects)
    n_train = math.floor(n * ratios[0])
    n_val = math.floor(n * ratios[1])
    counts = (n_train, n_val, n - n_train - n_val)
    if min(counts) == 0:
        raise TooFewSubjectsError(f"{n} subjects cannot fill a {ratios} split: {counts}")
    part_of = {}
    for i, subj in enumerate(subjects):
        part_of[subj] = 0 if i < n_train else (1 if i < n_train + n_val else 2)
    split = DatasetSplit()
    parts = (split.train, split.validation, split.test)
    for s in sequences:
        parts[part_of[s.subject_id]].append(s)
    return split


# -- JSON Lines IO -----------------------------------------------------------

def sequence_to_record(seq: PoseSequence) -> dict:
    return {
        "subject": seq.subject_id,
        "condition": seq.condition,
        "seq": seq.sequence_index,
        "angle": seq.view_angle,
        "frames": seq.frames.tolist(),
    }


def record_to_sequence(rec, record=None) -> PoseSequence:
    if not isinstance(rec, dict):
        raise SchemaError("record is not a JSON object", record)
    missing = {"subject", "condition", "seq", "angle", "frames"} - rec.keys()
    if missing:
        raise SchemaError(f"missing keys {sorted(missing)}", record)
    frames = rec["frames"]
    if not isinstance(frames, list):
        raise SchemaError("'frames' must be a list", record)
    for fi, frame in enumerate(frames):
        if not isinstance(frame, list) or len(frame) != NUM_JOINTS:
            n = len(frame) if isinstance(frame, list) else "?"
            raise SchemaError(f"frame {fi} has {n} keypoints, expected {NUM_JOINTS}", record)
        for kp in frame:
            if not isinstance(kp, list) or len(kp) != 3:
                raise SchemaError(f"frame {fi} has a keypoint that is not [x, y, c]", record)
    try:
        arr = np.array(frames, dtype=np.float64).reshape(len(frames), NUM_JOINTS, 3)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"non-numeric keypoint data ({exc})", record) from None
    seq = PoseSequence(arr, str(rec["subject"]), rec["condition"], int(rec["seq"]), int(rec["angle"]))
    seq.validate(record)
    return seq


def save_keypoint_file(seqs: Iterable[PoseSequence], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for seq in seqs:
            # json writes floats via repr, which round-trips float64 exactly
            fh.write(json.dumps(sequence_to_record(seq), separators=(",", ":")))
            fh.write("\n")


def iter_keypoint_file(path):
    """Yield ``(line_number, PoseSequence | Exception)`` without stopping at bad records."""
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, ParseError(f"invalid JSON ({exc.msg})", line=lineno)
                continue
            try:
                yield lineno, record_to_sequence(rec, record=f"{Path(path).name}:{lineno}")
            except SchemaError as exc:
                yield lineno, exc


def load_keypoint_file(path) -> list[PoseSequence]:
    out = []
    for _, item in iter_keypoint_file(path):
        if isinstance(item, Exception):
            raise item
        out.append(item)
    return out


def keypoint_files(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        return sorted(path.glob("*.jsonl"))
    return [path]


def load_dataset(path) -> list[PoseSequence]:
    """Load a single ``.jsonl`` file or every ``*.jsonl`` in a directory."""
    out = []
    for f in keypoint_files(path):
        out.extend(load_keypoint_file(f))
    return out
