"""Supervised-contrastive training with a cyclic step-decay learning rate."""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from heatgait import nnkernel as nn
from heatgait.augment import AugmentConfig, augment_pipeline
from heatgait.data import (
    DatasetSplit,
    PoseSequence,
    filter_low_confidence,
    fixed_length,
    normalize_coordinates,
)
from heatgait.errors import (
    CheckpointError,
    EmptySequenceError,
    InsufficientClassesError,
    NoPositivesError,
    NonFinite,
)
from heatgait.model import ModelConfig, ResGCN

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs_per_cycle: int = 100
    initial_lr: float = 0.01
    lr_decay_per_cycle: float = 0.1
    min_lr: float = 1e-5
    batch_size: int = 16
    classes_per_batch: int = 4
    temperature: float = 0.07
    seed: int = 0
    aux_ce_weight: float = 0.0
    max_epochs: int | None = None

    def __post_init__(self):
        if self.min_lr > self.initial_lr:
            raise ValueError("min_lr must not exceed initial_lr")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.aux_ce_weight < 0:
            raise ValueError("aux_ce_weight must be non-negative")
        if self.batch_size % self.classes_per_batch:
            raise ValueError("batch_size must be a multiple of classes_per_batch")

    @property
    def samples_per_class(self) -> int:
        return self.batch_size // self.classes_per_batch

    def num_cycles(self) -> int:
        """Cycles up to and including the first one that runs at ``min_lr``."""
        c = 0
        while lr_schedule(c, self) > self.min_lr * (1 + 1e-9):
            c += 1
        return c + 1

    def total_epochs(self) -> int:
        full = self.epochs_per_cycle * self.num_cycles()
        return full if self.max_epochs is None else min(full, self.max_epochs)


@dataclass
class DataConfig:
    confidence_threshold: float = 0.6
    filter_low_confidence: bool = True
    num_frames: int = 60
    split_ratios: tuple = (0.48, 0.12, 0.40)
    split_seed: int = 0
    protocol: str = "subjects"

    def __post_init__(self):
        self.split_ratios = tuple(self.split_ratios)
        if self.protocol not in ("subjects", "sequences"):
            raise ValueError("protocol must be 'subjects' or 'sequences'")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    wall_time: float
    val_loss: float | None = None


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    checkpoint: str | None = None
    best_epoch: int | None = None

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


# -- loss ------------------------------------------------------------------------------

def supcon_loss(embeddings, labels, temperature: float = 0.07, strict: bool = False):
    """Supervised contrastive loss over unit-norm rows of ``embeddings``.

    For anchor ``i`` with positives ``P(i)`` (same label, excluding ``i``)
    the term is ``-mean_{p in P(i)} log softmax_{a != i}(z_i . z_a / tau)[p]``;
    the result averages over anchors that have at least one positive.
    """
    z = nn.as_tensor(embeddings)
    labels = np.asarray(labels)
    b = z.shape[0]
    if z.ndim != 2 or labels.shape != (b,):
        raise nn.ShapeMismatch("supcon_loss", f"embeddings {z.shape} vs labels {labels.shape}")
    if b < 2:
        raise ValueError("supcon_loss needs at least two samples")
    eye = np.eye(b, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & ~eye
    n_pos = pos.sum(axis=1)
    anchors = n_pos > 0
    if not anchors.all():
        if strict:
            raise NoPositivesError(f"anchors {np.flatnonzero(~anchors).tolist()} have no positive")
        warnings.warn(f"{int((~anchors).sum())} anchors without positives skipped", stacklevel=2)
    if not anchors.any():
        raise NoPositivesError("no anchor in the batch has a positive")
    logits = z.data @ z.data.T / temperature
    logits = np.where(eye, -np.inf, logits)
    logits = logits - logits.max(axis=1, keepdims=True)
    log_prob = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    per_anchor = np.zeros(b)
    per_anchor[anchors] = -(np.where(pos, log_prob, 0.0).sum(axis=1)[anchors] / n_pos[anchors])
    n_anchor = int(anchors.sum())
    loss = per_anchor[anchors].mean()

    def backward(g):
        prob = np.exp(log_prob)  # zero on the diagonal
        coef = np.zeros((b, b))
        coef[anchors] = prob[anchors] - pos[anchors] / n_pos[anchors, None]
        coef *= g / n_anchor
        return ((coef + coef.T) @ z.data / temperature,)

    return nn._result("supcon_loss", np.asarray(loss), (z,), backward)


# -- schedule / batching --------------------------------------------------------------

def lr_schedule(cycle_index: int, config: TrainConfig | None = None) -> float:
    cfg = config or TrainConfig()
    if cycle_index < 0:
        raise ValueError("cycle_index must be non-negative")
    return max(cfg.initial_lr * cfg.lr_decay_per_cycle ** cycle_index, cfg.min_lr)


def make_batches(labels, batch_size: int, classes_per_batch: int, rng):
    """Yield index arrays; each batch holds ``P`` distinct classes with ``Q`` samples each.

    Each class's samples are shuffled and cut into chunks of ``Q`` (the last
    chunk topped up by resampling that class), so every sample appears at
    least once per pass.  Batches draw from the classes with the most chunks
    left; when fewer than ``P`` classes remain, the batch is filled with
    fresh random chunks of other classes.
    """
    labels = np.asarray(labels)
    if batch_size % classes_per_batch:
        raise ValueError("batch_size must be a multiple of classes_per_batch")
    q = batch_size // classes_per_batch
    classes = np.unique(labels)
    if len(classes) < classes_per_batch:
        raise InsufficientClassesError(
            f"{len(classes)} classes available, {classes_per_batch} needed per batch")
    members = {c: np.flatnonzero(labels == c) for c in classes}
    chunks = {}
    for c in classes:
        idx = rng.permutation(members[c])
        short = (-len(idx)) % q
        if short:
            idx = np.concatenate([idx, rng.choice(members[c], size=short, replace=len(members[c]) < short)])
        chunks[c] = [idx[i:i + q] for i in range(0, len(idx), q)]
    while any(chunks.values()):
        remaining = np.array([len(chunks[c]) for c in classes])
        tiebreak = rng.random(len(classes))
        order = np.lexsort((tiebreak, -remaining))
        chosen = [classes[i] for i in order[:classes_per_batch] if remaining[i] > 0]
        batch = [chunks[c].pop() for c in chosen]
        if len(chosen) < classes_per_batch:
            others = [c for c in classes if c not in chosen]
            extra = rng.choice(len(others), size=classes_per_batch - len(chosen), replace=False)
            for i in extra:
                m = members[others[i]]
                batch.append(rng.choice(m, size=q, replace=len(m) < q))
        yield np.concatenate(batch)


# -- data preparation ------------------------------------------------------------------

def preprocess(seq: PoseSequence, data_cfg: DataConfig, strict: bool = False) -> PoseSequence:
    """Confidence filtering (if enabled) followed by coordinate normalisation.

    When filtering would remove every frame the unfiltered sequence is kept,
    unless ``strict`` is set.
    """
    if data_cfg.filter_low_confidence:
        try:
            seq = filter_low_confidence(seq, data_cfg.confidence_threshold)
        except EmptySequenceError:
            if strict:
                raise
            log.warning("filtering would empty %s/%s#%d; kept unfiltered",
                        seq.subject_id, seq.condition, seq.sequence_index)
    return normalize_coordinates(seq)


def to_array(seq: PoseSequence) -> np.ndarray:
    """``(T, V, 3)`` frames -> ``(2, T, V)`` network input."""
    return np.ascontiguousarray(seq.frames[..., :2].transpose(2, 0, 1))


def eval_batch(seqs, data_cfg: DataConfig) -> np.ndarray:
    arrs = [to_array(fixed_length(preprocess(s, data_cfg), data_cfg.num_frames, "eval")) for s in seqs]
    return np.stack(arrs) if arrs else np.zeros((0, 2, data_cfg.num_frames, 17))


def train_batch(seqs, indices, data_cfg, aug_cfg, seed, epoch, batch_no):
    out = []
    for slot, i in enumerate(indices):
        rng = np.random.default_rng([seed, epoch, batch_no, slot])
        s = fixed_length(seqs[i], data_cfg.num_frames, "train", rng)
        s = augment_pipeline(s, aug_cfg, rng)
        out.append(to_array(s))
    return np.stack(out)


# -- checkpoints ------------------------------------------------------------------------

def save_checkpoint(path, model: ResGCN, adam: nn.AdamState, meta: dict) -> None:
    arrays = dict(model.state_arrays())
    for k in sorted(adam.m):
        arrays[f"adam_m/{k}"] = adam.m[k]
        arrays[f"adam_v/{k}"] = adam.v[k]
    meta = dict(meta)
    meta["model_config"] = model.config.to_dict()
    meta["adam"] = {"learning_rate": adam.learning_rate, "beta1": adam.beta1, "beta2": adam.beta2,
                    "epsilon": adam.epsilon, "step": adam.step}
    nn.save_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[ResGCN, nn.AdamState, dict]:
    arrays, meta = nn.load_arrays(path)
    try:
        model = ResGCN(ModelConfig(**meta["model_config"]))
        model.load_state_arrays(arrays)
        adam = nn.AdamState(**meta["adam"])
    except (KeyError, TypeError, ValueError, nn.ShapeMismatch) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from None
    for k in arrays:
        if k.startswith("adam_m/"):
            name = k[len("adam_m/"):]
            adam.m[name] = arrays[k].copy()
            adam.v[name] = arrays[f"adam_v/{name}"].copy()
    return model, adam, meta


# -- training loop ----------------------------------------------------------------------

def _labels_for(seqs):
    subjects = sorted({s.subject_id for s in seqs})
    index = {s: i for i, s in enumerate(subjects)}
    return np.array([index[s.subject_id] for s in seqs]), subjects


def validation_loss(model: ResGCN, seqs, data_cfg: DataConfig, temperature: float) -> float | None:
    if not seqs:
        return None
    labels, _ = _labels_for(seqs)
    if not (np.bincount(labels) >= 2).any():
        return None
    emb = model.embed(eval_batch(seqs, data_cfg))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(supcon_loss(emb, labels, temperature).data)


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    split: DatasetSplit,
    data_config: DataConfig | None = None,
    augment_config: AugmentConfig | None = None,
    out_dir=None,
    resume=None,
    progress=None,
) -> tuple[ResGCN, TrainReport]:
    """Train from scratch (or from ``resume``) and return the final model and report.

    All randomness derives from ``train_config.seed``: per-epoch batch
    order from ``(seed, epoch)`` and per-sample augmentation from
    ``(seed, epoch, batch, slot)``, so a resumed run continues exactly as an
    uninterrupted one would.  With ``out_dir`` set, ``last.ckpt`` is written
    after every epoch and ``best.ckpt`` whenever validation loss improves
    (or every epoch when there is no usable validation set).
    """
    data_cfg = data_config or DataConfig()
    aug_cfg = augment_config or AugmentConfig()
    cfg = train_config
    if not split.train:
        raise ValueError("training split is empty")
    seqs = [preprocess(s, data_cfg) for s in split.train]
    labels, subjects = _labels_for(seqs)
    if model_config.num_classes and model_config.num_classes != len(subjects):
        raise ValueError(f"num_classes={model_config.num_classes} but {len(subjects)} training subjects")

    start_epoch = 0
    best = math.inf
    report = TrainReport()
    if resume is not None:
        model, adam, meta = load_checkpoint(resume)
        start_epoch = int(meta["epoch"])
        best = meta.get("best_val", math.inf)
        report.best_epoch = meta.get("best_epoch")
        report.epochs = [EpochRecord(**e) for e in meta.get("history", [])]
    else:
        model = ResGCN(model_config)
        adam = nn.AdamState(learning_rate=cfg.initial_lr)

    out = Path(out_dir) if out_dir is not None else None

    def meta_for(epoch):
        return {"epoch": epoch, "best_val": best, "best_epoch": report.best_epoch,
                "history": [asdict(e) for e in report.epochs],
                "data_config": asdict(data_cfg), "subjects": subjects}

    if out is not None and start_epoch == 0:
        save_checkpoint(out / "last.ckpt", model, adam, meta_for(0))
        save_checkpoint(out / "best.ckpt", model, adam, meta_for(0))
        report.checkpoint = str(out / "best.ckpt")

    for epoch in range(start_epoch, cfg.total_epochs()):
        t0 = time.perf_counter()
        adam.learning_rate = lr_schedule(epoch // cfg.epochs_per_cycle, cfg)
        rng = np.random.default_rng([cfg.seed, epoch])
        losses = []
        for batch_no, idx in enumerate(make_batches(labels, cfg.batch_size, cfg.classes_per_batch, rng)):
            x = train_batch(seqs, idx, data_cfg, aug_cfg, cfg.seed, epoch, batch_no)
            model.params.zero_grad()
            try:
                emb, logits = model.forward(nn.Tensor(x), mode="train")
                loss = supcon_loss(emb, labels[idx], cfg.temperature, strict=True)
                if cfg.aux_ce_weight and logits is not None:
                    loss = loss + nn.scale(nn.softmax_cross_entropy(logits, labels[idx]), cfg.aux_ce_weight)
                loss.backward()
                nn.adam_step(model.params, adam)
            except NonFinite as exc:
                raise NonFinite(exc.op, epoch=epoch) from None
            losses.append(float(loss.data))
        val = validation_loss(model, split.validation, data_cfg, cfg.temperature)
        rec = EpochRecord(epoch=epoch, loss=float(np.mean(losses)), lr=adam.learning_rate,
                          wall_time=time.perf_counter() - t0, val_loss=val)
        report.epochs.append(rec)
        improved = val is None or val < best
        if improved:
            if val is not None:
                best = val
            report.best_epoch = epoch
        if out is not None:
            save_checkpoint(out / "last.ckpt", model, adam, meta_for(epoch + 1))
            if improved:
                save_checkpoint(out / "best.ckpt", model, adam, meta_for(epoch + 1))
            report.checkpoint = str(out / "best.ckpt")
        msg = f"epoch {epoch:4d}  lr {rec.lr:.1e}  loss {rec.loss:.5f}"
        if val is not None:
            msg += f"  val {val:.5f}"
        log.info(msg)
        if progress is not None:
            progress(rec)
    return model, report
