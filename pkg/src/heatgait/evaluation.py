"""Gallery/probe rank-1 evaluation, Table-style result emission and ablations."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from heatgait.augment import AugmentConfig
from heatgait.data import VIEW_ANGLES, DatasetSplit, PoseSequence, split_by_subject
from heatgait.errors import EmptyGalleryError
from heatgait.model import ModelConfig, ResGCN
from heatgait.train import DataConfig, TrainConfig, eval_batch, train

PROBE_ROWS = ("NM#5-6", "BG#1-2", "CL#1-2")
CONDITION_ROW = {"NM": "NM#5-6", "BG": "BG#1-2", "CL": "CL#1-2"}


@dataclass
class EvalConfig:
    exclude_same_view: bool = False
    format: str = "markdown"


@dataclass
class EmbeddingIndex:
    embeddings: np.ndarray
    subjects: list = field(default_factory=list)
    conditions: list = field(default_factory=list)
    sequence_indices: list = field(default_factory=list)
    angles: list = field(default_factory=list)

    def __len__(self):
        return len(self.subjects)

    @classmethod
    def empty(cls, dim: int = 0):
        return cls(np.zeros((0, dim)))

    def subset(self, mask) -> "EmbeddingIndex":
        mask = np.asarray(mask, dtype=bool)
        pick = lambda xs: [x for x, m in zip(xs, mask) if m]  # noqa: E731
        return EmbeddingIndex(self.embeddings[mask], pick(self.subjects), pick(self.conditions),
                              pick(self.sequence_indices), pick(self.angles))

    def validate(self):
        if len(self):
            norms = np.linalg.norm(self.embeddings, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError("embeddings are not unit-norm")


def embed_all(sequences, model: ResGCN, data_config: DataConfig | None = None) -> EmbeddingIndex:
    """Eval-mode embeddings: preprocessing, centred window, no augmentation.

    Sequences are embedded one at a time.  Matrix products of different
    shapes may round differently, so this keeps every embedding independent
    of what else is being evaluated.
    """
    data_cfg = data_config or DataConfig()
    sequences = list(sequences)
    if not sequences:
        return EmbeddingIndex.empty(model.config.embedding_dim)
    rows = [model.embed(eval_batch([s], data_cfg)) for s in sequences]
    return EmbeddingIndex(
        np.concatenate(rows),
        [s.subject_id for s in sequences],
        [s.condition for s in sequences],
        [s.sequence_index for s in sequences],
        [s.view_angle for s in sequences],
    )


def nearest_neighbors(probe: EmbeddingIndex, gallery: EmbeddingIndex, exclude_same_view: bool = False) -> np.ndarray:
    """Index of the closest gallery entry for each probe (cosine distance, lowest index wins ties)."""
    if len(gallery) == 0:
        raise EmptyGalleryError("gallery is empty")
    if len(probe) == 0:
        return np.zeros(0, dtype=np.int64)
    dist = 1.0 - probe.embeddings @ gallery.embeddings.T
    if exclude_same_view:
        same = np.asarray(probe.angles)[:, None] == np.asarray(gallery.angles)[None, :]
        dist = np.where(same, np.inf, dist)
    return np.argmin(dist, axis=1)


@dataclass
class ResultTable:
    """Rank-1 accuracy (percent) per probe row and view angle; ``None`` where no probe exists."""

    cells: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def get(self, row, angle):
        return self.cells.get((row, angle))

    def row_mean(self, row):
        vals = [self.cells[(row, a)] for a in VIEW_ANGLES if self.cells.get((row, a)) is not None]
        return float(np.mean(vals)) if vals else None

    def rows(self):
        return [r for r in PROBE_ROWS if any((r, a) in self.cells for a in VIEW_ANGLES)] or list(PROBE_ROWS)

    def __eq__(self, other):
        if not isinstance(other, ResultTable):
            return NotImplemented
        return self.cells == other.cells

    @classmethod
    def full(cls, value: float = 0.0):
        return cls({(r, a): float(value) for r in PROBE_ROWS for a in VIEW_ANGLES})


@dataclass
class RankOneResult:
    table: ResultTable
    predictions: np.ndarray
    correct: np.ndarray
    conditions: list = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return 100.0 * float(self.correct.mean()) if len(self.correct) else float("nan")

    def condition_accuracy(self, condition_row) -> float | None:
        mask = np.array([CONDITION_ROW.get(c) == condition_row for c in self.conditions])
        if not mask.any():
            return None
        return 100.0 * float(self.correct[mask].mean())


def rank1(probe: EmbeddingIndex, gallery: EmbeddingIndex, exclude_same_view: bool = False) -> RankOneResult:
    """Nearest-neighbour identification of every probe against the full gallery."""
    nn_idx = nearest_neighbors(probe, gallery, exclude_same_view)
    predicted = [gallery.subjects[i] for i in nn_idx]
    correct = np.array([p == s for p, s in zip(predicted, probe.subjects)], dtype=bool)
    table = ResultTable()
    for row in PROBE_ROWS:
        for angle in VIEW_ANGLES:
            mask = [CONDITION_ROW.get(c) == row and a == angle for c, a in zip(probe.conditions, probe.angles)]
            mask = np.array(mask, dtype=bool)
            if mask.any():
                table.cells[(row, angle)] = 100.0 * float(correct[mask].mean())
                table.counts[(row, angle)] = int(mask.sum())
    return RankOneResult(table, nn_idx, correct, list(probe.conditions))


# -- emission ----------------------------------------------------------------------

def _fmt(v, precise):
    if v is None:
        return "-" if not precise else ""
    return repr(float(v)) if precise else f"{v:.1f}"


def emit_table(table: ResultTable, format: str = "markdown") -> str:
    header = ["Probe"] + [str(a) for a in VIEW_ANGLES] + ["Mean"]
    rows = []
    for r in table.rows():
        rows.append([r] + [table.get(r, a) for a in VIEW_ANGLES] + [table.row_mean(r)])
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [_fmt(v, True) for v in row[1:]])
        return buf.getvalue()
    if format == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for row in rows:
            lines.append("| " + " | ".join([row[0]] + [_fmt(v, False) for v in row[1:]]) + " |")
        return "\n".join(lines) + "\n"
    if format == "json":
        payload = {r: {"angles": {str(a): table.get(r, a) for a in VIEW_ANGLES}, "mean": table.row_mean(r)}
                   for r in table.rows()}
        return json.dumps(payload, indent=2) + "\n"
    raise ValueError(f"unknown format {format!r}")


def parse_table_csv(text: str) -> ResultTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    angles = [int(a) for a in header[1:-1]]
    table = ResultTable()
    for row in reader:
        if not row:
            continue
        for a, cell in zip(angles, row[1:-1]):
            if cell != "":
                table.cells[(row[0], a)] = float(cell)
    return table


# -- protocols and ablation -------------------------------------------------------------

@dataclass
class Protocol:
    train: list
    validation: list
    gallery: list
    probe: list


def is_gallery(seq: PoseSequence) -> bool:
    return seq.condition == "NM" and 1 <= seq.sequence_index <= 4


def is_probe(seq: PoseSequence) -> bool:
    return (seq.condition == "NM" and seq.sequence_index in (5, 6)) or seq.condition in ("BG", "CL")


def sequence_protocol(sequences) -> Protocol:
    """Held-out sequences of the same subjects.

    Train on NM#1-4, BG#1, CL#1; gallery is NM#1-4; probes are NM#5-6, BG#2, CL#2.
    """
    sequences = list(sequences)
    train_set = [s for s in sequences if is_gallery(s) or (s.condition in ("BG", "CL") and s.sequence_index == 1)]
    gallery = [s for s in sequences if is_gallery(s)]
    probe = [s for s in sequences if (s.condition == "NM" and s.sequence_index in (5, 6))
             or (s.condition in ("BG", "CL") and s.sequence_index == 2)]
    return Protocol(train_set, [], gallery, probe)


def subject_protocol(sequences, data_config: DataConfig) -> Protocol:
    """Disjoint subjects: train/validation subjects fit the model, test subjects are evaluated."""
    split = split_by_subject(sequences, data_config.split_ratios, data_config.split_seed)
    return Protocol(split.train, split.validation,
                    [s for s in split.test if is_gallery(s)],
                    [s for s in split.test if is_probe(s)])


def make_protocol(sequences, data_config: DataConfig) -> Protocol:
    if data_config.protocol == "sequences":
        return sequence_protocol(sequences)
    return subject_protocol(sequences, data_config)


def run_experiment(sequences, model_config: ModelConfig, train_config: TrainConfig,
                   data_config: DataConfig, augment_config: AugmentConfig | None = None,
                   eval_config: EvalConfig | None = None, out_dir=None):
    """Train on the protocol's training part and evaluate rank-1 on its probes."""
    eval_cfg = eval_config or EvalConfig()
    proto = make_protocol(sequences, data_config)
    split = DatasetSplit(proto.train, proto.validation, [])
    model, report = train(model_config, train_config, split, data_config, augment_config, out_dir=out_dir)
    gallery = embed_all(proto.gallery, model, data_config)
    probe = embed_all(proto.probe, model, data_config)
    return rank1(probe, gallery, eval_cfg.exclude_same_view), report


@dataclass
class Variant:
    name: str
    preprocessing: bool
    aggregation_mode: str


DEFAULT_VARIANTS = (
    Variant("Baseline (ResGCN)", False, "polynomial"),
    Variant("Baseline + Preprocessing", True, "polynomial"),
    Variant("Baseline + Preprocessing + Hop Extraction", True, "hop_extracted"),
)


@dataclass
class AblationRow:
    name: str
    nm: float | None
    bg: float | None
    cl: float | None
    overall: float

    @property
    def mean(self) -> float:
        vals = [v for v in (self.nm, self.bg, self.cl) if v is not None]
        return float(np.mean(vals)) if vals else math.nan


def ablation_run(sequences, variants=DEFAULT_VARIANTS, model_config: ModelConfig | None = None,
                 train_config: TrainConfig | None = None, data_config: DataConfig | None = None,
                 augment_config: AugmentConfig | None = None,
                 eval_config: EvalConfig | None = None) -> list[AblationRow]:
    """Train and evaluate each variant under the same seed and budget."""
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    data_config = data_config or DataConfig()
    rows = []
    for v in variants:
        mc = replace(model_config, aggregation_mode=v.aggregation_mode)
        dc = replace(data_config, filter_low_confidence=v.preprocessing)
        result, _ = run_experiment(sequences, mc, train_config, dc, augment_config, eval_config)
        rows.append(AblationRow(v.name, result.condition_accuracy("NM#5-6"),
                                result.condition_accuracy("BG#1-2"), result.condition_accuracy("CL#1-2"),
                                result.accuracy))
    return rows


def emit_ablation(rows, format: str = "markdown") -> str:
    if format == "json":
        return json.dumps([dict(r.__dict__, mean=r.mean) for r in rows], indent=2) + "\n"
    fmt = lambda v: "-" if v is None else f"{v:.1f}"  # noqa: E731
    lines = ["| Strategy | NM | BG | CL | Mean |", "|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r.name} | {fmt(r.nm)} | {fmt(r.bg)} | {fmt(r.cl)} | {fmt(r.mean)} |")
    return "\n".join(lines) + "\n"


# -- desk-scale benchmark ----------------------------------------------------------------

DESK_SUBJECTS = 8
DESK_SEQUENCES = 10
DESK_FRAMES = 60
DESK_EPOCHS = 30


def desk_configs(seed: int, aggregation_mode: str = "hop_extracted", epochs: int = DESK_EPOCHS):
    """Model/train/data/augment configs of the small synthetic benchmark.

    Tiny network, sequence-held-out protocol, a single learning-rate cycle of
    ``epochs`` epochs at 3e-3 with 8 subjects x 2 samples per batch.
    """
    from heatgait.model import tiny_config

    model = tiny_config(init_seed=seed, aggregation_mode=aggregation_mode)
    train_cfg = TrainConfig(epochs_per_cycle=epochs, max_epochs=epochs, initial_lr=3e-3,
                            batch_size=16, classes_per_batch=8, seed=seed)
    return model, train_cfg, DataConfig(protocol="sequences"), AugmentConfig()


def desk_run(seed: int, aggregation_mode: str = "hop_extracted", epochs: int = DESK_EPOCHS, out_dir=None):
    """Generate the seed's corpus, train and evaluate; returns ``(RankOneResult, TrainReport)``."""
    from heatgait.synth import generate_corpus

    seqs = generate_corpus(DESK_SUBJECTS, DESK_SEQUENCES, DESK_FRAMES, seed=seed)
    model, train_cfg, data_cfg, aug_cfg = desk_configs(seed, aggregation_mode, epochs)
    return run_experiment(seqs, model, train_cfg, data_cfg, aug_cfg, out_dir=out_dir)
