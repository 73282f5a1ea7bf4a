"""ResGCN with hop-extracted multi-scale spatial graph convolution."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from heatgait import nnkernel as nn
from heatgait.errors import ShapeMismatch
from heatgait.graph import SkeletonGraph, aggregation_operators, coco17

AGGREGATION_MODES = ("hop_extracted", "polynomial")


@dataclass
class BlockSpec:
    kind: str
    in_channels: int
    out_channels: int
    temporal_kernel: int = 9
    temporal_stride: int = 1
    residual: bool = True
    bottleneck_reduction: int = 4

    def __post_init__(self):
        if self.kind not in ("basic", "bottleneck"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.temporal_kernel % 2 != 1:
            raise ValueError("temporal_kernel must be odd")
        if self.kind == "bottleneck" and self.out_channels % self.bottleneck_reduction:
            raise ValueError(
                f"reduction {self.bottleneck_reduction} does not divide out_channels {self.out_channels}")

    @property
    def inner_channels(self) -> int:
        if self.kind == "basic":
            return self.out_channels
        return self.out_channels // self.bottleneck_reduction


def default_blocks() -> list[BlockSpec]:
    return [
        BlockSpec("basic", 2, 64),
        BlockSpec("basic", 64, 64),
        BlockSpec("bottleneck", 64, 128, temporal_stride=2, bottleneck_reduction=4),
        BlockSpec("bottleneck", 128, 256, temporal_stride=2, bottleneck_reduction=4),
    ]


@dataclass
class ModelConfig:
    max_scale: int = 3
    input_channels: int = 2
    num_frames: int = 60
    num_vertices: int = 17
    block_specs: list = field(default_factory=default_blocks)
    embedding_dim: int = 128
    aggregation_mode: str = "hop_extracted"
    num_classes: int = 0
    init_seed: int = 0

    def __post_init__(self):
        self.block_specs = [b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.block_specs]
        if self.max_scale < 1:
            raise ValueError("max_scale must be at least 1")
        if self.aggregation_mode not in AGGREGATION_MODES:
            raise ValueError(f"aggregation_mode must be one of {AGGREGATION_MODES}")
        if not self.block_specs:
            raise ValueError("at least one block is required")
        chans = self.input_channels
        for i, b in enumerate(self.block_specs):
            if b.in_channels != chans:
                raise ValueError(f"block {i} expects {b.in_channels} channels, receives {chans}")
            chans = b.out_channels

    def to_dict(self) -> dict:
        return asdict(self)


def tiny_config(**overrides) -> ModelConfig:
    """A desk-scale plan: the default layout at a fraction of the width."""
    kw = dict(
        block_specs=[
            BlockSpec("basic", 2, 16),
            BlockSpec("basic", 16, 16),
            BlockSpec("bottleneck", 16, 32, temporal_stride=2, bottleneck_reduction=4),
        ],
        embedding_dim=32,
    )
    kw.update(overrides)
    return ModelConfig(**kw)


def spatial_gcn(x, operators, thetas):
    """``sum_k  op_k (x) theta_k``, applied to every frame independently.

    ``operators`` are the normalised scale-``k`` matrices (``(K+1, V, V)``),
    ``thetas[k]`` has shape ``(C_in, C_out)``.  No activation.
    """
    if len(operators) != len(thetas):
        raise ShapeMismatch("spatial_gcn", f"{len(operators)} operators vs {len(thetas)} weight matrices")
    out = None
    for op, theta in zip(operators, thetas):
        term = nn.channel_mix(nn.einsum_vertex_mix(op, x), theta)
        out = term if out is None else out + term
    return out


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class ResGCN:
    """Parameters, batch-norm buffers and the forward pass of the network."""

    def __init__(self, config: ModelConfig, graph: SkeletonGraph | None = None):
        self.config = config
        self.graph = graph if graph is not None else coco17()
        if self.graph.num_vertices != config.num_vertices:
            raise ShapeMismatch("ResGCN", f"graph has {self.graph.num_vertices} vertices, config {config.num_vertices}")
        self.operators = aggregation_operators(self.graph, config.max_scale, config.aggregation_mode)
        self.params = nn.ParamStore()
        self.buffers: dict[str, nn.RunningStats] = {}
        self._build(np.random.default_rng(config.init_seed))

    # -- parameter construction -------------------------------------------------

    def _bn(self, name, channels):
        self.params.add(f"{name}.gamma", np.ones(channels))
        self.params.add(f"{name}.beta", np.zeros(channels))
        self.buffers[name] = nn.RunningStats.create(channels)

    def _gcn(self, rng, name, c_in, c_out):
        k1 = self.config.max_scale + 1
        for k in range(k1):
            self.params.add(f"{name}.theta.k{k}", _he(rng, (c_in, c_out), c_in * k1))

    def _conv(self, rng, name, c_in, c_out, t):
        self.params.add(f"{name}.weight", _he(rng, (c_out, c_in, t, 1), c_in * t))

    def _build(self, rng):
        cfg = self.config
        self._bn("input_bn", cfg.input_channels)
        for i, spec in enumerate(cfg.block_specs):
            p = f"block{i}"
            inner = spec.inner_channels
            if spec.kind == "basic":
                self._gcn(rng, f"{p}.gcn", spec.in_channels, spec.out_channels)
                self._bn(f"{p}.gcn_bn", spec.out_channels)
                self._conv(rng, f"{p}.tcn", spec.out_channels, spec.out_channels, spec.temporal_kernel)
                self._bn(f"{p}.tcn_bn", spec.out_channels)
            else:
                self._conv(rng, f"{p}.reduce", spec.in_channels, inner, 1)
                self._bn(f"{p}.reduce_bn", inner)
                self._gcn(rng, f"{p}.gcn", inner, inner)
                self._bn(f"{p}.gcn_bn", inner)
                self._conv(rng, f"{p}.tcn", inner, inner, spec.temporal_kernel)
                self._bn(f"{p}.tcn_bn", inner)
                self._conv(rng, f"{p}.expand", inner, spec.out_channels, 1)
                self._bn(f"{p}.expand_bn", spec.out_channels)
            if spec.residual and self._needs_projection(spec):
                self._conv(rng, f"{p}.res", spec.in_channels, spec.out_channels, 1)
                self._bn(f"{p}.res_bn", spec.out_channels)
        last = cfg.block_specs[-1].out_channels
        self.params.add("fc.weight", rng.normal(0.0, np.sqrt(1.0 / last), size=(last, cfg.embedding_dim)))
        self.params.add("fc.bias", np.zeros(cfg.embedding_dim))
        if cfg.num_classes:
            self.params.add("head.weight", rng.normal(0.0, np.sqrt(1.0 / cfg.embedding_dim),
                                                      size=(cfg.embedding_dim, cfg.num_classes)))
            self.params.add("head.bias", np.zeros(cfg.num_classes))

    @staticmethod
    def _needs_projection(spec: BlockSpec) -> bool:
        return spec.in_channels != spec.out_channels or spec.temporal_stride != 1

    # -- forward ---------------------------------------------------------------------

    def _apply_bn(self, name, x, mode):
        return nn.batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                             self.buffers[name], mode)

    def _thetas(self, name):
        return [self.params[f"{name}.theta.k{k}"] for k in range(self.config.max_scale + 1)]

    def _residual(self, i, spec, x, mode):
        if not spec.residual:
            return None
        if not self._needs_projection(spec):
            return x
        p = f"block{i}"
        r = nn.temporal_conv(x, self.params[f"{p}.res.weight"], stride=spec.temporal_stride)
        return self._apply_bn(f"{p}.res_bn", r, mode)

    def basic_block(self, i, x, mode="train"):
        spec = self.config.block_specs[i]
        p = f"block{i}"
        h = spatial_gcn(x, self.operators, self._thetas(f"{p}.gcn"))
        h = nn.relu(self._apply_bn(f"{p}.gcn_bn", h, mode))
        h = nn.temporal_conv(h, self.params[f"{p}.tcn.weight"], stride=spec.temporal_stride)
        h = self._apply_bn(f"{p}.tcn_bn", h, mode)
        res = self._residual(i, spec, x, mode)
        return nn.relu(h if res is None else h + res)

    def bottleneck_block(self, i, x, mode="train"):
        spec = self.config.block_specs[i]
        p = f"block{i}"
        h = nn.temporal_conv(x, self.params[f"{p}.reduce.weight"])
        h = nn.relu(self._apply_bn(f"{p}.reduce_bn", h, mode))
        h = spatial_gcn(h, self.operators, self._thetas(f"{p}.gcn"))
        h = nn.relu(self._apply_bn(f"{p}.gcn_bn", h, mode))
        h = nn.temporal_conv(h, self.params[f"{p}.tcn.weight"], stride=spec.temporal_stride)
        h = nn.relu(self._apply_bn(f"{p}.tcn_bn", h, mode))
        h = nn.temporal_conv(h, self.params[f"{p}.expand.weight"])
        h = self._apply_bn(f"{p}.expand_bn", h, mode)
        res = self._residual(i, spec, x, mode)
        return nn.relu(h if res is None else h + res)

    def features(self, x, mode="train"):
        """Pooled block-stack features, ``(B, C_last)``."""
        cfg = self.config
        x = nn.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != cfg.input_channels or x.shape[3] != cfg.num_vertices:
            raise ShapeMismatch(
                "forward", f"expected (B, {cfg.input_channels}, T, {cfg.num_vertices}), got {x.shape}")
        h = self._apply_bn("input_bn", x, mode)
        for i, spec in enumerate(cfg.block_specs):
            h = self.basic_block(i, h, mode) if spec.kind == "basic" else self.bottleneck_block(i, h, mode)
        return nn.global_avg_pool(h)

    def forward(self, x, mode="train"):
        """Return ``(embedding, logits)``; ``logits`` is ``None`` without a class head."""
        pooled = self.features(x, mode)
        emb = nn.l2_normalize(nn.linear(pooled, self.params["fc.weight"], self.params["fc.bias"]))
        logits = None
        if self.config.num_classes:
            logits = nn.linear(emb, self.params["head.weight"], self.params["head.bias"])
        return emb, logits

    __call__ = forward

    def embed(self, x) -> np.ndarray:
        """Eval-mode embeddings as a plain array; running statistics are untouched."""
        emb, _ = self.forward(nn.Tensor(x), mode="eval")
        return emb.data

    # -- state -----------------------------------------------------------------------

    def state_arrays(self) -> dict:
        out = {f"param/{k}": v.data for k, v in self.params.items()}
        for k, s in self.buffers.items():
            out[f"buffer/{k}.mean"] = s.mean
            out[f"buffer/{k}.var"] = s.var
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        for k, p in self.params.items():
            key = f"param/{k}"
            if key not in arrays or arrays[key].shape != p.shape:
                raise ShapeMismatch("load_state", f"parameter {k} missing or mis-shaped")
            p.data = np.array(arrays[key], dtype=np.float64)
        for k, s in self.buffers.items():
            s.mean = np.array(arrays[f"buffer/{k}.mean"], dtype=np.float64)
            s.var = np.array(arrays[f"buffer/{k}.var"], dtype=np.float64)
