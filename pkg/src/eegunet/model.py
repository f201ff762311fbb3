"""U-shaped conv/transformer network, its presets and checkpoint format."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .nn import functional as F
from .nn.layers import (
    BatchNorm1d, Conv1d, Linear, Module, TransformerEncoderLayer, positional_encoding,
)
from .nn.tensor import NdArray, Param, default_dtype

FORMAT_VERSION = 1
DEFAULT_RESCNN_KERNELS = (3, 3, 3, 3, 2, 3, 2)


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    in_channels: int = 19
    window_samples: int = 15360
    encoder_blocks: list = field(default_factory=lambda: [[32, 11], [64, 9], [128, 7], [256, 7], [512, 5]])
    rescnn_kernels: list = field(default_factory=lambda: list(DEFAULT_RESCNN_KERNELS))
    d_model: int = 512
    num_heads: int = 4
    dim_ff: int = 2048
    num_tx_layers: int = 8
    decoder_blocks: list = field(default_factory=lambda: [[512, 3], [256, 5], [128, 5], [64, 7], [32, 7]])
    head: str = "timestep"  # "timestep" | "window"
    num_classes: int = 1
    classifier_kernel: int = 11
    dropout_rate: float = 0.1
    positional_encoding: bool = True
    pe_denominator: str = "d_model"  # "d_model" | "t_d"

    @property
    def depth(self) -> int:
        return len(self.encoder_blocks)

    @property
    def tokens(self) -> int:
        return self.window_samples // 2 ** self.depth

    def validate(self) -> None:
        n = self.depth
        if n < 1:
            raise ConfigError("at least one encoder block is required")
        if self.window_samples % 2 ** n:
            raise ConfigError(f"window_samples={self.window_samples} not divisible by 2^{n}")
        if self.encoder_blocks[-1][0] != self.d_model:
            raise ConfigError(
                f"d_model={self.d_model} must equal last encoder out_channels={self.encoder_blocks[-1][0]}")
        if len(self.decoder_blocks) != n:
            raise ConfigError(f"decoder has {len(self.decoder_blocks)} blocks, encoder has {n}")
        c = self.d_model
        for i, (out_c, _) in enumerate(self.decoder_blocks):
            skip_c = self.encoder_blocks[n - 1 - i][0]
            if out_c != skip_c:
                raise ConfigError(
                    f"decoder.{i}: out_channels {c}->{out_c} does not match encoder.{n - 1 - i} "
                    f"skip channels {skip_c}")
            c = out_c
        if self.num_tx_layers and self.d_model % self.num_heads:
            raise ConfigError(f"num_heads={self.num_heads} does not divide d_model={self.d_model}")
        if self.positional_encoding and self.num_tx_layers and self.d_model % 2:
            raise ConfigError("positional encoding needs an even d_model")
        if self.head not in ("timestep", "window"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.pe_denominator not in ("d_model", "t_d"):
            raise ConfigError(f"pe_denominator must be 'd_model' or 't_d', got {self.pe_denominator!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_blocks"] = [list(b) for b in self.encoder_blocks]
        d["decoder_blocks"] = [list(b) for b in self.decoder_blocks]
        d["rescnn_kernels"] = list(self.rescnn_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        base = {}
        if "preset" in d:
            name = d.pop("preset")
            if name not in PRESETS:
                raise ConfigError(f"unknown model preset {name!r}")
            base = PRESETS[name]().to_dict()
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        base.update(d)
        return cls(**base)


def seizure_config(**kw) -> ModelConfig:
    return ModelConfig(**kw)


def sleep_config(**kw) -> ModelConfig:
    cfg = dict(
        in_channels=2, window_samples=7680,
        encoder_blocks=[[16, 11], [32, 9], [64, 7], [128, 7]],
        d_model=128, num_heads=4, dim_ff=2048, num_tx_layers=8,
        decoder_blocks=[[128, 3], [64, 5], [32, 5], [16, 7]],
        head="window", num_classes=5,
    )
    cfg.update(kw)
    return ModelConfig(**cfg)


def pathological_config(**kw) -> ModelConfig:
    cfg = dict(
        in_channels=23, window_samples=2000,
        encoder_blocks=[[64, 11], [128, 9]],
        d_model=128, num_heads=4, dim_ff=2048, num_tx_layers=8,
        decoder_blocks=[[128, 3], [64, 5]],
        head="window", num_classes=1,
    )
    cfg.update(kw)
    return ModelConfig(**cfg)


def desk_config(**kw) -> ModelConfig:
    """Reduced seizure-style model used for the synthetic end-to-end loop."""
    cfg = dict(
        in_channels=2, window_samples=1024,
        encoder_blocks=[[16, 11], [64, 9]],
        d_model=64, num_heads=4, dim_ff=128, num_tx_layers=2,
        decoder_blocks=[[64, 3], [16, 5]],
        head="timestep", num_classes=1, classifier_kernel=11,
    )
    cfg.update(kw)
    return ModelConfig(**cfg)


PRESETS: dict[str, Callable[..., ModelConfig]] = {
    "seizure": seizure_config,
    "sleep": sleep_config,
    "pathological": pathological_config,
    "desk": desk_config,
}


class ResBlock(Module):
    """conv-BN-ReLU-dropout twice on an identity skip; length and channels preserved."""

    def __init__(self, channels: int, k: int, rng: np.random.Generator):
        self.conv1 = Conv1d(channels, channels, k, rng, padding="same")
        self.bn1 = BatchNorm1d(channels, eps=1e-3)
        self.conv2 = Conv1d(channels, channels, k, rng, padding="same")
        self.bn2 = BatchNorm1d(channels, eps=1e-3)

    def __call__(self, x: NdArray, train: bool, rate: float, rng) -> NdArray:
        h = F.spatial_dropout(F.relu(self.bn1(self.conv1(x), train)), rate, train, rng)
        h = F.spatial_dropout(F.relu(self.bn2(self.conv2(h), train)), rate, train, rng)
        return F.add(x, h)


class PoolingHead(Module):
    """Softmax attention over time steps followed by a linear classifier."""

    def __init__(self, hidden: int, num_classes: int, rng: np.random.Generator):
        self.W_a = Param(rng.uniform(-math.sqrt(1 / hidden), math.sqrt(1 / hidden), (hidden, 1)))
        self.classifier = Linear(hidden, num_classes, rng)

    def pool(self, x: NdArray) -> tuple[NdArray, NdArray]:
        """x: (B, H, T) -> pooled (B, H) and attention weights (B, T, 1)."""
        xp = F.transpose(x, (0, 2, 1))
        a = F.softmax(F.matmul(xp, self.W_a), axis=1)
        z = F.reshape(F.matmul(x, a), x.shape[:2])
        return z, a


class _EncoderStage(Module):
    def __init__(self, c_in, c_out, k, rng):
        self.conv = Conv1d(c_in, c_out, k, rng)


class _DecoderStage(Module):
    def __init__(self, c_in, c_out, k, rng):
        self.conv = Conv1d(c_in, c_out, k, rng)


class Model(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg.in_channels
        self.encoder = []
        for out_c, k in cfg.encoder_blocks:
            self.encoder.append(_EncoderStage(c, out_c, k, rng))
            c = out_c
        self.rescnn = [ResBlock(c, k, rng) for k in cfg.rescnn_kernels]
        self.transformer = [TransformerEncoderLayer(cfg.d_model, cfg.num_heads, cfg.dim_ff, rng)
                            for _ in range(cfg.num_tx_layers)]
        self.decoder = []
        for out_c, k in cfg.decoder_blocks:
            self.decoder.append(_DecoderStage(c, out_c, k, rng))
            c = out_c
        if cfg.head == "timestep":
            self.classifier = Conv1d(c, cfg.num_classes, cfg.classifier_kernel, rng)
        else:
            self.pooling = PoolingHead(c, cfg.num_classes, rng)
        denom = cfg.d_model if cfg.pe_denominator == "d_model" else cfg.tokens
        self.pe = positional_encoding(cfg.tokens, cfg.d_model, denom).astype(default_dtype()) \
            if cfg.d_model % 2 == 0 else None
        self.dropout_rate = cfg.dropout_rate
        self.assign_names()

    # -- forward ------------------------------------------------------------

    def _features(self, x: NdArray, train: bool, rng, trace: list | None) -> NdArray:
        cfg = self.cfg
        if x.shape[-2:] != (cfg.in_channels, cfg.window_samples):
            raise ValueError(
                f"expected input (..., {cfg.in_channels}, {cfg.window_samples}), got {x.shape}")
        if x.ndim == 2:
            x = F.reshape(x, (1,) + x.shape)
        rate = self.dropout_rate

        def note(op, h):
            if trace is not None:
                trace.append((op, tuple(h.shape[1:])))

        h, skips = x, []
        for stage in self.encoder:
            w = stage.conv.weight
            note(f"Conv1d ({w.shape[1]}→{w.shape[0]}) + ELU", h)
            h = F.elu(stage.conv(h))
            skips.append(h)
            note("MaxPool1d", h)
            h = F.maxpool1d(h, 2, 2)
        if self.rescnn:
            note("ResCNNStack", h)
        for block in self.rescnn:
            h = block(h, train, rate, rng)
        if self.transformer:
            note("PositionalEncoding + Transformer", h)
            tokens = F.transpose(h, (0, 2, 1))
            if cfg.positional_encoding:
                tokens = F.add(tokens, NdArray(self.pe.astype(tokens.dtype)))
            for layer in self.transformer:
                tokens = layer(tokens, train, rate, rng)
            h = F.transpose(tokens, (0, 2, 1))
        for i, stage in enumerate(self.decoder):
            note("Upsample (×2)", h)
            h = F.upsample_nearest(h, 2)
            w = stage.conv.weight
            note(f"Conv1d ({w.shape[1]}→{w.shape[0]}) + ELU", h)
            h = F.add(F.elu(stage.conv(h)), skips[len(skips) - 1 - i])
        return h

    def forward_seq(self, x, train: bool = False, rng=None, trace: list | None = None) -> NdArray:
        """Per-time-step probabilities: (B, T) for a binary head, (B, C, T) otherwise."""
        if self.cfg.head != "timestep":
            raise ValueError("forward_seq needs a timestep head; this model has a window head")
        x = x if isinstance(x, NdArray) else NdArray(x)
        single = x.ndim == 2
        h = self._features(x, train, rng, trace)
        w = self.classifier.weight
        if trace is not None:
            trace.append((f"Conv1d ({w.shape[1]}→{w.shape[0]})", tuple(h.shape[1:])))
        logits = self.classifier(h)
        if self.cfg.num_classes == 1:
            if trace is not None:
                trace.append(("Squeeze (remove channel)", tuple(logits.shape[1:])))
            out = F.sigmoid(F.reshape(logits, (logits.shape[0], logits.shape[2])))
        else:
            out = F.softmax(logits, axis=1)
        F.check_finite(out.data, "forward_seq")
        if single:
            out = F.reshape(out, out.shape[1:])
        return out

    def forward_window(self, x, train: bool = False, rng=None, trace: list | None = None,
                       return_attention: bool = False):
        """Window-level probabilities: (B,) for a binary head, (B, C) otherwise."""
        if self.cfg.head != "window":
            raise ValueError("forward_window needs a window head; this model has a timestep head")
        x = x if isinstance(x, NdArray) else NdArray(x)
        single = x.ndim == 2
        h = self._features(x, train, rng, trace)
        if trace is not None:
            trace.append(("AttentionPooling", tuple(h.shape[1:])))
        z, a = self.pooling.pool(h)
        lin = self.pooling.classifier.weight
        if trace is not None:
            trace.append((f"Linear ({lin.shape[0]}→{lin.shape[1]})", tuple(z.shape[1:])))
        logits = self.pooling.classifier(z)
        if self.cfg.num_classes == 1:
            if trace is not None:
                trace.append(("Sigmoid", tuple(logits.shape[1:])))
            out = F.sigmoid(F.reshape(logits, (logits.shape[0],)))
        else:
            if trace is not None:
                trace.append(("Softmax", tuple(logits.shape[1:])))
            out = F.softmax(logits, axis=-1)
        F.check_finite(out.data, "forward_window")
        if single:
            out = F.reshape(out, out.shape[1:])
        if return_attention:
            return out, a
        return out

    def __call__(self, x, train: bool = False, rng=None):
        if self.cfg.head == "timestep":
            return self.forward_seq(x, train, rng)
        return self.forward_window(x, train, rng)

    def trace_shapes(self, x=None) -> list[tuple[str, tuple[int, ...]]]:
        """(operator, input shape) rows of one forward pass, laid out like an architecture table."""
        cfg = self.cfg
        if x is None:
            x = np.zeros((1, cfg.in_channels, cfg.window_samples), dtype=default_dtype())
        trace: list = []
        if cfg.head == "timestep":
            self.forward_seq(x, trace=trace)
        else:
            self.forward_window(x, trace=trace)
        return trace

    # -- state --------------------------------------------------------------

    def state(self) -> list[tuple[str, np.ndarray, str]]:
        out = [(n, p.data, "param") for n, p in self.named_params()]
        out += [(n, b, "buffer") for n, b in self.named_buffers()]
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: a.copy() for n, a, _ in self.state()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, a, _ in self.state():
            a[...] = snap[n]


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    cfg.validate()
    return Model(cfg, np.random.default_rng(seed))


SECTIONS = ("encoder", "rescnn", "transformer", "decoder", "head")


def count_params(model: Model, by_section: bool = False):
    counts = dict.fromkeys(SECTIONS, 0)
    for name, p in model.named_params():
        root = name.split(".", 1)[0]
        counts[root if root in counts else "head"] += p.size
    total = sum(counts.values())
    return (total, counts) if by_section else total


def analytic_param_count(cfg: ModelConfig) -> dict[str, int]:
    """Closed-form per-section parameter count, independent of any built model."""
    out = dict.fromkeys(SECTIONS, 0)
    c = cfg.in_channels
    for o, k in cfg.encoder_blocks:
        out["encoder"] += c * o * k + o
        c = o
    for k in cfg.rescnn_kernels:
        out["rescnn"] += 2 * (c * c * k + c) + 2 * 2 * c
    out["transformer"] = cfg.num_tx_layers * TransformerEncoderLayer.param_count(cfg.d_model, cfg.dim_ff)
    for o, k in cfg.decoder_blocks:
        out["decoder"] += c * o * k + o
        c = o
    if cfg.head == "timestep":
        out["head"] = c * cfg.num_classes * cfg.classifier_kernel + cfg.num_classes
    else:
        out["head"] = c + c * cfg.num_classes + cfg.num_classes
    return out


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: Model, path: str | Path) -> None:
    """JSON header line, then little-endian float32 arrays in manifest order."""
    manifest, offset, blobs = [], 0, []
    for name, arr, kind in model.state():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
        offset += len(raw)
        blobs.append(raw)
    header = {"format_version": FORMAT_VERSION, "config": model.cfg.to_dict(),
              "dtype": "f32le", "params": manifest, "data_bytes": offset}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> Model:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        data = fh.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {header.get('format_version')}")
    if len(data) != header["data_bytes"]:
        raise ValueError("checkpoint truncated")
    model = build_model(ModelConfig.from_dict(header["config"]), seed=0)
    arrays = {n: a for n, a, _ in model.state()}
    if set(arrays) != {e["name"] for e in header["params"]}:
        raise ValueError("checkpoint manifest does not match the model layout")
    for entry in header["params"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        vals = np.frombuffer(data, dtype="<f4", count=n, offset=entry["offset"])
        arrays[entry["name"]][...] = vals.reshape(entry["shape"])
    return model
