"""Image encoders for RL agents and their layer-by-layer accounting.

The Impala family stacks ConvSequences (conv -> maxpool -> two ResBlocks) and
ends in one of several tails before a Linear projection to ``embed_dim``.
``impoola`` is the Impala stack with a global-average-pool tail.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import Conv2d, Linear, Module, Taps, tapped_relu
from .autodiff.tensor import Tensor

KINDS = ("nature", "impala")
TAILS = ("flatten", "gap", "avgpool2x2", "maxpool1x1", "depthwise", "extra_convseq")
NATURE_TAILS = ("flatten", "gap")

# shorthand names accepted by EncoderSpec.parse
ALIASES = {
    "impala": ("impala", "flatten"),
    "impoola": ("impala", "gap"),
    "impala-avgpool2x2": ("impala", "avgpool2x2"),
    "impala-maxpool1x1": ("impala", "maxpool1x1"),
    "impala-depthwise": ("impala", "depthwise"),
    "impala-4seq": ("impala", "extra_convseq"),
    "nature": ("nature", "flatten"),
    "nature-gap": ("nature", "gap"),
}


class EncoderSpecError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "impala"
    tail: str = "flatten"
    width_scale: int = 1
    base_channels: tuple[int, ...] = (16, 32, 32)
    embed_dim: int = 256
    input_shape: tuple[int, int, int] = (3, 64, 64)

    @classmethod
    def impala(cls, tau: int = 1, **kw) -> "EncoderSpec":
        return cls(kind="impala", tail="flatten", width_scale=tau, **kw)

    @classmethod
    def impoola(cls, tau: int = 1, **kw) -> "EncoderSpec":
        return cls(kind="impala", tail="gap", width_scale=tau, **kw)

    @classmethod
    def parse(cls, name: str, tau: int = 1, **kw) -> "EncoderSpec":
        try:
            kind, tail = ALIASES[name.lower()]
        except KeyError:
            raise EncoderSpecError(f"unknown encoder {name!r}; known: {', '.join(ALIASES)}") from None
        return cls(kind=kind, tail=tail, width_scale=tau, **kw)

    @property
    def name(self) -> str:
        for alias, (kind, tail) in ALIASES.items():
            if (kind, tail) == (self.kind, self.tail):
                return alias
        return f"{self.kind}-{self.tail}"

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(c * self.width_scale for c in self.base_channels)

    def validate(self) -> "EncoderSpec":
        if self.kind not in KINDS:
            raise EncoderSpecError(f"unknown encoder kind {self.kind!r}")
        if self.tail not in TAILS:
            raise EncoderSpecError(f"unknown tail {self.tail!r}")
        if self.kind == "nature" and self.tail not in NATURE_TAILS:
            raise EncoderSpecError(f"nature encoder supports tails {NATURE_TAILS}, got {self.tail!r}")
        if self.kind == "nature" and len(self.base_channels) != 3:
            raise EncoderSpecError("nature encoder needs exactly three channel counts")
        if self.width_scale < 1 or int(self.width_scale) != self.width_scale:
            raise EncoderSpecError(f"width scale must be a positive integer, got {self.width_scale}")
        if not self.base_channels or min(self.base_channels) < 1:
            raise EncoderSpecError(f"bad base channels {self.base_channels}")
        if self.embed_dim < 1:
            raise EncoderSpecError(f"bad embed_dim {self.embed_dim}")
        return self


def lr_for_tau(base_lr_at_tau2: float, tau: int) -> float:
    """Learning rate for width scale ``tau`` given the tuned rate at ``tau = 2``."""
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    return base_lr_at_tau2 * tau / 2


# ---------------------------------------------------------------------------
# building blocks


class ResBlock(Module):
    """x + conv1(relu(conv0(relu(x))))"""

    def __init__(self, channels: int, rng: np.random.Generator, path: str):
        super().__init__()
        self.path = path
        self.conv0 = self.add("conv0", Conv2d(channels, channels, 3, rng, padding=1))
        self.conv1 = self.add("conv1", Conv2d(channels, channels, 3, rng, padding=1))

    def forward(self, x: Tensor, taps: Taps = None, in_tap: Optional[str] = None) -> Tensor:
        h = tapped_relu(x, taps, in_tap) if in_tap else F.relu(x)
        h = tapped_relu(self.conv0(h), taps, f"{self.path}.conv0")
        return x + self.conv1(h)


class ConvSequence(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, path: str):
        super().__init__()
        self.path = path
        self.conv = self.add("conv", Conv2d(c_in, c_out, 3, rng, padding=1))
        self.res0 = self.add("res0", ResBlock(c_out, rng, f"{path}.res0"))
        self.res1 = self.add("res1", ResBlock(c_out, rng, f"{path}.res1"))

    def forward(self, x: Tensor, taps: Taps = None) -> Tensor:
        x = F.maxpool2d(self.conv(x), 3, 2, 1)
        # relu(maxpool(conv)) == maxpool(relu(conv)): this tap is the first conv's activation
        x = self.res0(x, taps, in_tap=f"{self.path}.conv")
        return self.res1(x, taps, in_tap=f"{self.path}.res0")

    def output_shape(self, shape):
        c, h, w = self.conv.output_shape(shape)
        return (c, (h - 1) // 2 + 1, (w - 1) // 2 + 1)


class Encoder(Module):
    """Maps ``(N, 3, H, W)`` images in [0, 1] to ``(N, embed_dim)`` features."""

    def __init__(self, spec: EncoderSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec.validate()
        self.blocks: list[Module] = []
        shape = spec.input_shape
        if spec.kind == "impala":
            chans = list(spec.channels)
            if spec.tail == "extra_convseq":
                chans.append(chans[-1])
            for j, c in enumerate(chans):
                seq = self.add(f"seq{j}", ConvSequence(shape[0], c, rng, f"seq{j}"))
                self.blocks.append(seq)
                shape = seq.output_shape(shape)
        else:
            c1, c2, c3 = spec.channels
            for j, (c, k, s) in enumerate(((c1, 8, 4), (c2, 4, 2), (c3, 3, 1))):
                conv = self.add(f"conv{j}", Conv2d(shape[0], c, k, rng, stride=s))
                self.blocks.append(conv)
                shape = conv.output_shape(shape)
                if min(shape[1:]) < 1:
                    raise EncoderSpecError(f"input {spec.input_shape} too small for nature encoder")
        self.feature_shape = shape
        C, H, W = shape
        self.depthwise = None
        if spec.tail == "depthwise":
            if H != W:
                raise EncoderSpecError("depthwise tail needs square feature maps")
            self.depthwise = self.add("depthwise", Conv2d(C, C, H, rng, stride=H, groups=C))
        self.embed_len = self._embed_len(shape)
        self.linear = self.add("linear", Linear(self.embed_len, spec.embed_dim, rng))

    def _embed_len(self, shape) -> int:
        C, H, W = shape
        tail = self.spec.tail
        if tail in ("gap", "maxpool1x1", "depthwise"):
            return C
        if tail == "avgpool2x2":
            return C * 4
        return C * H * W

    def _last_tap(self) -> str:
        return "conv2" if self.spec.kind == "nature" else f"seq{len(self.blocks) - 1}.res1"

    def embed(self, x: Tensor, taps: Taps = None) -> Tensor:
        """Pre-projection encoding ``e``."""
        if self.spec.kind == "nature":
            for j, conv in enumerate(self.blocks):
                x = conv(x)
                if j < len(self.blocks) - 1:
                    x = tapped_relu(x, taps, f"conv{j}")
        else:
            for seq in self.blocks:
                x = seq(x, taps)
        x = tapped_relu(x, taps, self._last_tap())
        tail = self.spec.tail
        if tail == "gap":
            x = F.adaptive_avg_pool(x, 1, 1)
        elif tail == "avgpool2x2":
            x = F.adaptive_avg_pool(x, 2, 2)
        elif tail == "maxpool1x1":
            x = F.adaptive_max_pool(x, 1, 1)
        elif tail == "depthwise":
            x = self.depthwise(x)
        return F.flatten(x)

    def forward(self, x: Tensor, taps: Taps = None) -> Tensor:
        return tapped_relu(self.linear(self.embed(x, taps)), taps, "linear")


def build_encoder(spec: EncoderSpec, seed: int = 0) -> Encoder:
    return Encoder(spec, np.random.default_rng(seed))


class ActorCritic(Module):
    """Shared encoder with a policy-logit head and a scalar value head."""

    def __init__(self, spec: EncoderSpec, num_actions: int, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.num_actions = num_actions
        self.encoder = self.add("encoder", Encoder(spec, rng))
        self.actor = self.add("actor", Linear(spec.embed_dim, num_actions, rng, gain=0.01))
        self.critic = self.add("critic", Linear(spec.embed_dim, 1, rng, gain=1.0))

    def forward(self, x: Tensor, taps: Taps = None) -> tuple[Tensor, Tensor]:
        z = self.encoder(x, taps)
        return self.actor(z), F.reshape(self.critic(z), (z.shape[0],))

    def logits(self, x: Tensor) -> Tensor:
        return self.actor(self.encoder(x))


class QNetwork(Module):
    def __init__(self, spec: EncoderSpec, num_actions: int, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.num_actions = num_actions
        self.encoder = self.add("encoder", Encoder(spec, rng))
        self.head = self.add("head", Linear(spec.embed_dim, num_actions, rng, gain=1.0))

    def forward(self, x: Tensor, taps: Taps = None) -> Tensor:
        return self.head(self.encoder(x, taps))


# ---------------------------------------------------------------------------
# model summary


@dataclass
class LayerSummary:
    name: str
    depth: int
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    param_count: Optional[int] = None
    kernel: Optional[tuple[int, int]] = None
    multi_adds: Optional[int] = None
    param_pct: Optional[float] = None

    @property
    def is_leaf(self) -> bool:
        return self.param_count is not None


@dataclass
class ModelSummary:
    rows: list[LayerSummary] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.param_count for r in self.rows if r.is_leaf)

    @property
    def total_multi_adds(self) -> int:
        return sum(r.multi_adds for r in self.rows if r.is_leaf)

    def leaf(self, name: str) -> list[LayerSummary]:
        return [r for r in self.rows if r.name == name and r.is_leaf]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "input", "output", "params", "kernel", "param_pct", "multi_adds"])
        for r in self.rows:
            w.writerow([
                "  " * r.depth + r.name,
                _fmt_shape(r.input_shape),
                _fmt_shape(r.output_shape),
                r.param_count if r.is_leaf else "--",
                _fmt_shape(r.kernel) if r.kernel else "--",
                f"{r.param_pct:.2f}%" if r.param_pct is not None else "--",
                r.multi_adds if r.multi_adds is not None else "--",
            ])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'Layer':<36}{'Input':<16}{'Output':<16}{'Param #':>12}{'Kernel':>9}"
                 f"{'Param %':>9}{'Multi-Adds':>14}"]
        for r in self.rows:
            lines.append(
                f"{'  ' * r.depth + r.name:<36}{_fmt_shape(r.input_shape):<16}{_fmt_shape(r.output_shape):<16}"
                f"{(f'{r.param_count:,}' if r.is_leaf else '--'):>12}"
                f"{(_fmt_shape(r.kernel) if r.kernel else '--'):>9}"
                f"{(f'{r.param_pct:.2f}%' if r.param_pct is not None else '--'):>9}"
                f"{(f'{r.multi_adds:,}' if r.multi_adds is not None else '--'):>14}")
        lines.append(f"Total params: {self.total_params:,}")
        lines.append(f"Total multi-adds: {self.total_multi_adds / 1e6:.2f}M")
        return "\n".join(lines)


def _fmt_shape(shape) -> str:
    return "[" + ", ".join(str(s) for s in shape) + "]"


def _conv_row(conv: Conv2d, in_shape, depth: int, name: str = "Conv2d") -> LayerSummary:
    out = conv.output_shape(in_shape)
    per_out = conv.c_in // conv.groups * conv.k * conv.k + 1
    return LayerSummary(name, depth, tuple(in_shape), out, param_count=conv.num_params(),
                        kernel=(conv.k, conv.k), multi_adds=int(np.prod(out)) * per_out)


def _linear_row(lin: Linear, name: str, depth: int) -> LayerSummary:
    return LayerSummary(name, depth, (lin.n_in,), (lin.n_out,), param_count=lin.num_params(),
                        multi_adds=lin.n_out * (lin.n_in + 1))


def _encoder_title(spec: EncoderSpec) -> str:
    if spec.kind == "nature":
        return "Nature-CNN"
    return "Impoola-CNN" if spec.tail == "gap" else "Impala-CNN"


def _encoder_rows(enc: Encoder, depth: int) -> list[LayerSummary]:
    spec = enc.spec
    shape = spec.input_shape
    rows = [LayerSummary(_encoder_title(spec), depth, shape, (spec.embed_dim,))]
    d = depth + 1
    if spec.kind == "impala":
        for seq in enc.blocks:
            out = seq.output_shape(shape)
            rows.append(LayerSummary("ConvSequence", d, shape, out))
            rows.append(_conv_row(seq.conv, shape, d + 1))
            for res in (seq.res0, seq.res1):
                rows.append(LayerSummary("ResidualBlock", d + 1, out, out))
                rows.append(_conv_row(res.conv0, out, d + 2))
                rows.append(_conv_row(res.conv1, out, d + 2))
            shape = out
    else:
        for conv in enc.blocks:
            rows.append(_conv_row(conv, shape, d))
            shape = conv.output_shape(shape)
    C, H, W = shape
    tail = spec.tail
    if tail in ("flatten", "extra_convseq"):
        rows.append(LayerSummary("Flatten", d, shape, (C * H * W,)))
    elif tail == "gap":
        rows.append(LayerSummary("AdaptiveAvgPool2d", d, shape, (C, 1, 1)))
    elif tail == "avgpool2x2":
        rows.append(LayerSummary("AdaptiveAvgPool2d", d, shape, (C, 2, 2)))
    elif tail == "maxpool1x1":
        rows.append(LayerSummary("AdaptiveMaxPool2d", d, shape, (C, 1, 1)))
    elif tail == "depthwise":
        rows.append(_conv_row(enc.depthwise, shape, d))
    rows.append(_linear_row(enc.linear, "Linear", d))
    return rows


def summarize(network: Module, input_shape: Optional[Sequence[int]] = None) -> ModelSummary:
    """Per-layer shapes, parameter counts and multi-adds for an encoder or agent network.

    Container rows (model, encoder, ConvSequence, ResidualBlock) and parameter-free
    rows carry no counts; percentages are relative to the network total.
    """
    enc = network if isinstance(network, Encoder) else network.encoder
    if input_shape is not None and tuple(input_shape) != tuple(enc.spec.input_shape):
        raise ValueError(f"network was built for input {enc.spec.input_shape}, got {tuple(input_shape)}")
    if isinstance(network, ActorCritic):
        rows = [LayerSummary(f"{_encoder_title(enc.spec).split('-')[0]}PPOActorCritic", 0,
                             enc.spec.input_shape, (network.num_actions,))]
        rows += _encoder_rows(enc, 1)
        rows.append(_linear_row(network.actor, "Actor", 0))
        rows.append(_linear_row(network.critic, "Critic", 0))
    elif isinstance(network, QNetwork):
        rows = [LayerSummary(f"{_encoder_title(enc.spec).split('-')[0]}QNetwork", 0,
                             enc.spec.input_shape, (network.num_actions,))]
        rows += _encoder_rows(enc, 1)
        rows.append(_linear_row(network.head, "QHead", 0))
    else:
        rows = _encoder_rows(enc, 0)
    summary = ModelSummary(rows)
    total = summary.total_params
    for r in summary.rows:
        if r.is_leaf:
            r.param_pct = 100.0 * r.param_count / total
    return summary


def with_tau(spec: EncoderSpec, tau: int) -> EncoderSpec:
    return replace(spec, width_scale=tau)
