"""
Scalable architecture families at desk scale.

Three families, each an ordered sequence of levels where level L+1
structurally contains level L:

``DepthResNet``
    stem conv, three stages of residual blocks (conv-bn-relu, conv-bn, skip),
    global pool, linear head. Higher levels add blocks per stage.
``WidthConvNet``
    same skeleton with single-conv residual blocks; higher levels widen every
    stage by 1.2x and deepen by 1.1x (rounded up).
``WidthMLP``
    dense stem, residual dense+layernorm+gelu blocks, a linear head plus a
    3-D per-class embedding scored against the features.

Stage transitions (``stage{i}.down`` / ``stage{i}.proj``) live outside the
blocks, so every block in a stage has identical tensor shapes and any
block-to-block depth mapping is shape-consistent.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .store import ParamStore
from .tensor import Tensor

FAMILIES = ("DepthResNet", "WidthMLP", "WidthConvNet")

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LN_EPS = 1e-5

# FLOPs charged per output element of the non-linear-algebra layers.
BATCHNORM_FLOPS = 2  # folded scale + shift
RELU_FLOPS = 1
ADD_FLOPS = 1
GELU_FLOPS = 5  # scale, erf, add, halve, multiply
LAYERNORM_FLOPS = 7  # mean, center, square, accumulate, normalize, scale, shift
POOL_FLOPS = 1  # per input element


@dataclass(frozen=True)
class ArchConfig:
    family: str
    level: int = 0
    num_classes: int = 10
    input_shape: Tuple[int, int, int] = (3, 32, 32)
    stage_layers: Optional[Tuple[int, ...]] = None
    stage_widths: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.level < 0:
            raise ConfigError(f"level must be non-negative, got {self.level}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (C, H, W) of positive ints, got {self.input_shape}")
        for attr in ("stage_layers", "stage_widths"):
            val = getattr(self, attr)
            if val is not None:
                val = tuple(int(v) for v in val)
                if not val or min(val) < 1:
                    raise ConfigError(f"{attr} must be non-empty positive ints, got {val}")
                object.__setattr__(self, attr, val)

    def resolved(self) -> "ArchConfig":
        """A copy with family defaults filled in for unset stage fields."""
        layers, widths = self.stage_layers, self.stage_widths
        lv = self.level
        if self.family == "DepthResNet":
            layers = layers or (lv + 1,) * 3
            widths = widths or (8, 16, 32)
        elif self.family == "WidthConvNet":
            depth, width = Fraction(11, 10) ** lv, Fraction(6, 5) ** lv
            layers = layers or tuple(math.ceil(depth * b) for b in (1, 1, 1))
            widths = widths or tuple(math.ceil(width * b) for b in (8, 16, 32))
        else:
            widths = widths or (32 + 16 * lv,) * 2
            layers = layers or (1,) * len(widths)
        if len(layers) != len(widths):
            raise ConfigError(f"stage_layers {layers} and stage_widths {widths} differ in length")
        return replace(self, stage_layers=tuple(layers), stage_widths=tuple(widths))


@dataclass
class ParamSpec:
    name: str
    shape: Tuple[int, ...]
    trainable: bool
    init: str  # "kaiming", "zeros", "ones"
    fan_in: int = 0


@dataclass
class Layout:
    specs: List[ParamSpec] = field(default_factory=list)

    def conv(self, name, cout, cin, k):
        self.specs.append(ParamSpec(f"{name}.weight", (cout, cin, k, k), True, "kaiming", cin * k * k))

    def bn(self, name, c):
        self.specs += [
            ParamSpec(f"{name}.weight", (c,), True, "ones"),
            ParamSpec(f"{name}.bias", (c,), True, "zeros"),
            ParamSpec(f"{name}.running_mean", (c,), False, "zeros"),
            ParamSpec(f"{name}.running_var", (c,), False, "ones"),
        ]

    def fc(self, name, out, inp, bias=True):
        self.specs.append(ParamSpec(f"{name}.weight", (out, inp), True, "kaiming", inp))
        if bias:
            self.specs.append(ParamSpec(f"{name}.bias", (out,), True, "zeros"))

    def ln(self, name, d):
        self.specs += [
            ParamSpec(f"{name}.weight", (d,), True, "ones"),
            ParamSpec(f"{name}.bias", (d,), True, "zeros"),
        ]


def layout(config: ArchConfig) -> Layout:
    """Ordered parameter/buffer specs for ``config`` (no values)."""
    cfg = config.resolved()
    C, H, W = cfg.input_shape
    widths, layers = cfg.stage_widths, cfg.stage_layers
    out = Layout()
    if cfg.family == "WidthMLP":
        out.fc("stem.fc", widths[0], C * H * W)
        out.ln("stem.norm", widths[0])
        for i, (w, n) in enumerate(zip(widths, layers)):
            if i:
                out.fc(f"stage{i}.proj", w, widths[i - 1])
            for j in range(n):
                out.fc(f"stage{i}.block{j}.fc", w, w)
                out.ln(f"stage{i}.block{j}.norm", w)
        out.fc("head", cfg.num_classes, widths[-1])
        out.specs.append(
            ParamSpec("head.class_embed", (1, cfg.num_classes, widths[-1]), True, "kaiming", widths[-1])
        )
        return out
    out.conv("stem.conv", widths[0], C, 3)
    out.bn("stem.bn", widths[0])
    for i, (w, n) in enumerate(zip(widths, layers)):
        if i:
            out.conv(f"stage{i}.down.conv", w, widths[i - 1], 2)
            out.bn(f"stage{i}.down.bn", w)
        for j in range(n):
            if cfg.family == "DepthResNet":
                for k in range(2):
                    out.conv(f"stage{i}.block{j}.conv{k}", w, w, 3)
                    out.bn(f"stage{i}.block{j}.bn{k}", w)
            else:
                out.conv(f"stage{i}.block{j}.conv", w, w, 3)
                out.bn(f"stage{i}.block{j}.bn", w)
    out.fc("head", cfg.num_classes, widths[-1])
    return out


def _check_geometry(cfg: ArchConfig) -> List[Tuple[int, int]]:
    """Spatial size entering each stage; raises ConfigError on bad strides."""
    _, H, W = cfg.input_shape
    sizes = []
    for i in range(len(cfg.stage_widths)):
        if i:
            try:
                H = T.conv_output_size(H, 2, 2, 0)
                W = T.conv_output_size(W, 2, 2, 0)
            except ConfigError:
                raise ConfigError(
                    f"{cfg.family}: input {cfg.input_shape} cannot be halved "
                    f"{len(cfg.stage_widths) - 1} times by the stage transitions"
                ) from None
        sizes.append((H, W))
    return sizes


def _init_value(spec: ParamSpec, seed: int) -> np.ndarray:
    if spec.init == "zeros":
        return np.zeros(spec.shape)
    if spec.init == "ones":
        return np.ones(spec.shape)
    rng = np.random.default_rng([seed, zlib.crc32(spec.name.encode())])
    bound = math.sqrt(6.0 / spec.fan_in)
    return rng.uniform(-bound, bound, size=spec.shape)


class Model:
    """A built network: its config, its parameter store, and its forward pass."""

    def __init__(self, config: ArchConfig, store: ParamStore):
        self.config = config.resolved()
        self.store = store
        if self.config.family != "WidthMLP":
            self._sizes = _check_geometry(self.config)

    def __call__(self, x, training: bool = False) -> Tensor:
        return self.forward(x, training)

    def _p(self, name):
        return self.store.param(name)

    def _bn(self, h, name, training):
        s = self.store
        return T.batchnorm2d(
            h,
            s.param(f"{name}.weight"),
            s.param(f"{name}.bias"),
            s.buffers[f"{name}.running_mean"],
            s.buffers[f"{name}.running_var"],
            training,
            BN_MOMENTUM,
            BN_EPS,
        )

    def _ln(self, h, name):
        return T.layernorm(h, self._p(f"{name}.weight"), self._p(f"{name}.bias"), LN_EPS)

    def _fc(self, h, name):
        return T.dense(h, self._p(f"{name}.weight"), self._p(f"{name}.bias"))

    def forward(self, x, training: bool = False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.data.ndim != 4 or x.shape[1:] != cfg.input_shape:
            raise ConfigError(f"input shape {x.shape} does not match (N, {cfg.input_shape})")
        if cfg.family == "WidthMLP":
            return self._forward_mlp(x)
        return self._forward_conv(x, training)

    def _forward_mlp(self, x):
        cfg = self.config
        h = T.gelu(self._ln(self._fc(T.flatten(x), "stem.fc"), "stem.norm"))
        for i, n in enumerate(cfg.stage_layers):
            if i:
                h = self._fc(h, f"stage{i}.proj")
            for j in range(n):
                pre = f"stage{i}.block{j}"
                h = T.add(h, T.gelu(self._ln(self._fc(h, f"{pre}.fc"), f"{pre}.norm")))
        embed = T.reshape(self._p("head.class_embed"), (cfg.num_classes, cfg.stage_widths[-1]))
        return T.add(self._fc(h, "head"), T.matmul(h, T.transpose(embed)))

    def _forward_conv(self, x, training):
        cfg = self.config
        h = T.relu(self._bn(T.conv2d(x, self._p("stem.conv.weight"), 1, 1), "stem.bn", training))
        for i, n in enumerate(cfg.stage_layers):
            if i:
                h = T.conv2d(h, self._p(f"stage{i}.down.conv.weight"), 2, 0)
                h = T.relu(self._bn(h, f"stage{i}.down.bn", training))
            for j in range(n):
                pre = f"stage{i}.block{j}"
                if cfg.family == "DepthResNet":
                    r = T.conv2d(h, self._p(f"{pre}.conv0.weight"), 1, 1)
                    r = T.relu(self._bn(r, f"{pre}.bn0", training))
                    r = T.conv2d(r, self._p(f"{pre}.conv1.weight"), 1, 1)
                    r = self._bn(r, f"{pre}.bn1", training)
                else:
                    r = T.conv2d(h, self._p(f"{pre}.conv.weight"), 1, 1)
                    r = self._bn(r, f"{pre}.bn", training)
                h = T.relu(T.add(h, r))
        return self._fc(T.global_avg_pool(h), "head")

    def predict(self, x, batch_size: int = 512) -> np.ndarray:
        """Eval-mode argmax labels (ties resolve to the lowest class index)."""
        preds = []
        for start in range(0, len(x), batch_size):
            logits = self.forward(x[start:start + batch_size], training=False)
            preds.append(np.argmax(logits.data, axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def build(config: ArchConfig, seed: int) -> Model:
    """Deterministically initialize a model for ``config`` from ``seed``.

    Conv/dense weights and the class embedding are Kaiming-uniform over
    fan-in; biases and norm shifts start at zero, norm scales at one,
    running means at zero and running variances at one.
    """
    cfg = config.resolved()
    store = ParamStore()
    for spec in layout(cfg).specs:
        store.register(spec.name, _init_value(spec, seed), spec.trainable)
    return Model(cfg, store)  # validates conv geometry


def param_shapes(config: ArchConfig) -> Dict[str, Tuple[int, ...]]:
    return {s.name: s.shape for s in layout(config).specs}


# ---------------------------------------------------------------------------
# FLOPs
# ---------------------------------------------------------------------------

def conv_flops(cin: int, cout: int, k: int, out_h: int, out_w: int) -> int:
    return 2 * cout * cin * k * k * out_h * out_w


def dense_flops(inp: int, out: int, bias: bool = True) -> int:
    return 2 * inp * out + (out if bias else 0)


def flops_forward(config: ArchConfig) -> int:
    """Forward-pass FLOPs for one input example."""
    cfg = config.resolved()
    widths, layers = cfg.stage_widths, cfg.stage_layers
    C, H, W = cfg.input_shape
    total = 0
    if cfg.family == "WidthMLP":
        w0 = widths[0]
        total += dense_flops(C * H * W, w0) + (LAYERNORM_FLOPS + GELU_FLOPS) * w0
        for i, (w, n) in enumerate(zip(widths, layers)):
            if i:
                total += dense_flops(widths[i - 1], w)
            per_block = dense_flops(w, w) + (LAYERNORM_FLOPS + GELU_FLOPS + ADD_FLOPS) * w
            total += n * per_block
        K, d = cfg.num_classes, widths[-1]
        total += dense_flops(d, K) + 2 * d * K + ADD_FLOPS * K
        return total
    sizes = _check_geometry(cfg)
    area = H * W
    total += conv_flops(C, widths[0], 3, H, W) + (BATCHNORM_FLOPS + RELU_FLOPS) * widths[0] * area
    for i, (w, n) in enumerate(zip(widths, layers)):
        h, wd = sizes[i]
        area = h * wd
        if i:
            total += conv_flops(widths[i - 1], w, 2, h, wd) + (BATCHNORM_FLOPS + RELU_FLOPS) * w * area
        convs = 2 if cfg.family == "DepthResNet" else 1
        per_block = convs * (conv_flops(w, w, 3, h, wd) + BATCHNORM_FLOPS * w * area)
        per_block += (convs - 1) * RELU_FLOPS * w * area  # inner activation(s)
        per_block += (ADD_FLOPS + RELU_FLOPS) * w * area
        total += n * per_block
    total += POOL_FLOPS * widths[-1] * area
    total += dense_flops(widths[-1], cfg.num_classes)
    return total
