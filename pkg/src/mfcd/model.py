"""Scaled-down multi-fiber 3D CNN with hint-capture points.

The building block is a fiber unit: a pointwise (1x1x1) multiplexer
convolution over all channels, a grouped 3x3x3 convolution whose groups
are the fibers, a closing pointwise convolution, and an additive skip
connection when shapes match.  Each stage ends at a hint tap whose
features feed the distillation hint loss.

Also provides exact parameter counting and FLOP accounting (2 FLOPs per
multiply-accumulate; elementwise ops counted once per element).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

__all__ = [
    "ModelConfig",
    "Model",
    "build",
    "count_params",
    "count_flops",
    "conv3d_flops",
    "linear_flops",
    "parse_model_config",
    "load_model_config",
    "save_model_config",
    "DEFAULT_CONFIG",
]


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    clip_len: int = 12
    height: int = 32
    width: int = 32
    stage_widths: tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 1
    fibers: int = 4
    classes: int = 8
    temporal_stride: int = 1     # first block of each stage
    spatial_stride: int = 2      # first block of each stage

    def validate(self) -> None:
        if len(self.stage_widths) < 1:
            raise ValueError("at least one stage is required")
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        if self.fibers < 1:
            raise ValueError("fibers must be >= 1")
        for width in self.stage_widths:
            if width % self.fibers != 0:
                raise ValueError(
                    f"stage width {width} is not divisible by fibers={self.fibers}")
        if self.in_channels < 1 or self.clip_len < 1:
            raise ValueError("in_channels and clip_len must be >= 1")


DEFAULT_CONFIG = ModelConfig()


def _kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int,
                     dtype) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _Conv:
    def __init__(self, rng, name, cin, cout, kernel, stride, padding, groups, dtype):
        self.name = name
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (cin // groups) * kernel ** 3
        self.weight = T.Tensor(
            _kaiming_uniform(rng, (cout, cin // groups, kernel, kernel, kernel),
                             fan_in, dtype),
            requires_grad=True)
        self.bias = T.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.conv3d(x, self.weight, self.bias,
                        stride=self.stride, padding=self.padding, groups=self.groups)

    def params(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]


class _Norm:
    def __init__(self, name, channels, dtype):
        self.name = name
        self.gamma = T.Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = T.Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def __call__(self, x, batch_stats=False):
        return T.channel_norm(x, self.gamma, self.beta, batch_stats=batch_stats)

    def params(self):
        return [(f"{self.name}.gamma", self.gamma), (f"{self.name}.beta", self.beta)]


class _FiberUnit:
    """pointwise conv -> grouped 3x3x3 conv -> pointwise conv, each with a
    per-channel norm; skip connection when input and output shapes match."""

    def __init__(self, rng, name, cin, cout, groups, stride, dtype):
        self.name = name
        self.has_skip = cin == cout and stride == (1, 1, 1)
        self.conv_in = _Conv(rng, f"{name}.conv_in", cin, cout, 1, (1, 1, 1),
                             (0, 0, 0), 1, dtype)
        self.norm_in = _Norm(f"{name}.norm_in", cout, dtype)
        self.conv_fiber = _Conv(rng, f"{name}.conv_fiber", cout, cout, 3, stride,
                                (1, 1, 1), groups, dtype)
        self.norm_fiber = _Norm(f"{name}.norm_fiber", cout, dtype)
        self.conv_out = _Conv(rng, f"{name}.conv_out", cout, cout, 1, (1, 1, 1),
                              (0, 0, 0), 1, dtype)
        self.norm_out = _Norm(f"{name}.norm_out", cout, dtype)

    def __call__(self, x, batch_stats=False):
        y = T.relu(self.norm_in(self.conv_in(x), batch_stats))
        y = T.relu(self.norm_fiber(self.conv_fiber(y), batch_stats))
        y = self.norm_out(self.conv_out(y), batch_stats)
        if self.has_skip:
            y = T.add(y, x)
        return T.relu(y)

    def params(self):
        out = []
        for layer in (self.conv_in, self.norm_in, self.conv_fiber,
                      self.norm_fiber, self.conv_out, self.norm_out):
            out.extend(layer.params())
        return out


class Model:
    """Mini multi-fiber 3D CNN: stages of fiber units, global average
    pooling, and a linear classifier head."""

    def __init__(self, config: ModelConfig, seed: int, dtype=np.float64):
        config.validate()
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.Generator(np.random.PCG64(seed))
        self.stages: list[list[_FiberUnit]] = []
        cin = config.in_channels
        for si, width in enumerate(config.stage_widths):
            blocks = []
            for bi in range(config.blocks_per_stage):
                # stage 0 keeps full resolution so slow motion stays salient;
                # later stages downsample in their first block
                stride = ((config.temporal_stride, config.spatial_stride,
                           config.spatial_stride) if bi == 0 and si > 0
                          else (1, 1, 1))
                blocks.append(_FiberUnit(rng, f"stage{si}.block{bi}", cin, width,
                                         config.fibers, stride, self.dtype))
                cin = width
            self.stages.append(blocks)
        self.head_weight = T.Tensor(
            _kaiming_uniform(rng, (config.classes, cin), cin, self.dtype),
            requires_grad=True)
        self.head_bias = T.Tensor(np.zeros(config.classes, dtype=self.dtype),
                                  requires_grad=True)

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        out = []
        for blocks in self.stages:
            for block in blocks:
                out.extend(block.params())
        out.append(("head.weight", self.head_weight))
        out.append(("head.bias", self.head_bias))
        return out

    def num_params(self) -> int:
        return sum(p.data.size for _, p in self.parameters())

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    def forward(self, clip, capture_hints: bool = False, batch_stats: bool = False):
        """Run a (N, C, K, H, W) batch; returns (logits, hints or None).

        The input stem standardizes each sample per channel (zero mean, unit
        variance over the clip).  This is parameter-free and batch
        independent; it removes the per-sample color offset so the network
        sees content rather than palette.
        """
        x = clip if isinstance(clip, T.Tensor) else T.Tensor(
            np.asarray(clip, dtype=self.dtype))
        expected = (self.config.in_channels, self.config.clip_len,
                    self.config.height, self.config.width)
        if x.data.ndim != 5 or x.shape[1:] != expected:
            raise ValueError(
                f"forward: clip shape {x.shape} does not match config (N, {expected})")
        data = np.asarray(x.data, dtype=self.dtype)
        mu = data.mean(axis=(2, 3, 4), keepdims=True)
        sd = np.sqrt(data.var(axis=(2, 3, 4), keepdims=True) + 1e-5)
        x = T.Tensor((data - mu) / sd)
        hints: list[T.Tensor] = []
        for blocks in self.stages:
            for block in blocks:
                x = block(x, batch_stats)
            hints.append(x)
        pooled = T.global_avg_pool(x)
        logits = T.linear(pooled, self.head_weight, self.head_bias)
        return logits, (hints if capture_hints else None)

    def state_dict(self) -> list[tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.parameters()]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(T.save_checkpoint(self.state_dict()))

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            if name not in state:
                raise ValueError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != {p.shape}")
            p.data[...] = arr.astype(self.dtype)

    @classmethod
    def load(cls, path, config: ModelConfig, seed: int = 0, dtype=np.float64) -> "Model":
        model = cls(config, seed, dtype)
        with open(path, "rb") as fh:
            model.load_state_dict(T.load_checkpoint(fh.read()))
        return model


def build(config: ModelConfig, seed: int, dtype=np.float64) -> Model:
    """Deterministic model construction: same seed, same parameter bytes."""
    return Model(config, seed, dtype)


# ---------------------------------------------------------------------------
# exact accounting

def count_params(config: ModelConfig) -> int:
    """Closed-form scalar parameter count of build(config)."""
    config.validate()
    total = 0
    cin = config.in_channels
    for width in config.stage_widths:
        for _ in range(config.blocks_per_stage):
            total += width * cin + width          # conv_in
            total += 2 * width                    # norm_in
            total += width * (width // config.fibers) * 27 + width   # conv_fiber
            total += 2 * width                    # norm_fiber
            total += width * width + width        # conv_out
            total += 2 * width                    # norm_out
            cin = width
    total += config.classes * cin + config.classes   # head
    return total


def conv3d_flops(cin: int, cout: int, kernel: int, groups: int,
                 out_cells: int, bias: bool = True) -> int:
    """2 FLOPs per MAC plus one add per output element for the bias."""
    flops = 2 * (cin // groups) * cout * kernel ** 3 * out_cells
    if bias:
        flops += cout * out_cells
    return flops


def linear_flops(din: int, dout: int, bias: bool = True) -> int:
    return 2 * din * dout + (dout if bias else 0)


def _out_len(n: int, stride: int) -> int:
    # 3x3x3 convs use padding 1, so the length only shrinks by the stride
    return (n + 2 - 3) // stride + 1


def count_flops(config: ModelConfig, input_shape: tuple | None = None) -> int:
    """Per-sample forward FLOPs for the full network.

    Conventions: 2 FLOPs per multiply-accumulate, 1 per bias add, 2 per
    normalized element (scale + shift), 1 per ReLU element, 1 per skip-add
    element, 1 per accumulated element plus 1 division per channel for the
    pooling, and 5 per input element for the standardization stem (mean,
    variance, subtract, divide).
    """
    config.validate()
    if input_shape is None:
        t, h, w = config.clip_len, config.height, config.width
    else:
        _, _, t, h, w = input_shape
    cin = config.in_channels
    total = 5 * cin * t * h * w                                      # input stem
    for si, width in enumerate(config.stage_widths):
        for bi in range(config.blocks_per_stage):
            stride = ((config.temporal_stride, config.spatial_stride,
                       config.spatial_stride) if bi == 0 and si > 0
                      else (1, 1, 1))
            has_skip = cin == width and stride == (1, 1, 1)
            cells = t * h * w
            total += conv3d_flops(cin, width, 1, 1, cells)           # conv_in
            total += 3 * width * cells                               # norm + relu
            t, h, w = (_out_len(n, s) for n, s in zip((t, h, w), stride))
            out_cells = t * h * w
            total += conv3d_flops(width, width, 3, config.fibers, out_cells)
            total += 3 * width * out_cells                           # norm + relu
            total += conv3d_flops(width, width, 1, 1, out_cells)     # conv_out
            total += 2 * width * out_cells                           # norm_out
            if has_skip:
                total += width * out_cells                           # skip add
            total += width * out_cells                               # final relu
            cin = width
    total += cin * t * h * w + cin                                   # global avg pool
    total += linear_flops(cin, config.classes)
    return total


# ---------------------------------------------------------------------------
# flat key=value config files

_CONFIG_KEYS = ("in_channels", "clip_len", "height", "width", "stage_widths",
                "blocks_per_stage", "fibers", "classes", "seed")


def parse_model_config(text: str) -> tuple[ModelConfig, int]:
    """Parse flat key=value text ("#" comments); returns (config, seed)."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = val
    kwargs = {}
    seed = int(values.pop("seed", "0"))
    for key, val in values.items():
        if key == "stage_widths":
            kwargs[key] = tuple(int(v) for v in val.split(","))
        else:
            kwargs[key] = int(val)
    config = ModelConfig(**kwargs)
    config.validate()
    return config, seed


def load_model_config(path) -> tuple[ModelConfig, int]:
    with open(path, encoding="utf-8") as fh:
        return parse_model_config(fh.read())


def save_model_config(path, config: ModelConfig, seed: int) -> None:
    lines = [
        f"in_channels = {config.in_channels}",
        f"clip_len = {config.clip_len}",
        f"height = {config.height}",
        f"width = {config.width}",
        "stage_widths = " + ",".join(str(w) for w in config.stage_widths),
        f"blocks_per_stage = {config.blocks_per_stage}",
        f"fibers = {config.fibers}",
        f"classes = {config.classes}",
        f"seed = {seed}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
