"""Network hyper-parameters and their flat text serialization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields, replace

from ..errors import ConfigError

LOSS_KINDS = ("L1", "L2", "WL2")
# body rates weighted above velocities
DEFAULT_WL2_WEIGHTS = (2.0, 2.0, 2.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and loss settings for one fully convolutional predictor.

    ``channels`` may be given as an int (same width for every block) and is
    normalized to a per-block tuple. ``dilation_growth`` selects how dilations
    are laid out: ``"block"`` gives both convolutions of block ``i`` dilation
    ``2**i``; ``"layer"`` doubles per convolution and restarts at 1 in every
    block.
    """

    num_blocks: int = 8
    kernel_size: int = 3
    channels: tuple = 64
    past_steps: int = 90
    future_steps: int = 90
    input_channels: int = 16
    output_channels: int = 6
    use_batchnorm: bool = True
    dropout_rate: float = 0.0
    loss_kind: str = "L1"
    wl2_weights: tuple = DEFAULT_WL2_WEIGHTS
    shortened_gradient: bool = False
    injection_layer: int = -1  # -1 means num_blocks // 2
    dilation_growth: str = "block"
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        ch = self.channels
        if isinstance(ch, int):
            ch = (ch,) * self.num_blocks
        ch = tuple(int(c) for c in ch)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "wl2_weights", tuple(float(w) for w in self.wl2_weights))
        if self.injection_layer < 0:
            object.__setattr__(self, "injection_layer", self.num_blocks // 2)
        self.validate()

    def validate(self):
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.kernel_size < 1:
            raise ConfigError("kernel_size must be >= 1")
        if len(self.channels) != self.num_blocks or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be {self.num_blocks} positive widths, got {self.channels}")
        if self.past_steps < 1 or self.future_steps < 1:
            raise ConfigError("past_steps and future_steps must be >= 1")
        if self.input_channels < 1 or self.output_channels < 1:
            raise ConfigError("input/output channel counts must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if len(self.wl2_weights) != self.output_channels:
            raise ConfigError("wl2_weights needs one weight per output channel")
        if self.dilation_growth not in ("block", "layer"):
            raise ConfigError("dilation_growth must be 'block' or 'layer'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.shortened_gradient:
            if not 0 <= self.injection_layer < self.num_blocks:
                raise ConfigError("injection_layer must index a block")
            if self.input_channels < 4:
                raise ConfigError("shortened gradient needs the four control rows in the input")
        rf = receptive_field(self)
        if not self.shortened_gradient and rf < self.seq_len:
            warnings.warn(
                f"receptive field {rf} is shorter than the input window {self.seq_len}",
                stacklevel=3,
            )

    @property
    def seq_len(self) -> int:
        return self.past_steps + self.future_steps

    def dilations(self) -> list[tuple[int, int]]:
        """``(conv1, conv2)`` dilation pair for every residual block."""
        if self.dilation_growth == "block":
            return [(2 ** i, 2 ** i) for i in range(self.num_blocks)]
        return [(1, 2)] * self.num_blocks

    def replace(self, **changes) -> NetworkConfig:
        if "num_blocks" in changes and "channels" not in changes:
            changes["channels"] = self.channels[0]
        if "num_blocks" in changes and "injection_layer" not in changes:
            changes["injection_layer"] = -1
        return replace(self, **changes)

    # flat ``key = value`` text, used in config files and checkpoints

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, d: dict) -> NetworkConfig:
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in d.items():
            if key not in known:
                raise ConfigError(f"unknown network key {key!r}")
            kwargs[key] = _coerce(key, raw, known[key].default)
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> NetworkConfig:
        d = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"malformed config line {line!r}")
            k, v = line.split("=", 1)
            d[k.strip()] = v.strip()
        return cls.from_mapping(d)


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if key == "channels":
            parts = [int(p) for p in raw.split(",") if p.strip()]
            return parts[0] if len(parts) == 1 else tuple(parts)
        if isinstance(default, tuple):
            return tuple(float(p) for p in raw.split(",") if p.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def receptive_field_of(kernel_size: int, dilations) -> int:
    """``1 + sum((k - 1) * d)`` over a flat list of layer dilations."""
    return 1 + sum((kernel_size - 1) * d for d in dilations)


def receptive_field(config: NetworkConfig) -> int:
    return receptive_field_of(config.kernel_size, [d for pair in config.dilations() for d in pair])
