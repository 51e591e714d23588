"""Experiment configuration files.

UTF-8 ``key = value`` lines grouped under ``[section]`` headers, ``#`` comments.
Every key below is recognised; anything else is a :class:`ConfigError`.

``[experiment]``
    model           physics | e2e-tcn | motor-hybrid | accel-hybrid | combined-hybrid
    past_steps      P, history length fed to the predictor (default 90)
    future_steps    F, prediction horizon (default 90)
    stride          window stride for training (default 10)
    eval_stride     window stride for evaluation (default = stride)
    epochs          default 100
    batch_size      default 32
    learning_rate   default 1e-3
    seed            default 0
    test_fraction   held-out share of trajectories (default 0.1)
    out             output directory (default ``runs``)
    identify_physics  fit physics constants on the training split first (default false)

``[data]``
    source          synthetic | files
    files           glob of telemetry CSVs (source = files)
    rate            resampling rate in Hz for files (default 100)
    n_trajectories, duration, amplitude, f_min, f_max, perturbation   (source = synthetic)

``[network]``       any NetworkConfig field except past_steps/future_steps (dtype defaults to float32)
``[physics]``       PhysicsParams fields, inertia as inertia_xx/yy/zz
``[hybrid]``        history, num_blocks, kernel_size, channels (int or ``auto`` to match the
                    End2End parameter budget), train_stride
``[scaling]``       layers (comma list, default 5,8,10,12), timing_passes (default 100)
``[ablation]``      dropout_rate (default 0.1)
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..physics import DT, PhysicsParams
from ..tcn import NetworkConfig

MODEL_KINDS = ("physics", "e2e-tcn", "motor-hybrid", "accel-hybrid", "combined-hybrid")
HYBRID_VARIANTS = {"motor-hybrid": "motor", "accel-hybrid": "accel", "combined-hybrid": "combined"}


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    files: str = ""
    rate: float = 100.0
    n_trajectories: int = 40
    duration: float = 20.0
    amplitude: float = 0.15
    f_min: float = 0.2
    f_max: float = 2.0
    perturbation: float = 1.0

    def __post_init__(self):
        if self.source not in ("synthetic", "files"):
            raise ConfigError(f"data source must be 'synthetic' or 'files', got {self.source!r}")
        if self.source == "files" and not self.files:
            raise ConfigError("data source 'files' needs a files glob")
        if self.n_trajectories < 2 or self.duration <= 0 or self.rate <= 0:
            raise ConfigError("need n_trajectories >= 2, positive duration and rate")


@dataclass(frozen=True)
class HybridSection:
    history: int = 0  # 0 means past_steps
    num_blocks: int = 0  # 0 means the [network] value
    kernel_size: int = 0
    channels: str = "auto"
    train_stride: int = 1

    def __post_init__(self):
        if self.channels != "auto":
            try:
                if int(self.channels) < 1:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"hybrid channels must be 'auto' or a positive int, got {self.channels!r}") from None
        if self.history < 0 or self.num_blocks < 0 or self.kernel_size < 0 or self.train_stride < 1:
            raise ConfigError("hybrid history/num_blocks/kernel_size must be >= 0, train_stride >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "e2e-tcn"
    past_steps: int = 90
    future_steps: int = 90
    stride: int = 10
    eval_stride: int = 0  # 0 means stride
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    test_fraction: float = 0.1
    out: str = "runs"
    identify_physics: bool = False
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = None
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    hybrid: HybridSection = field(default_factory=HybridSection)
    scaling_layers: tuple = (5, 8, 10, 12)
    timing_passes: int = 100
    ablation_dropout: float = 0.1

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        for name in ("past_steps", "future_steps", "stride", "batch_size", "timing_passes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0 or self.eval_stride < 0 or self.learning_rate < 0:
            raise ConfigError("epochs, eval_stride and learning_rate must be >= 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if len(self.scaling_layers) < 2 or any(n < 1 for n in self.scaling_layers):
            raise ConfigError("scaling layers need at least two positive block counts")
        if not 0.0 <= self.ablation_dropout < 1.0:
            raise ConfigError("ablation dropout_rate must be in [0, 1)")
        net = self.network or NetworkConfig(dtype="float32")
        if net.past_steps != self.past_steps or net.future_steps != self.future_steps:
            net = net.replace(past_steps=self.past_steps, future_steps=self.future_steps)
        object.__setattr__(self, "network", net)
        if not self.eval_stride:
            object.__setattr__(self, "eval_stride", self.stride)
        if self.hybrid_history > self.past_steps:
            raise ConfigError("hybrid history cannot exceed past_steps")

    @property
    def dt(self) -> float:
        return 1.0 / self.data.rate if self.data.source == "files" else DT

    @property
    def hybrid_history(self) -> int:
        return self.hybrid.history or self.past_steps

    def with_overrides(self, seed=None, out=None) -> ExperimentConfig:
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if out is not None:
            changes["out"] = str(out)
        return replace(self, **changes) if changes else self

    # flat ``section.key`` mapping, used inside checkpoints
    def to_flat(self) -> dict:
        out = {}
        for section, mapping in self.sections().items():
            for k, v in mapping.items():
                out[f"{section}.{k}"] = v
        return out

    def sections(self) -> dict:
        exp = {f.name: _fmt(getattr(self, f.name)) for f in fields(self)
               if f.name not in ("data", "network", "physics", "hybrid", "scaling_layers",
                                 "timing_passes", "ablation_dropout")}
        net = {f.name: _fmt(getattr(self.network, f.name)) for f in fields(NetworkConfig)
               if f.name not in ("past_steps", "future_steps")}
        return {
            "experiment": exp,
            "data": {f.name: _fmt(getattr(self.data, f.name)) for f in fields(DataConfig)},
            "network": net,
            "physics": {k: _fmt(v) for k, v in self.physics.to_dict().items()},
            "hybrid": {f.name: _fmt(getattr(self.hybrid, f.name)) for f in fields(HybridSection)},
            "scaling": {"layers": _fmt(self.scaling_layers), "timing_passes": _fmt(self.timing_passes)},
            "ablation": {"dropout_rate": _fmt(self.ablation_dropout)},
        }

    def to_text(self) -> str:
        chunks = []
        for section, mapping in self.sections().items():
            chunks.append(f"[{section}]\n" + "".join(f"{k} = {v}\n" for k, v in mapping.items()))
        return "\n".join(chunks)

    @classmethod
    def from_flat(cls, flat: dict) -> ExperimentConfig:
        sections: dict = {}
        for key, value in flat.items():
            section, dot, name = key.partition(".")
            if not dot:
                continue
            sections.setdefault(section, {})[name] = value
        return from_sections(sections, require_sections=False)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(section, key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] bad value for {key}: {raw!r}") from None


def _build(cls, section, mapping, skip=()):
    known = {f.name: f for f in fields(cls) if f.name not in skip}
    kwargs = {}
    for key, raw in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        f = known[key]
        default = f.default if f.default is not None else ""
        kwargs[key] = _coerce(section, key, raw, default)
    return kwargs


SECTIONS = ("experiment", "data", "network", "physics", "hybrid", "scaling", "ablation")


def from_sections(sections: dict, require_sections: bool = True) -> ExperimentConfig:
    unknown = set(sections) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    nested = ("data", "network", "physics", "hybrid", "scaling_layers", "timing_passes", "ablation_dropout")
    exp = _build(ExperimentConfig, "experiment", sections.get("experiment", {}), skip=nested)
    model = exp.get("model", "e2e-tcn")
    if require_sections:
        needed = {"e2e-tcn": ("network",), "physics": ()}.get(model, ("network", "hybrid"))
        missing = [s for s in needed if s not in sections]
        if missing:
            raise ConfigError(f"model {model!r} needs config sections {missing}")

    data = DataConfig(**_build(DataConfig, "data", sections.get("data", {})))
    net_map = dict(sections.get("network", {}))
    for key in ("past_steps", "future_steps"):
        if key in net_map:
            raise ConfigError(f"[network] {key} is set through [experiment]")
    net_map.setdefault("dtype", "float32")
    net_map["past_steps"] = str(exp.get("past_steps", 90))
    net_map["future_steps"] = str(exp.get("future_steps", 90))
    network = NetworkConfig.from_mapping(net_map)
    try:
        physics = PhysicsParams.from_dict(sections.get("physics", {}))
    except ValueError as exc:
        raise ConfigError(f"[physics] {exc}") from None
    hybrid = HybridSection(**_build(HybridSection, "hybrid", sections.get("hybrid", {})))

    scaling = dict(sections.get("scaling", {}))
    layers = scaling.pop("layers", None)
    passes = scaling.pop("timing_passes", None)
    if scaling:
        raise ConfigError(f"unknown key(s) {sorted(scaling)} in [scaling]")
    ablation = dict(sections.get("ablation", {}))
    dropout = ablation.pop("dropout_rate", None)
    if ablation:
        raise ConfigError(f"unknown key(s) {sorted(ablation)} in [ablation]")
    extra = {}
    try:
        if layers is not None:
            extra["scaling_layers"] = tuple(int(p) for p in layers.split(",") if p.strip())
        if passes is not None:
            extra["timing_passes"] = int(passes)
        if dropout is not None:
            extra["ablation_dropout"] = float(dropout)
    except ValueError as exc:
        raise ConfigError(f"bad scaling/ablation value: {exc}") from None
    return ExperimentConfig(data=data, network=network, physics=physics, hybrid=hybrid, **exp, **extra)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_sections({s: dict(parser[s]) for s in parser.sections()})


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
