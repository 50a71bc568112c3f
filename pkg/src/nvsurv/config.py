"""Pipeline configuration: one TOML file, one table per stage, CLI overrides.

Every table maps onto a frozen dataclass, so a bad value fails in that
dataclass's validation before any stage runs. Unknown tables or keys are
rejected with the dotted key in the message.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cnn.network import ARCHITECTURES
from .cnn.train import TrainConfig
from .dataset import DatasetConfig, ProposalConfig
from .events import CLASS_INDEX, CLASSES
from .frames import FrameConfig, Representation
from .proposals import ProposalSource
from .synth import ScenePlan


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    """Scene-set recipe: how many scenes and what goes into each."""

    train_scenes: int = 10
    test_scenes: int = 2
    seed: int = 0
    tracks_per_class: dict = field(default_factory=lambda: {c: 4 for c in CLASSES})
    lanes: int = 3
    speed_range: tuple = (70.0, 130.0)
    gap_range: tuple = (30.0, 90.0)
    size_jitter: int = 0
    edge_event_rate: float = 100.0
    noise_rate: float = 0.5
    edge_thickness: int = 2

    def __post_init__(self):
        if self.train_scenes < 1 or self.test_scenes < 1:
            raise ConfigError("synth.train_scenes and synth.test_scenes must be >= 1")
        for name in self.tracks_per_class:
            if name not in CLASS_INDEX:
                raise ConfigError(f"synth.tracks_per_class: unknown class {name!r}; "
                                  f"expected one of {', '.join(CLASSES)}")
        object.__setattr__(self, "speed_range", tuple(self.speed_range))
        object.__setattr__(self, "gap_range", tuple(self.gap_range))
        self.plan()

    def plan(self) -> ScenePlan:
        try:
            return ScenePlan(
                tracks_per_class=dict(self.tracks_per_class),
                lanes=self.lanes,
                speed_range=self.speed_range,
                gap_range=self.gap_range,
                size_jitter=self.size_jitter,
                edge_event_rate=self.edge_event_rate,
                noise_rate=self.noise_rate,
                edge_thickness=self.edge_thickness,
            )
        except ValueError as e:
            raise ConfigError(f"synth.{e}") from e

    def scene_seed(self, index: int) -> int:
        return self.seed * 1000 + index


@dataclass(frozen=True)
class RunConfig:
    rp: str = "ccl"
    repr: str = "1b2c"
    arch: str = "BL"
    balance: bool = True

    def __post_init__(self):
        _choice("run.rp", self.rp, [s.value for s in ProposalSource])
        _choice("run.repr", self.repr, [r.value for r in Representation])
        _choice("run.arch", self.arch, list(ARCHITECTURES))


def _choice(key, value, valid):
    if value not in valid:
        raise ConfigError(f"{key}: {value!r} is not one of {', '.join(valid)}")


SECTIONS = {
    "synth": SynthConfig,
    "frames": FrameConfig,
    "proposals": ProposalConfig,
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "run": RunConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    synth: SynthConfig = SynthConfig()
    frames: FrameConfig = FrameConfig()
    proposals: ProposalConfig = ProposalConfig()
    dataset: DatasetConfig = DatasetConfig()
    train: TrainConfig = TrainConfig()
    run: RunConfig = RunConfig()

    @classmethod
    def from_dict(cls, data: dict) -> PipelineConfig:
        kwargs = {}
        for section, value in data.items():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config table {section!r}; expected one of "
                                  f"{', '.join(SECTIONS)}")
            if not isinstance(value, dict):
                raise ConfigError(f"{section}: expected a table")
            kwargs[section] = _build(section, SECTIONS[section], value)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def _build(section, klass, values):
    names = {f.name for f in dataclasses.fields(klass)}
    for key in values:
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
    if klass is ProposalConfig and "patch" in values:
        values = {**values, "patch": tuple(values["patch"])}
    try:
        return klass(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from e


def parse_override(text: str) -> tuple[str, str, object]:
    """``"train.epochs=5"`` -> ``("train", "epochs", 5)``; values are TOML literals,
    falling back to a bare string."""
    key, sep, raw = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not name:
        raise ConfigError(f"override {text!r} must look like table.key=value")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return section, name, value


def load_config(path=None, overrides=()) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    for text in overrides:
        section, name, value = parse_override(text)
        data.setdefault(section, {})[name] = value
    return PipelineConfig.from_dict(data)
