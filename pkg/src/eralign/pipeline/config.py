"""Versioned run configuration (YAML or JSON)."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from eralign.chem.energy import spec_from_dict, spec_to_dict
from eralign.core import DPO_TEMPERATURE, AlignmentParams
from eralign.errors import ConfigError, InvalidArgument
from eralign.model.training import AdamConfig
from eralign.model.transformer import ModelConfig

SCHEMA_VERSION = 1
TASKS = ("tabular", "gen-corpus", "pretrain", "gen-dataset", "align", "sample", "metrics")


@dataclass(frozen=True)
class CorpusSection:
    family: str = "mixed"
    size: int = 2000
    prompted_pairs: int = 0  # perturbation pairs per molecule for prompted fine-tuning


@dataclass(frozen=True)
class AlignSection:
    mode: str = "era"
    beta: tuple = (1.0,)  # sweep lists; each (beta, gamma) grid point is a separate run
    gamma: tuple = (0.0,)
    dpo_temperature: float = DPO_TEMPERATURE

    def grid(self) -> list[AlignmentParams]:
        return [AlignmentParams(b, g) for b, g in itertools.product(self.beta, self.gamma)]


@dataclass(frozen=True)
class DatasetSection:
    k: int = 4
    groups: int = 500  # repeats of the start-token prompt when no prompt file is given


@dataclass(frozen=True)
class SamplingSection:
    n_samples: int = 1000
    temperature: float = 1.0
    properties: tuple = ("ring_count", "logp")


@dataclass(frozen=True)
class Paths:
    corpus: str | None = None
    prompts: str | None = None
    reference: str | None = None
    checkpoint: str | None = None
    dataset: str | None = None
    output: str | None = None
    log: str | None = None
    property_table: str | None = None


@dataclass(frozen=True)
class RunConfig:
    task: str = "align"
    seed: int | None = None
    model: ModelConfig = field(default_factory=lambda: ModelConfig(max_len=64))
    pretrain: AdamConfig = field(default_factory=lambda: AdamConfig(lr=1e-3, epochs=20, batch_size=64))
    align_opt: AdamConfig = field(default_factory=lambda: AdamConfig(lr=1e-4, epochs=3, batch_size=32))
    align: AlignSection = field(default_factory=AlignSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    energy: object = None
    paths: Paths = field(default_factory=Paths)
    version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.version != SCHEMA_VERSION:
            raise ConfigError(f"config schema version {self.version} unsupported (expected {SCHEMA_VERSION})")
        if self.align.mode not in ("era", "dpo"):
            raise ConfigError(f"unknown alignment mode {self.align.mode!r}")
        if self.dataset.k < 2:
            raise ConfigError("dataset.k must be at least 2")
        if self.sampling.n_samples < 1 or not self.sampling.temperature > 0:
            raise ConfigError("sampling needs n_samples >= 1 and temperature > 0")
        try:
            self.align.grid()
        except InvalidArgument as e:
            raise ConfigError(str(e)) from None

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required for this command")
        return self.seed

    def require_paths(self, *names, must_exist=()) -> None:
        for n in names:
            if getattr(self.paths, n) is None:
                raise ConfigError(f"missing path: {n}")
        for n in must_exist:
            p = getattr(self.paths, n)
            if p is None or not Path(p).exists():
                raise ConfigError(f"{n} file not found: {p}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["energy"] = spec_to_dict(self.energy) if self.energy is not None else None
        return d


_SECTIONS = {
    "model": ModelConfig,
    "pretrain": AdamConfig,
    "align_opt": AdamConfig,
    "align": AlignSection,
    "corpus": CorpusSection,
    "dataset": DatasetSection,
    "sampling": SamplingSection,
    "paths": Paths,
}
_TUPLES = {"beta", "gamma", "properties"}


def _section(cls, d, name):
    if not isinstance(d, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
    d = {k: (tuple(v) if isinstance(v, list) else (v,) if k in _TUPLES and not isinstance(v, tuple) else v) for k, v in d.items()}
    try:
        return cls(**d)
    except (TypeError, InvalidArgument) as e:
        raise ConfigError(f"section {name!r}: {e}") from None


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    kw = {}
    for k, v in d.items():
        if k in _SECTIONS:
            kw[k] = _section(_SECTIONS[k], v or {}, k)
        elif k == "energy":
            try:
                kw[k] = spec_from_dict(v) if v is not None else None
            except (InvalidArgument, TypeError, KeyError) as e:
                raise ConfigError(f"energy: {e}") from None
        else:
            kw[k] = v
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_dict(data or {})


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=True))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def override(cfg: RunConfig, section: str | None, **changes) -> RunConfig:
    """Copy of ``cfg`` with non-None ``changes`` applied to a section (or the top level)."""
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return cfg
    try:
        if section is None:
            return replace(cfg, **changes)
        return replace(cfg, **{section: replace(getattr(cfg, section), **changes)})
    except (TypeError, InvalidArgument) as e:
        raise ConfigError(str(e)) from None
