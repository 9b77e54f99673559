# shepherd/runconfig.py
"""
Run configuration: a YAML file with sections, parsed into frozen dataclasses.

    seed: 7
    workers: 1
    dataset:     {source: simulate|ingest|load, path, files, labels, per_class, length, fs, snr_db, beta, train_frac}
    transform:   {domain, window_len, hop, window, env_max_hz}
    patch:       {shape, levels}
    attribution: {methods, samples, max_samples, k_p, scale_factors, max_d, reference, repetitions}
    background:  {per_class, seed}
    predictor:   {source: fit-reference|reference|mlp, path, gamma}
    output:      {dir}

Unknown keys anywhere are rejected. CLI flags override file values.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar

import yaml

from .attribution import DEFAULT_KP, DEFAULT_MAX_D, DEFAULT_SCALE_FACTORS, METHODS
from .errors import ConfigError, ParameterError
from .patching import PatchSpec
from .simgen import DEFAULT_BETA, DEFAULT_FS, DEFAULT_LENGTH
from .transforms import DEFAULT_ENV_MAX_HZ, DomainTag, StftConfig

T = TypeVar("T")

DATASET_SOURCES = ("simulate", "ingest", "load")
PREDICTOR_SOURCES = ("fit-reference", "reference", "mlp")


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "simulate"
    path: Optional[str] = None
    files: Tuple[str, ...] = ()
    labels: Optional[Dict[str, str]] = None
    per_class: int = 50
    length: int = DEFAULT_LENGTH
    fs: Optional[float] = DEFAULT_FS
    snr_db: float = 0.0
    beta: float = DEFAULT_BETA
    train_frac: float = 0.7


@dataclass(frozen=True)
class TransformConfig:
    domain: str = "freq"
    window_len: int = 50
    hop: int = 10
    window: str = "hann"
    env_max_hz: Optional[float] = DEFAULT_ENV_MAX_HZ

    @property
    def stft(self) -> StftConfig:
        return StftConfig(window_len=self.window_len, hop=self.hop, window=self.window)


@dataclass(frozen=True)
class PatchConfig:
    shape: str = "48"
    levels: Tuple[str, ...] = ()


@dataclass(frozen=True)
class AttributionConfig:
    methods: Tuple[str, ...] = ("shep",)
    samples: Optional[Tuple[int, ...]] = None
    max_samples: Optional[int] = None
    k_p: int = DEFAULT_KP
    scale_factors: Tuple[float, ...] = DEFAULT_SCALE_FACTORS
    max_d: int = DEFAULT_MAX_D
    reference: str = "shap_exact"
    repetitions: int = 5


@dataclass(frozen=True)
class BackgroundConfig:
    per_class: int = 5
    seed: Optional[int] = None


@dataclass(frozen=True)
class PredictorConfig:
    source: str = "fit-reference"
    path: Optional[str] = None
    gamma: float = 5.0


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    transform: TransformConfig = field(default_factory=TransformConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    attribution: AttributionConfig = field(default_factory=AttributionConfig)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def background_seed(self) -> int:
        return self.seed if self.background.seed is None else self.background.seed

    def validate(self) -> "RunConfig":
        ds = self.dataset
        if ds.source not in DATASET_SOURCES:
            raise ConfigError(f"dataset.source must be one of {DATASET_SOURCES}, got {ds.source!r}")
        if ds.source == "simulate" and ds.per_class < 2:
            raise ConfigError(f"dataset.per_class must be >= 2, got {ds.per_class}")
        if ds.source == "load" and not ds.path:
            raise ConfigError("dataset.source=load needs dataset.path")
        if ds.length < 2:
            raise ConfigError(f"dataset.length must be >= 2, got {ds.length}")
        if not (0.0 < ds.train_frac < 1.0):
            raise ConfigError(f"dataset.train_frac must lie in (0, 1), got {ds.train_frac}")
        try:
            DomainTag.parse(self.transform.domain)
            PatchSpec.parse(self.patch.shape)
            for level in self.patch.levels:
                PatchSpec.parse(level)
        except ParameterError as e:
            raise ConfigError(str(e)) from None
        self.transform.stft.validate()
        unknown = [m for m in self.attribution.methods if m not in METHODS]
        if self.attribution.reference not in METHODS:
            unknown.append(self.attribution.reference)
        if unknown:
            raise ConfigError(f"unknown method(s) {unknown}; expected from {', '.join(METHODS)}")
        if self.attribution.k_p < 1:
            raise ConfigError(f"attribution.k_p must be >= 1, got {self.attribution.k_p}")
        if not self.attribution.scale_factors or any(f < 0 for f in self.attribution.scale_factors):
            raise ConfigError(f"attribution.scale_factors must be non-empty and >= 0, got {self.attribution.scale_factors}")
        if self.attribution.repetitions < 1:
            raise ConfigError("attribution.repetitions must be >= 1")
        if self.background.per_class < 1:
            raise ConfigError(f"background.per_class must be >= 1, got {self.background.per_class}")
        if self.predictor.source not in PREDICTOR_SOURCES:
            raise ConfigError(f"predictor.source must be one of {PREDICTOR_SOURCES}, got {self.predictor.source!r}")
        if self.predictor.source != "fit-reference" and not self.predictor.path:
            raise ConfigError(f"predictor.source={self.predictor.source} needs predictor.path")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def override(self, section: Optional[str] = None, **values: Any) -> "RunConfig":
        """Replaces the given keys (None values are skipped) at top level or in one section."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        if section is None:
            return replace(self, **values)
        return replace(self, **{section: replace(getattr(self, section), **values)})


_SECTIONS: Dict[str, Type[Any]] = {
    "dataset": DatasetConfig,
    "transform": TransformConfig,
    "patch": PatchConfig,
    "attribution": AttributionConfig,
    "background": BackgroundConfig,
    "predictor": PredictorConfig,
    "output": OutputConfig,
}


def _coerce(value: Any, default: Any) -> Any:
    if isinstance(default, tuple) or (value is not None and isinstance(value, list)):
        if isinstance(value, (str, int, float)):
            return (value,)
        return tuple(value)
    return value


def _section(cls: Type[T], data: Any, where: str) -> T:
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    defaults = cls()
    kwargs = {k: _coerce(v, getattr(defaults, k)) for k, v in data.items()}
    if "shape" in kwargs and not isinstance(kwargs["shape"], str):
        kwargs["shape"] = PatchSpec.parse(kwargs["shape"]).label()
    if "levels" in kwargs:
        kwargs["levels"] = tuple(l if isinstance(l, str) else PatchSpec.parse(l).label() for l in kwargs["levels"])
    return cls(**kwargs)


def parse_run_config(data: Any) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError("run config must be a mapping at top level")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")
    kwargs: Dict[str, Any] = {name: _section(cls, data.get(name), name) for name, cls in _SECTIONS.items()}
    for key in ("seed", "workers"):
        if key in data:
            try:
                kwargs[key] = int(data[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{key} must be an integer, got {data[key]!r}") from None
    return RunConfig(**kwargs)


def load_run_config(path: Optional["str | Path"]) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from None
    return parse_run_config(data)
