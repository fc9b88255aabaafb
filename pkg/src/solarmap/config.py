"""Pipeline configuration: one TOML file, schema-validated (unknown keys
rejected), defaults mirroring the published training recipe.

Sections: data, split, classifier, attribution, pseudolabels, mapper,
correction, eval, paths, plus a top-level seed. Section seeds left unset
derive deterministically from the top-level seed.
"""

from __future__ import annotations

import json
import os
import sys
import typing
from dataclasses import MISSING, asdict, dataclass, fields, is_dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .classifier import ClassifierConfig
from .correction import CorrectionParams
from .data import SynthConfig
from .errors import BadConfig, ConfigError
from .mapper import MapperConfig

ARTIFACT_ROOT_ENV = "SOLARMAP_ARTIFACT_ROOT"


@dataclass
class SplitConfig:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0


@dataclass
class AttributionConfig:
    layer: str = "conv4_3"
    class_id: str = "positive"


@dataclass
class MiningConfig:
    tau: float = 0.5


@dataclass
class EvalConfig:
    theta_sq: float = 0.3
    thresholds: int = 256
    aggregation: str = "global"


@dataclass
class PathsConfig:
    artifact_root: Path = Path("artifacts")
    data_root: Path | None = None  # defaults to <artifact_root>/data


@dataclass
class PipelineConfig:
    seed: int = 0
    data: SynthConfig = None
    split: SplitConfig = None
    classifier: ClassifierConfig = None
    attribution: AttributionConfig = None
    pseudolabels: MiningConfig = None
    mapper: MapperConfig = None
    correction: CorrectionParams = None
    eval: EvalConfig = None
    paths: PathsConfig = None

    @property
    def artifact_root(self) -> Path:
        env = os.environ.get(ARTIFACT_ROOT_ENV)
        return Path(env) if env else Path(self.paths.artifact_root)

    @property
    def data_root(self) -> Path:
        if self.paths.data_root is not None:
            return Path(self.paths.data_root)
        return self.artifact_root / "data"

    def to_dict(self) -> dict:
        def clean(value):
            if isinstance(value, Path):
                return str(value)
            if isinstance(value, tuple):
                return list(value)
            if isinstance(value, dict):
                return {k: clean(v) for k, v in value.items()}
            return value

        out = {"seed": self.seed}
        for name in _SECTIONS:
            section = getattr(self, name)
            out[name] = {k: clean(v) for k, v in asdict(section).items()}
        return out

    def content_hash_payload(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


_SECTIONS: dict[str, type] = {
    "data": SynthConfig,
    "split": SplitConfig,
    "classifier": ClassifierConfig,
    "attribution": AttributionConfig,
    "pseudolabels": MiningConfig,
    "mapper": MapperConfig,
    "correction": CorrectionParams,
    "eval": EvalConfig,
    "paths": PathsConfig,
}

# per-section offsets for seeds derived from the top-level seed
_SEED_OFFSETS = {"data": 3, "split": 4, "classifier": 1, "mapper": 2}


def _coerce(value, hint, where: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union:  # Optional[...]
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if hint is Path:
        if not isinstance(value, (str, Path)):
            raise ConfigError(f"{where}: expected a path string, got {value!r}")
        return Path(value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if origin is tuple:
        args = typing.get_args(hint)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} elements, got {len(value)}")
        return tuple(_coerce(v, a, where) for v, a in zip(value, args))
    raise ConfigError(f"{where}: unsupported config field type {hint}")


def _build_section(cls, raw: dict, section: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {unknown}")
    kwargs = {}
    for f in fields(cls):
        if f.name in raw:
            kwargs[f.name] = _coerce(raw[f.name], hints[f.name], f"[{section}].{f.name}")
        elif f.default is not MISSING:
            kwargs[f.name] = f.default
        elif f.default_factory is not MISSING:  # type: ignore[misc]
            kwargs[f.name] = f.default_factory()  # type: ignore[misc]
        else:
            raise ConfigError(f"[{section}].{f.name} is required")
    return cls(**kwargs)


def build_config(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a table")
    unknown = sorted(set(doc) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")

    cfg = PipelineConfig(seed=seed)
    for name, cls in _SECTIONS.items():
        raw = doc.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"[{name}] must be a table")
        section = _build_section(cls, raw, name)
        if name in _SEED_OFFSETS and "seed" not in raw:
            section.seed = seed * 10 + _SEED_OFFSETS[name]
        setattr(cfg, name, section)

    try:
        cfg.data.validate()
        cfg.classifier.validate()
        cfg.mapper.validate()
        cfg.correction.validate()
    except (ValueError, BadConfig) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.eval.aggregation not in ("global", "per-image"):
        raise ConfigError("[eval].aggregation must be 'global' or 'per-image'")
    if cfg.attribution.class_id not in ("positive", "negative"):
        raise ConfigError("[attribution].class_id must be 'positive' or 'negative'")
    if not 0.0 < cfg.pseudolabels.tau < 1.0:
        raise ConfigError("[pseudolabels].tau must lie in (0, 1)")
    return cfg


def load_config(path: Path | str) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return build_config(doc)
