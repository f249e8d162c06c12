"""Pipeline configuration: one TOML file with optional sections, unknown keys rejected."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .evaluation import DisplacementExperimentConfig, default_bins
from .hog import HogConfig
from .lk import LkSettings
from .render import DEFAULT_LINE_WIDTH_PX
from .sampling import PoseDistribution
from .template import BUILTIN_TEMPLATES, FieldTemplate, load_template

SECTIONS = ("template", "sampling", "features", "database", "refine", "experiment")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatabaseSettings:
    size: int = 10_000
    line_width_px: float = DEFAULT_LINE_WIDTH_PX

    def __post_init__(self) -> None:
        if int(self.size) < 1:
            raise ValueError("database size must be >= 1")
        if not self.line_width_px >= 1:
            raise ValueError("line_width_px must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    template: str = "soccer"  # builtin name or path to a template file
    sampling: PoseDistribution = PoseDistribution()
    features: HogConfig = HogConfig()
    database: DatabaseSettings = DatabaseSettings()
    refine: LkSettings = LkSettings()
    experiment: DisplacementExperimentConfig = field(default_factory=DisplacementExperimentConfig)
    base_dir: Path = Path(".")  # template paths resolve relative to the config file

    def load_template(self) -> FieldTemplate:
        if self.template in BUILTIN_TEMPLATES:
            return BUILTIN_TEMPLATES[self.template]()
        path = Path(self.template)
        if not path.is_absolute():
            path = self.base_dir / path
        if not path.is_file():
            raise ConfigError(f"template {self.template!r} is neither a builtin name nor a file")
        return load_template(path)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, sampling=replace(self.sampling, seed=seed),
                       experiment=replace(self.experiment, seed=seed))


def _check_keys(section: str, data: dict[str, Any], allowed) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {unknown}; allowed: {sorted(allowed)}")


def _tuples(d: dict[str, Any]) -> dict[str, Any]:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _build(section: str, cls, data: dict[str, Any]):
    _check_keys(section, data, [f.name for f in fields(cls)])
    try:
        return cls(**_tuples(data))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def config_from_dict(doc: dict[str, Any], base_dir: str | os.PathLike = ".") -> PipelineConfig:
    _check_keys("top level", doc, SECTIONS)
    for name in SECTIONS:
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError(f"[{name}] must be a table")

    tmpl = doc.get("template", {})
    _check_keys("template", tmpl, ["name", "path"])
    if "name" in tmpl and "path" in tmpl:
        raise ConfigError("[template]: give either name or path, not both")
    template = str(tmpl.get("path", tmpl.get("name", "soccer")))

    sampling = _build("sampling", PoseDistribution, doc.get("sampling", {}))
    features = _build("features", HogConfig, doc.get("features", {}))
    database = _build("database", DatabaseSettings, doc.get("database", {}))
    refine = _build("refine", LkSettings, doc.get("refine", {}))

    exp = dict(doc.get("experiment", {}))
    _check_keys("experiment", exp, ["db_size", "test_size", "bin_edges_m", "seed"])
    exp.setdefault("seed", sampling.seed)
    exp.setdefault("bin_edges_m", list(default_bins()))
    experiment = _build("experiment", DisplacementExperimentConfig,
                        {**exp, "distribution": sampling})
    return PipelineConfig(template, sampling, features, database, refine, experiment,
                          Path(base_dir))


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    """Parse a config file; ``None`` gives every default."""
    if path is None:
        return config_from_dict({})
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, path.parent)
