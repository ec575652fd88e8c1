"""Pipeline configuration: one JSON document, strictly validated.

Layout::

    {"paths": {"manifest": ..., "out_dir": ..., "embeddings": null},
     "preprocess": {...}, "layout": {...}, "train": {...}, "eval": {...},
     "seed": 0}

Every section is optional except ``paths``; missing keys take the
dataclass defaults, unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluate import DEFAULT_DESCRIPTIONS
from .features import DEFAULT_SUBSET, InputLayout
from .preprocess import PreprocessConfig
from .trainer import TrainConfig


@dataclass
class PathsConfig:
    manifest: str = ""
    out_dir: str = "out"
    embeddings: str | None = None


@dataclass
class LayoutConfig:
    samples_per_lead: int = 50
    features: tuple[str, ...] = DEFAULT_SUBSET
    aggregate: str = "median"
    z8_centered_on_z7: bool = False

    def __post_init__(self):
        self.features = tuple(self.features)
        self.layout()  # rejects unknown features and bad sizes up front

    def layout(self) -> InputLayout:
        return InputLayout(self.samples_per_lead, self.features, aggregate=self.aggregate,
                           z8_centered_on_z7=self.z8_centered_on_z7)


@dataclass
class EvalConfig:
    m_max: int = 16
    d_emb: int = 32
    min_freq: int = 1
    descriptions: dict = field(default_factory=lambda: dict(DEFAULT_DESCRIPTIONS))


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def __post_init__(self):
        self.train.seed = self.seed
        if self.eval.m_max < 3:
            raise ConfigError("eval.m_max must leave room for BOS, one token and EOS")
        if self.eval.d_emb < 1 or self.eval.min_freq < 1:
            raise ConfigError("eval.d_emb and eval.min_freq must be positive")
        dim = self.layout.layout().dim
        if dim % self.train.n_positions:
            raise ConfigError(f"input width {dim} does not split into "
                              f"train.n_positions={self.train.n_positions} positions")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"] = self.train.to_dict()
        d["train"].pop("seed")
        d["layout"]["features"] = list(self.layout.features)
        return d

    def data_hash(self) -> str:
        """Hash of everything that shapes the feature cache."""
        d = self.to_dict()
        return _hash({"preprocess": d["preprocess"], "layout": d["layout"]})

    def config_hash(self) -> str:
        """Hash of everything that shapes a trained model (paths excluded)."""
        d = self.to_dict()
        d.pop("paths")
        d["eval"].pop("descriptions")
        d["embeddings"] = (Path(self.paths.embeddings).name
                           if self.paths.embeddings else None)
        return _hash(d)


def _hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _check(value, hint, where):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        errors = []
        for h in typing.get_args(hint):
            try:
                return _check(value, h, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0])
    if hint is type(None):
        if value is not None:
            raise ConfigError(f"{where}: expected null")
        return None
    if origin is tuple:
        args = typing.get_args(hint)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_check(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} items")
        return tuple(_check(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if hint is dict or origin is dict:
        if not isinstance(value, dict) or not all(isinstance(v, str) for v in value.values()):
            raise ConfigError(f"{where}: expected an object of strings")
        return dict(value)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, where)
    raise ConfigError(f"{where}: unsupported field type {hint!r}")


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    if cls is TrainConfig:
        names.discard("seed")  # one seed for the whole pipeline, set at top level
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {k: _check(v, hints[k], f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "config")


def load_config(path: str | Path | None, **overrides) -> PipelineConfig:
    """Read and validate a config file, then apply CLI overrides.

    ``overrides`` may hold ``seed``, ``embeddings`` and ``out_dir``; ``None``
    values are ignored. Relative paths resolve against the config's folder.
    """
    data = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        base = path.resolve().parent
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = json.loads(json.dumps(data))
    paths = data.setdefault("paths", {})
    if not isinstance(paths, dict):
        raise ConfigError("config.paths: expected an object")
    if overrides.get("seed") is not None:
        data["seed"] = overrides["seed"]
    if overrides.get("embeddings") is not None:
        paths["embeddings"] = str(Path(overrides["embeddings"]).resolve())
    if overrides.get("out_dir") is not None:
        paths["out_dir"] = str(Path(overrides["out_dir"]).resolve())
    cfg = config_from_dict(data)
    p = cfg.paths
    if p.manifest:
        p.manifest = str((base / p.manifest).resolve())
    p.out_dir = str((base / p.out_dir).resolve())
    if p.embeddings:
        p.embeddings = str((base / p.embeddings).resolve())
    return cfg


def require_paths(cfg: PipelineConfig, manifest: bool = True) -> None:
    """Referenced input paths must exist before any work starts."""
    if manifest:
        if not cfg.paths.manifest:
            raise ConfigError("paths.manifest is required for this command")
        if not Path(cfg.paths.manifest).is_file():
            raise ConfigError(f"manifest not found: {cfg.paths.manifest}")
    if cfg.paths.embeddings and not Path(cfg.paths.embeddings).is_file():
        raise ConfigError(f"embeddings file not found: {cfg.paths.embeddings}")
