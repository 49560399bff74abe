"""Flat ``key = value`` run configuration for training.

Lines starting with ``#`` are comments. Keys prefixed ``model.`` go to the
architecture config (e.g. ``model.frame_len = 40``). Every value is parsed
and validated before anything touches the filesystem.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .audio import ChunkSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_REQUIRED = ("seed", "split_seed", "manifest", "out_dir")


@dataclass
class RunConfig:
    manifest: str
    out_dir: str
    seed: int
    split_seed: int
    arch: str = "tasnet"
    sample_rate: int = 44100
    chunk_length: int = 44160
    chunk_overlap: float = 0.25
    epochs: int = 200
    learning_rate: float = 1e-4
    batch_size: int = 4
    loss: str = ""
    checkpoint_every: int = 1
    k_min: float = 0.0
    k_max: float = 1.0
    alpha_f: float = 0.1
    split_ratio: float = 0.8
    precision: str = "float32"
    max_steps: int = 0
    model: dict = field(default_factory=dict)

    @property
    def chunk_spec(self) -> ChunkSpec:
        return ChunkSpec(self.chunk_length, self.chunk_overlap)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
                           seed=self.seed, arch=self.arch, loss=self.loss,
                           checkpoint_every=self.checkpoint_every, k_range=(self.k_min, self.k_max),
                           alpha_f=self.alpha_f, max_steps=self.max_steps)

    def model_config(self):
        from .separator import model_classes
        cls = model_classes()[self.arch].config_cls
        names = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in self.model.items():
            if k not in names:
                raise ConfigError(f"unknown model.{k} for {self.arch}")
            default = getattr(cls(), k)
            kwargs[k] = _convert(f"model.{k}", v, type(default))
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _convert(key, raw: str, typ):
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from exc


def parse_pairs(lines, source="<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[k] = v
    return out


def build_run_config(pairs: dict, base_dir: str = ".") -> RunConfig:
    missing = [k for k in _REQUIRED if k not in pairs]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    defaults = RunConfig(manifest="", out_dir="", seed=0, split_seed=0)
    kwargs, model = {}, {}
    for k, v in pairs.items():
        if k.startswith("model."):
            model[k[len("model."):]] = v
        elif k in types and k != "model":
            kwargs[k] = _convert(k, v, type(getattr(defaults, k)))
        else:
            raise ConfigError(f"unknown config key {k!r}")
    for k in ("manifest", "out_dir"):
        kwargs[k] = os.path.normpath(os.path.join(base_dir, kwargs[k]))
    cfg = RunConfig(**kwargs, model=model)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    from .separator import model_classes
    if cfg.arch not in model_classes():
        raise ConfigError(f"unknown architecture {cfg.arch!r} (expected one of {sorted(model_classes())})")
    if cfg.precision not in ("float32", "float64"):
        raise ConfigError(f"precision must be float32 or float64, got {cfg.precision!r}")
    if cfg.sample_rate <= 0:
        raise ConfigError("sample_rate must be positive")
    if not 0.0 <= cfg.k_min <= cfg.k_max:
        raise ConfigError(f"need 0 <= k_min <= k_max, got {cfg.k_min}, {cfg.k_max}")
    if not 0.0 < cfg.split_ratio <= 1.0:
        raise ConfigError("split_ratio must be in (0, 1]")
    try:
        cfg.chunk_spec
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.model_config()


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path) as fh:
        pairs = parse_pairs(fh, path)
    pairs.update(overrides or {})
    return build_run_config(pairs, os.path.dirname(os.path.abspath(path)))
