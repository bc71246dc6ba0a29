"""Flat ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_dir: str = "data"
    out_dir: str = "runs"
    seed: int = 0
    steps: int = 3000
    rsm_steps: int = 500
    batch: int = 8
    lr_g: float = 0.0001
    lr_d: float = 0.0004
    lr_rsm: float = 0.0002
    lambda_fm: float = 10.0
    lambda_perc: float = 10.0
    ablate_softmax: bool = False
    ablate_sa: bool = False
    rsm_stargan_mode: bool = False
    image_size: int = 64
    num_classes: int = 8
    style_dim: int = 64

    def data_dirs(self) -> list[str]:
        """``data_dir`` may list several dataset directories separated by commas."""
        return [d.strip() for d in self.data_dir.split(",") if d.strip()]

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"key '{name}': expected a boolean, got {raw!r}")
    try:
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key '{name}': cannot parse {raw!r}") from exc
    return raw


def parse_config(text: str, **overrides) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = _coerce(key, types[key], raw)
    values.update(overrides)
    cfg = RunConfig(**values)
    for name in ("lr_g", "lr_d", "lr_rsm"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"key '{name}' must be positive")
    if cfg.batch < 1 or cfg.steps < 0:
        raise ConfigError("batch must be >= 1 and steps >= 0")
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)
