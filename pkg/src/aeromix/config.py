"""``key = value`` configuration files and the pipeline configuration."""

import dataclasses
import datetime as dt
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError, InputMissingError
from .gridio import PRODUCTS
from .mlcore.selection import DEFAULT_GRID


def parse_kv(text, source="<config>"):
    """Ordered ``dict`` of the ``key = value`` lines in ``text``; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path):
    path = Path(path)
    if not path.is_file():
        raise InputMissingError(f"config file not found: {path}")
    return parse_kv(path.read_text(encoding="utf-8"), str(path))


def format_kv(mapping):
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def parse_scalar(raw):
    """``int``, ``float``, ``None``, ``bool`` or the raw string."""
    low = raw.strip().lower()
    if low in ("none", "null"):
        return None
    if low in ("true", "false"):
        return low == "true"
    for kind in (int, float):
        try:
            return kind(raw)
        except ValueError:
            pass
    return raw.strip()


def parse_list(raw, kind=parse_scalar):
    return [kind(item.strip()) for item in raw.split(",") if item.strip()]


def _coerce(name, raw, kind):
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r}") from None


def _render(value):
    if isinstance(value, (list, tuple)):
        return ",".join(_render(v) for v in value)
    if isinstance(value, dt.date):
        return value.isoformat()
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class PipelineConfig:
    data_dir: Path = Path("scene")
    out_dir: Path = Path("out")
    products: tuple = PRODUCTS
    std_threshold: float = 0.02
    rh_max: float = 99.0
    blh_min: float = 50.0
    min_pairs: int = 30
    split_ratio: float = 0.75
    cv_folds: int = 5
    grid: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GRID.items()})
    scenarios: tuple = tuple(range(1, 12))
    estimator: str = "gbt"
    data_level_streams: tuple = ()
    idw_power: float = 2.0
    map_date: dt.date = None
    map_scenario: int = 1
    quasi_stride: int = 1
    palette: str = "aqi"
    palette_min: float = 0.0
    palette_max: float = 150.0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        unknown = set(self.products) - set(PRODUCTS)
        if unknown:
            raise ConfigError(f"unknown product(s): {', '.join(sorted(unknown))}")

    @classmethod
    def from_mapping(cls, mapping, base_dir=Path(".")):
        kwargs, grid = {}, {}
        for key, raw in mapping.items():
            if key.startswith("grid."):
                grid[key[5:]] = parse_list(raw)
                continue
            if key in ("data_dir", "out_dir"):
                kwargs[key] = Path(base_dir) / raw
            elif key in ("products", "data_level_streams"):
                kwargs[key] = tuple(s.strip() for s in raw.split(",") if s.strip())
            elif key == "scenarios":
                kwargs[key] = tuple(_coerce(key, s, int) for s in raw.split(",") if s.strip())
            elif key == "map_date":
                kwargs[key] = _coerce(key, raw, dt.date.fromisoformat)
            elif key in ("estimator", "palette"):
                kwargs[key] = raw
            elif key in {f.name for f in dataclasses.fields(cls)}:
                kind = {f.name: f.type for f in dataclasses.fields(cls)}[key]
                kwargs[key] = _coerce(key, raw, {"int": int, "float": float}.get(getattr(kind, "__name__", kind), float))
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if grid:
            kwargs["grid"] = grid
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        return cls.from_mapping(read_kv(path), path.parent)

    def to_mapping(self):
        """Canonical rendering; ``threads`` and the directories are excluded."""
        out = {}
        for f in dataclasses.fields(self):
            if f.name in ("threads", "data_dir", "out_dir", "grid"):
                continue
            value = getattr(self, f.name)
            if value is None or value == ():
                continue
            out[f.name] = _render(value)
        for k, v in self.grid.items():
            out[f"grid.{k}"] = _render(v)
        return out

    def digest(self):
        return hashlib.sha256(format_kv(self.to_mapping()).encode()).hexdigest()
