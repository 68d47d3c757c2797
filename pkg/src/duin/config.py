"""Training configuration and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Unknown key or unparsable value in a config file or override."""


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)


@dataclass
class TrainConfig:
    # optimization
    lr: float = 0.001
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # contrastive task
    alpha: float = 1.0
    tau: float = 0.1
    gamma: float = 0.5
    ssl_negatives: str = "others"
    # shapes
    seq_len: int = 20
    l_max: int = 10
    dim: int = 72
    n_heads: int = 8
    window: int = 4
    # training samples read graph counts as of their own timestamp, or the final counts
    graph_counts: str = "point_in_time"
    eiem_hidden: tuple[int, ...] = (144, 72)
    iumm_hidden: tuple[int, ...] = (144, 72)
    head_hidden: tuple[int, ...] = (200, 80)
    rel_hidden: int = 72
    # intensity gate
    squash: str = "sigmoid"
    sample_at_infer: bool = False
    # ablation switches
    no_eiem: bool = False
    no_liem: bool = False
    no_iumm: bool = False
    no_ssl: bool = False
    sii: bool = False
    trigger_agnostic: bool = False
    # data
    trigger_window_hours: float = 4.0
    label_event: str = "click"
    label_horizon: int = 3600
    negatives: str = "impression"
    random_negatives: int = 3
    # loop
    eval_batch_size: int = 1024
    log_every: int = 1

    def __post_init__(self):
        for name in ("eiem_hidden", "iumm_hidden", "head_hidden"):
            val = getattr(self, name)
            if not isinstance(val, tuple):
                setattr(self, name, _ints(val) if isinstance(val, str) else tuple(val))
        self.validate()

    def validate(self) -> None:
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.ssl_active and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 when the contrastive loss is active")
        if (2 * self.dim) % self.n_heads:
            raise ConfigError(f"2*dim={2 * self.dim} must be divisible by n_heads={self.n_heads}")
        if self.squash not in ("sigmoid", "clamp"):
            raise ConfigError(f"squash must be sigmoid or clamp, got {self.squash}")
        if self.ssl_negatives not in ("others", "all_views"):
            raise ConfigError(f"ssl_negatives must be others or all_views, got {self.ssl_negatives}")
        if self.graph_counts not in ("point_in_time", "static"):
            raise ConfigError(f"graph_counts must be point_in_time or static, got {self.graph_counts}")
        if self.negatives not in ("impression", "random"):
            raise ConfigError(f"negatives must be impression or random, got {self.negatives}")
        if self.label_event not in ("click", "purchase"):
            raise ConfigError(f"label_event must be click or purchase, got {self.label_event}")

    @property
    def d_h(self) -> int:
        return 2 * self.dim

    @property
    def use_eiem(self) -> bool:
        return not (self.no_eiem or self.trigger_agnostic)

    @property
    def ssl_active(self) -> bool:
        return self.use_eiem and not self.no_ssl and self.alpha > 0

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, bool):
                val = str(val).lower()
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_pairs(parse_kv_file(path))

    @classmethod
    def from_pairs(cls, pairs: dict[str, str], base: "TrainConfig | None" = None) -> "TrainConfig":
        base = base or cls()
        kw = {}
        for key, raw in pairs.items():
            kw[key] = coerce(cls, key, raw)
        try:
            return dataclasses.replace(base, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def valid_keys(cls=TrainConfig) -> list[str]:
    return [f.name for f in fields(cls)]


def coerce(cls, key: str, raw):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(valid_keys(cls))}")
    kind = types[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind in ("bool", bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
        if "tuple" in str(kind):
            if "float" in str(kind):
                return tuple(float(x) for x in text.split(",") if x.strip())
            return _ints(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_kv_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out
