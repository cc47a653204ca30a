"""Training configuration and its flat ``key=value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .encoders import RELATION_NORMS, STRUCTURE_KINDS
from .layers import MECHANISMS
from .sampler import POLICIES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # optimization
    learning_rate: float = 1e-4
    epochs: int = 500
    patience: int = 50
    dropout: float = 0.5
    attn_dropout: float = 0.0
    batch_size: int = 0  # 0 = full batch
    loss_reduction: str = "mean"
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_wait: int = 10
    min_lr: float = 1e-6
    # model
    d: int = 256
    n_h: int = 2
    L: int = 2
    beta: float = 1.0
    mechanism: str = "gatv2"
    use_ffn: bool = False
    lse_kind: str = "gcn"
    K_s: int = 3
    K_h: int = 3
    relation_norm: str = "sym"
    no_lse: bool = False
    no_hre: bool = False
    # context sampling
    S: int = 20
    D: int = 2
    sampler_policy: str = "deterministic"
    # task
    multilabel: bool = False

    def __post_init__(self):
        positive = ("d", "n_h", "L", "S", "patience", "plateau_wait")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("epochs", "K_s", "K_h", "D", "batch_size"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.epochs > 0 and self.patience > self.epochs:
            raise ConfigError(f"patience {self.patience} exceeds epochs {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.dropout < 1 or not 0 <= self.attn_dropout < 1:
            raise ConfigError("dropout rates must lie in [0, 1)")
        if self.d % self.n_h:
            raise ConfigError(f"d={self.d} is not divisible by n_h={self.n_h}")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        choices = {
            "mechanism": MECHANISMS,
            "lse_kind": STRUCTURE_KINDS,
            "relation_norm": RELATION_NORMS,
            "sampler_policy": POLICIES,
            "loss_reduction": ("mean", "sum"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.use_ffn and self.mechanism != "dot":
            raise ConfigError("use_ffn requires mechanism=dot")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        return cls().merged(values)

    def merged(self, values: dict) -> "TrainConfig":
        """Return a copy with ``values`` (strings or typed) applied on top."""
        types = {f.name: f.type for f in fields(self)}
        out = {}
        for key, val in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = _coerce(key, val, getattr(self, key))
        try:
            return dataclasses.replace(self, **out)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, val, default):
    if not isinstance(val, str):
        return type(default)(val) if not isinstance(default, bool) else bool(val)
    s = val.strip()
    try:
        if isinstance(default, bool):
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {val!r}") from None
    return s


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment line."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = val
    return values


def resolve_config(config_path=None, overrides: dict | None = None, base: TrainConfig | None = None) -> TrainConfig:
    """Built-in defaults < config file < explicit overrides."""
    values: dict = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return (base or TrainConfig()).merged(values)
