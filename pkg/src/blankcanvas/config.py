"""Hyperparameter containers and config-file loading."""

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .exceptions import ConfigError

ATTACK_NORMS = ("mse", "l1", "l2")


@dataclass(frozen=True)
class PromptSpec:
    """Point prompts as ``(row, col)`` pairs."""

    points: tuple = ((0, 0),)
    mode: str = "single"

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((int(r), int(c)) for r, c in self.points))
        if self.mode not in ("single", "grid"):
            raise ConfigError(f"prompt mode must be 'single' or 'grid', got {self.mode!r}")
        if not self.points:
            raise ConfigError("prompt needs at least one point")
        if self.mode == "single" and len(self.points) != 1:
            raise ConfigError("single-mode prompt must hold exactly one point")

    def validate(self, height, width):
        for r, c in self.points:
            if not (0 <= r < height and 0 <= c < width):
                raise ConfigError(f"prompt point {(r, c)} outside {height}x{width} image")
        return self

    def split(self):
        """One single-point prompt per point."""
        return [PromptSpec(points=(p,), mode="single") for p in self.points]


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 16 / 255
    alpha0: float = 2 / 255
    T: int = 200
    mu: float = 0.9
    C: float = 15.0
    lambda_lfc: float = 1.0
    beta_hfc: float = 0.1
    # None means 0.25 * min(H, W) / 2, resolved per image
    f_cutoff: float = None
    wavelet_levels: int = 3
    prompt: PromptSpec = field(default_factory=PromptSpec)
    seed: int = 0
    # -1 rewards edge-band wavelet deviation, +1 is the literal penalty form
    hfc_sign: int = -1
    attack_norm: str = "mse"
    spectral_projection: bool = True
    adaptive_step: bool = True

    def __post_init__(self):
        if not (0 < self.alpha0 <= self.epsilon):
            raise ConfigError(f"need 0 < alpha0 <= epsilon, got {self.alpha0}, {self.epsilon}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not (0 <= self.mu < 1):
            raise ConfigError(f"mu must lie in [0, 1), got {self.mu}")
        if self.f_cutoff is not None and self.f_cutoff < 0:
            raise ConfigError(f"f_cutoff must be >= 0, got {self.f_cutoff}")
        if self.wavelet_levels < 1:
            raise ConfigError(f"wavelet_levels must be >= 1, got {self.wavelet_levels}")
        if self.hfc_sign not in (-1, 1):
            raise ConfigError(f"hfc_sign must be +1 or -1, got {self.hfc_sign}")
        if self.attack_norm not in ATTACK_NORMS:
            raise ConfigError(f"attack_norm must be one of {ATTACK_NORMS}")
        if not math.isfinite(self.C):
            raise ConfigError("C must be finite")

    def cutoff_for(self, height, width):
        if self.f_cutoff is not None:
            return float(self.f_cutoff)
        return 0.25 * min(height, width) / 2

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class DetectConfig:
    C: float = 15.0
    histogram_bins: int = 256
    min_region_area: int = 16
    morphology_radius: int = 2
    # pixels within this distance of C satisfy the blank condition and are
    # never flagged; None means 0.1 * |C|
    blank_tol: float = None
    prompt: PromptSpec = field(default_factory=PromptSpec)

    def __post_init__(self):
        if self.histogram_bins < 2:
            raise ConfigError(f"histogram_bins must be >= 2, got {self.histogram_bins}")
        if self.min_region_area < 0:
            raise ConfigError(f"min_region_area must be >= 0, got {self.min_region_area}")
        if self.morphology_radius < 0:
            raise ConfigError(f"morphology_radius must be >= 0, got {self.morphology_radius}")
        if self.blank_tol is not None and self.blank_tol < 0:
            raise ConfigError(f"blank_tol must be >= 0, got {self.blank_tol}")

    @property
    def tolerance(self):
        return 0.1 * abs(self.C) if self.blank_tol is None else float(self.blank_tol)

    def replace(self, **changes):
        return replace(self, **changes)


def _coerce(value, like):
    if isinstance(like, bool):
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"cannot interpret {value!r} as a boolean")
        return bool(value)
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _build(cls, values):
    kwargs = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        raw = values[f.name]
        if f.name == "prompt":
            kwargs["prompt"] = raw if isinstance(raw, PromptSpec) else parse_prompt(raw)
            continue
        default = f.default
        if default is None and raw is not None:
            raw = float(raw)
        elif raw is not None:
            raw = _coerce(raw, default)
        kwargs[f.name] = raw
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_prompt(value):
    """Accept ``"r,c"``, ``"r,c;r,c"``, a list of pairs or a PromptSpec."""
    if isinstance(value, PromptSpec):
        return value
    if isinstance(value, str):
        pairs = [tuple(int(v) for v in chunk.split(",")) for chunk in value.split(";") if chunk.strip()]
    else:
        pairs = [tuple(p) for p in value]
    return PromptSpec(points=tuple(pairs), mode="single" if len(pairs) == 1 else "grid")


ATTACK_KEYS = {f.name for f in fields(AttackConfig)}
DETECT_KEYS = {f.name for f in fields(DetectConfig)}
GENERAL_DEFAULTS = {
    "backend": "toy",
    "toy_seed": 0,
    "weights": None,
    "device": "cpu",
    "jobs": 1,
    "fixtures": 8,
    "fixture_size": 64,
}


@dataclass
class CliConfig:
    """Merged view of every pipeline setting, validated up front."""

    attack: AttackConfig
    detect: DetectConfig
    backend: str = "toy"
    toy_seed: int = 0
    weights: str = None
    device: str = "cpu"
    jobs: int = 1
    fixtures: int = 8
    fixture_size: int = 64

    @classmethod
    def from_mapping(cls, values):
        unknown = set(values) - ATTACK_KEYS - DETECT_KEYS - set(GENERAL_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        general = {}
        for key, default in GENERAL_DEFAULTS.items():
            raw = values.get(key, default)
            general[key] = raw if default is None or raw is None else _coerce(raw, default)
        if general["jobs"] < 1:
            raise ConfigError("jobs must be >= 1")
        return cls(attack=_build(AttackConfig, values), detect=_build(DetectConfig, values), **general)

    def to_dict(self):
        out = {k: getattr(self, k) for k in GENERAL_DEFAULTS}
        out["attack"] = asdict(self.attack)
        out["detect"] = asdict(self.detect)
        return out


def flatten(table):
    """Merge TOML sections into one flat key space (later sections win)."""
    flat = {}
    for key, value in table.items():
        if isinstance(value, dict):
            flat.update(flatten(value))
        else:
            flat[key] = value
    return flat


def read_values(path=None, overrides=None):
    """Flat key/value mapping from a TOML file with overrides applied on top."""
    values = {}
    if path is not None:
        path = Path(path)
        try:
            with path.open("rb") as fh:
                values = flatten(tomllib.load(fh))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    values.update(overrides or {})
    return values


def load_config(path=None, overrides=None):
    """Read a TOML/flat ``key = value`` file and apply overrides."""
    return CliConfig.from_mapping(read_values(path, overrides))
