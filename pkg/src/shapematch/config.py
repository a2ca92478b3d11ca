"""Plain-text key=value configuration with CLI overrides.

Every published hyperparameter is a named key with its paper default:
truncation k=200, channels=6, jacobi_order=8, tau=0.07, lambda_reg=100,
unit theta weights (smoothness 5.0 is the non-isometric profile, default off),
Adam learning_rate=0.001.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import DataError


@dataclass(frozen=True)
class Settings:
    k: int = 200
    channels: int = 6
    jacobi_order: int = 8
    tau: float = 0.07
    lambda_reg: float = 100.0
    theta_freq: float = 1.0
    theta_fmap: float = 1.0
    theta_bi: float = 1.0
    theta_or: float = 1.0
    theta_sm: float = 0.0
    learning_rate: float = 0.001
    max_steps: int = 300
    rel_tol: float = 1e-6
    barrier_weight: float = 100.0
    bidirectional: bool = True
    beta_cap: float = 2.0
    outer_rounds: int = 10
    wks_dim: int = 128
    wks_variance: float = 7.0
    normalize_descriptors: bool = True
    zoomout_start: int = 20
    zoomout_step: int = 10
    refine_iterations: int = 10
    diameter_samples: int = 100
    dense_cutoff: int = 3000
    seed: int = 0
    cache_dir: str = ""


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise DataError(f"config key '{name}': expected a boolean, got '{raw}'")
    try:
        return kind(raw)
    except ValueError:
        raise DataError(f"config key '{name}': expected {kind.__name__}, "
                        f"got '{raw}'") from None


def _field_types():
    return {f.name: f.type if isinstance(f.type, type) else type(f.default)
            for f in fields(Settings)}


def apply_overrides(settings: Settings, pairs) -> Settings:
    """Apply key=value strings on top of existing settings."""
    types = _field_types()
    updates = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        key = key.strip()
        if not sep:
            raise DataError(f"override '{pair}' is not of the form key=value")
        if key not in types:
            raise DataError(f"unknown config key '{key}'")
        updates[key] = _coerce(key, types[key], value)
    return replace(settings, **updates)


def load_settings(path=None, overrides=()) -> Settings:
    """Defaults, then a key=value file if given, then CLI overrides."""
    settings = Settings()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        pairs = []
        for raw in path.read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}: malformed config line '{raw}'")
            pairs.append(line)
        settings = apply_overrides(settings, pairs)
    return apply_overrides(settings, overrides)


def save_settings(settings: Settings, path) -> None:
    lines = [f"{f.name}={getattr(settings, f.name)}" for f in fields(Settings)]
    Path(path).write_text("\n".join(lines) + "\n")
