"""Run configuration: text config files, defaults, hashing and run manifests."""

from __future__ import annotations

import hashlib
import json
import subprocess
from pathlib import Path
from typing import Any, Mapping

from . import __version__
from .errors import ConfigurationError

DEFAULTS: dict[str, Any] = {
    # plate and simulation
    "width": 300.0,
    "height": 300.0,
    "base_speed": 1500.0,
    "anisotropy": 0.4,
    "principal_angle": 0.0,
    "attenuation": 0.5,
    "sample_rate": 1.0e6,
    "duration": 512e-6,
    "grid_nx": 9,
    "grid_ny": 7,
    "repeats": 3,
    "validation": 15,
    "noise_rms": None,  # None -> 2 % of the farthest-grid-point peak
    # preprocessing
    "cutoff": 1000.0,
    "image_size": 64,
    "scales": 64,
    "dwt_levels": 4,
    # baseline
    "k_sigma": 5.0,
    # training
    "optimizer": "rmsprop",
    "batch_size": 23,
    "lr": 1e-3,
    "lr_schedule": "step",
    "epochs": 200,
    "seed": 7,
    # tuning / cross validation
    "iterations": 10,
    "init_count": 3,
    "folds": 5,
    "tune_epochs": 30,
    "xi": 0.01,
    "ablation_seeds": 5,
    "ablation_epochs": 30,
}


def _coerce(key: str, raw: str) -> Any:
    default = DEFAULTS.get(key)
    if raw.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or default is None:
        try:
            return float(raw)
        except ValueError:
            return raw
    return raw


def read_config(path: str | Path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment, ``[section]`` lines are ignored."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out: dict[str, Any] = {}
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in DEFAULTS:
            raise ConfigurationError(f"{path}:{n}: unknown or malformed entry {raw.strip()!r}")
        out[key] = _coerce(key, value.strip())
    return out


def resolve(flags: Mapping[str, Any], config: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Flags override the config file, which overrides the defaults."""
    merged = dict(DEFAULTS)
    merged.update(config or {})
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def config_hash(values: Mapping[str, Any]) -> str:
    blob = json.dumps({k: values[k] for k in sorted(values)}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def version_string() -> str:
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


def write_run_manifest(path: str | Path, command: str, values: Mapping[str, Any],
                       extra: Mapping[str, Any] | None = None) -> str:
    digest = config_hash(values)
    lines = [f"command = {command}", f"version = {version_string()}", f"config_hash = {digest}",
             f"seed = {values.get('seed')}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    lines += [f"config.{k} = {values[k]}" for k in sorted(values)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return digest


def read_run_manifest(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        return {}
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        k, sep, v = line.partition(" = ")
        if sep:
            out[k] = v
    return out


def run_manifest_path(artifact: str | Path) -> Path:
    artifact = Path(artifact)
    return artifact / "run.txt" if artifact.is_dir() else artifact.with_name(artifact.name + ".run.txt")
