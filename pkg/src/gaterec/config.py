"""Flat key=value config files (INI sections) with flag overrides.

Sections and defaults below are the single source of truth; the effective
config is defaults <- file <- command-line flags, echoed verbatim into the
run manifest so every artifact records exactly what produced it.
"""

import configparser
import hashlib
import json
from pathlib import Path

from .errors import ConfigError

DEFAULTS: dict[str, dict] = {
    "data": {
        "binarize_threshold": 4.0,
        "min_user_ratings": 10,
        "min_item_ratings": 5,
        "max_vocab": 8000,
        "min_df": 1,
        "max_len": 300,
        "sim_threshold": 0.2,
        "max_neighbors": 50,
        "sim_metric": "cosine",
        "test_frac": 0.2,
        "n_folds": 5,
    },
    "model": {
        "hidden1": 100,
        "latent": 50,
        "d_a": 20,
        "rho": 5.0,
        "l2_reg": 0.001,
        "attention": "multi_dim",
        "ablation": "full",
        "neighbor_grad": "flow",
        "decoder_activation": "tanh",
    },
    "train": {
        "epochs": 100,
        "batch_size": 1024,
        "learning_rate": 0.01,
        "eval_every": 0,
        "early_stop_patience": 0,
        "val_frac": 0.1,
    },
    "eval": {
        "k_list": "5,10,15,20",
    },
}


def _coerce(section: str, key: str, raw, reference) -> object:
    if isinstance(reference, bool):
        if str(raw).lower() in ("1", "true", "yes", "on"):
            return True
        if str(raw).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(reference, int):
            return int(raw)
        if isinstance(reference, float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: expected {type(reference).__name__}, got {raw!r}") from None
    return str(raw)


def load_config(path=None) -> dict[str, dict]:
    """Defaults, optionally overlaid with an INI-style file."""
    cfg = {section: dict(values) for section, values in DEFAULTS.items()}
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in cfg:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser[section].items():
            if key not in cfg[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            cfg[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])
    return cfg


def apply_overrides(cfg: dict[str, dict], overrides: dict[tuple[str, str], object]) -> dict:
    """Flag values win over file values; None means the flag was not given."""
    for (section, key), value in overrides.items():
        if value is None:
            continue
        cfg[section][key] = _coerce(section, key, value, DEFAULTS[section][key])
    return cfg


def parse_k_list(raw: str) -> list[int]:
    try:
        ks = sorted({int(part) for part in str(raw).split(",") if part.strip()})
    except ValueError:
        raise ConfigError(f"k_list must be comma-separated integers, got {raw!r}") from None
    if not ks or ks[0] < 1:
        raise ConfigError(f"k_list entries must be >= 1, got {raw!r}")
    return ks


def config_fingerprint(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(
        json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n", encoding="utf-8"
    )
