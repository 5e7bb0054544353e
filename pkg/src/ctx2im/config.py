"""Flat key-value configuration files with dotted section keys.

Format, one entry per line::

    # comment
    synth.image_size = 32
    synth.things = disc, square, triangle, ring, cross, bar
    train.lr_g = 1e-4
    train.context_on = true

Values are parsed as int, float, bool (``true``/``false``), or string;
comma-separated values become a list of strings. Flag overrides from the
CLI take precedence over file values, which take precedence over the
built-in defaults. Every command serializes its fully resolved
configuration into its output directory before doing any work.
"""

from __future__ import annotations

import hashlib
from pathlib import Path


class ConfigError(ValueError):
    pass


def _parse_scalar(raw: str):
    text = raw.strip()
    if "," in text:
        return [item.strip() for item in text.split(",") if item.strip()]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict:
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = _parse_scalar(raw)
    return out


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def merge_config(defaults: dict, *layers: dict) -> dict:
    """Later layers win. Keys absent from defaults are rejected so typos fail fast."""
    merged = dict(defaults)
    for layer in layers:
        for key, value in layer.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key: {key}")
            merged[key] = value
    return merged


def dump_config(cfg: dict) -> str:
    lines = [f"{key} = {_format_value(cfg[key])}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def write_resolved(cfg: dict, out_dir: str | Path, name: str = "config.resolved.txt") -> Path:
    out = Path(out_dir) / name
    out.write_text(dump_config(cfg))
    return out


# Every tunable the command-line tool accepts, with its default. merge_config
# rejects keys outside this set, so config-file typos fail before any work.
DEFAULTS: dict = {
    "synth.count": 5000,
    "synth.image_size": 32,
    "synth.n_min": 3,
    "synth.n_max": 8,
    "synth.occlusion_prob": 0.5,
    "synth.ensure_occlusion": False,
    "train.lambda_im": 0.1,
    "train.lambda_o": 1.0,
    "train.lr_g": 1e-4,
    "train.lr_d": 1e-4,
    "train.beta1": 0.0,
    "train.beta2": 0.999,
    "train.epochs": 60,
    "train.batch_size": 64,
    "train.loss_form": "hinge",
    "train.checkpoint_every": 0,
    "train.context_on": True,
    "train.appearance_on": True,
    "evalnet.n_train": 3000,
    "evalnet.n_val": 500,
    "evalnet.epochs": 8,
    "evalnet.batch_size": 128,
    "evalnet.lr": 1e-3,
    "evalnet.min_accuracy": 0.95,
    "eval.samples_per_layout": 5,
    "eval.is_splits": 10,
    "eval.max_layouts": 0,
    "eval.div_layouts": 32,
    "eval.div_pairs": 2,
    "generate.samples": 5,
}
