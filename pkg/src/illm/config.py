"""Flat key/value config files with one section per subcommand.

Unknown sections or keys are rejected outright so typos cannot silently
fall back to defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}

#: section -> key -> (type, default)
CONFIG_SCHEMA = {
    "train": {
        "stage": (str, "1"),
        "data_dir": (str, ""),
        "out_dir": (str, "runs"),
        "steps": (int, 20_000),
        "warmup_steps": (int, 10_000),
        "batch_size": (int, 8),
        "crop_size": (int, 256),
        "seed": (int, 0),
        "rate_preset": (str, "bpp0.14"),
        "lambda_adv": (float, 0.008),
        "lambda_mse": (float, 150.0),
        "peak_lr": (float, 3e-4),
        "disc_lr": (float, 4e-4),
        "weight_decay": (float, 5e-5),
        "use_perceptual": (bool, True),
        "latent_channels": (int, 64),
        "hyper_channels": (int, 32),
        "base_channels": (int, 64),
        "codebook_size": (int, 1024),
        "embed_dim": (int, 32),
        "labeler_base_channels": (int, 64),
        "labeler_lambda_mse": (float, 1.0),
        "disc_kind": (str, "illm_unet"),
        "disc_normalization": (str, "none"),
        "disc_base_channels": (int, 64),
        "codec_ckpt": (str, ""),
        "labeler_ckpt": (str, ""),
        "resume": (str, ""),
        "checkpoint_every": (int, 1000),
    },
    "eval": {
        "extractor": (str, "tiny"),
        "crop_policy": (str, "whole-resized"),
        "kid_subsets": (int, 100),
        "kid_subset_size": (int, 0),
        "seed": (int, 0),
    },
    "compress": {},
    "decompress": {},
    "plot": {},
}


@dataclass
class RunConfig:
    """Validated configuration for all subcommands."""

    sections: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        merged = {k: default for k, (_, default) in CONFIG_SCHEMA[section].items()}
        merged.update(self.sections.get(section, {}))
        return merged


def _convert(section: str, key: str, raw: str):
    typ, _ = CONFIG_SCHEMA[section][key]
    if typ is bool:
        low = raw.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections: dict = {}
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        sections[section] = {}
        for key, raw in parser.items(section):
            if key not in CONFIG_SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            sections[section][key] = _convert(section, key, raw)
    return RunConfig(sections)
