"""Strict JSON run configuration.

A run config has up to five sections, each optional::

    {"model":   {"channels", "bnm_depths", "mapping_depth", "feature_width"},
     "train":   {TrainConfig fields, plus "phase0_weights" and "block_weights"},
     "eval":    {"sigmas", "clamp"},
     "wavelet": {"bank"},
     "io":      {"train_dir", "eval_dir"}}

Unknown sections or keys are rejected. ``train.epochs_per_bdt_block`` is
the schedule's block length.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import config_digest
from .errors import WDnCNNError
from .model import WDnCNNConfig
from .training import BDTSchedule, TrainConfig
from .wavelet import TOLERANCES, load_filterbank


class ConfigError(WDnCNNError, ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class EvalConfig:
    sigmas: tuple[float, ...] = (25.0, 50.0, 75.0)
    clamp: bool = True


@dataclass(frozen=True)
class WaveletConfig:
    bank: str = "dmey"


@dataclass(frozen=True)
class IOConfig:
    train_dir: str | None = None
    eval_dir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    model: WDnCNNConfig = field(default_factory=WDnCNNConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: BDTSchedule = field(default_factory=BDTSchedule)
    eval: EvalConfig = field(default_factory=EvalConfig)
    wavelet: WaveletConfig = field(default_factory=WaveletConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def to_dict(self) -> dict:
        train = dataclasses.asdict(self.train)
        train["phase0_weights"] = list(self.schedule.phase0_weights)
        train["block_weights"] = [list(r) for r in self.schedule.block_weights]
        model = dataclasses.asdict(self.model)
        model["bnm_depths"] = list(model["bnm_depths"])
        return {
            "model": model,
            "train": train,
            "eval": {"sigmas": list(self.eval.sigmas), "clamp": self.eval.clamp},
            "wavelet": dataclasses.asdict(self.wavelet),
            "io": dataclasses.asdict(self.io),
        }

    def digest(self) -> str:
        """Hash of everything that determines training results (io and eval excluded)."""
        d = self.to_dict()
        return config_digest({k: d[k] for k in ("model", "train", "wavelet")})


# --- field validators ----------------------------------------------------------


def _int(path, v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return v


def _float(path, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _bool(path, v):
    if not isinstance(v, bool):
        raise ConfigError(f"{path}: expected true/false, got {v!r}")
    return v


def _optional(check):
    return lambda path, v: None if v is None else check(path, v)


def _str(path, v):
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected a string, got {v!r}")
    return v


def _list_of(check, length=None):
    def validate(path, v):
        if not isinstance(v, list) or (length is not None and len(v) != length):
            want = f"a list of {length}" if length else "a list"
            raise ConfigError(f"{path}: expected {want}, got {v!r}")
        return tuple(check(f"{path}[{i}]", x) for i, x in enumerate(v))

    return validate


def _bank(path, v):
    v = _str(path, v)
    if v not in TOLERANCES:
        raise ConfigError(f"{path}: unknown filter bank {v!r}; choose from {sorted(TOLERANCES)}")
    return v


_FIELDS = {
    "model": {
        "channels": _int,
        "bnm_depths": _list_of(_int, 4),
        "mapping_depth": _optional(_int),
        "feature_width": _optional(_int),
        "kernel": _int,
        "pad": _int,
    },
    "train": {
        "patch_size": _int,
        "patches_per_epoch": _int,
        "batch_size": _int,
        "sigma_min": _float,
        "sigma_max": _float,
        "lr_initial": _float,
        "lr_final": _float,
        "epochs_per_bdt_block": _int,
        "pretrain_max_epochs": _int,
        "convergence_window": _int,
        "convergence_tol": _float,
        "finetune_epochs": _int,
        "use_bdt": _bool,
        "augment": _bool,
        "resample_each_epoch": _bool,
        "seed": _int,
        "phase0_weights": _list_of(_float, 4),
        "block_weights": _list_of(_list_of(_float, 4)),
    },
    "eval": {"sigmas": _list_of(_float), "clamp": _bool},
    "wavelet": {"bank": _bank},
    "io": {"train_dir": _optional(_str), "eval_dir": _optional(_str)},
}


def _section(raw: dict, name: str) -> dict:
    data = raw.get(name, {})
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object, got {data!r}")
    unknown = sorted(set(data) - set(_FIELDS[name]))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(unknown)}")
    return {k: _FIELDS[name][k](f"{name}.{k}", v) for k, v in data.items()}


def _build(name: str, cls, kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_run_config(raw: dict, seed: int | None = None) -> RunConfig:
    """Validate a decoded JSON document; ``seed`` (from the command line) overrides train.seed."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(unknown)}")
    sections = {name: _section(raw, name) for name in _FIELDS}
    train = sections["train"]
    schedule_kwargs = {}
    if "phase0_weights" in train:
        schedule_kwargs["phase0_weights"] = train.pop("phase0_weights")
    if "block_weights" in train:
        schedule_kwargs["block_weights"] = train.pop("block_weights")
    if seed is not None:
        train["seed"] = seed
    train_cfg = _build("train", TrainConfig, train)
    schedule_kwargs["block_length"] = train_cfg.epochs_per_bdt_block
    wavelet = _build("wavelet", WaveletConfig, sections["wavelet"])
    taps = load_filterbank(wavelet.bank).length
    if train_cfg.patch_size < taps:
        raise ConfigError(f"train.patch_size: {train_cfg.patch_size} is shorter than the {taps}-tap {wavelet.bank} filter")
    return RunConfig(
        model=_build("model", WDnCNNConfig, sections["model"]),
        train=train_cfg,
        schedule=_build("train", BDTSchedule, schedule_kwargs),
        eval=_build("eval", EvalConfig, sections["eval"]),
        wavelet=wavelet,
        io=_build("io", IOConfig, sections["io"]),
    )


def load_run_config(path: str | os.PathLike, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(raw, seed)
