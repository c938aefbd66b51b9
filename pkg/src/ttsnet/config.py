"""Experiment configuration and its flat ``key = value`` file format.

Grammar, one entry per line::

    # comment
    key = value          # trailing comments allowed
    bank_high_hz = 1, 2, 3

Blank lines are ignored. Keys are ``ExperimentConfig`` field names; keys
prefixed ``synth.`` configure the synthetic generator (``SynthSpec`` fields).
Tuples are comma separated, booleans are ``true``/``false``, and ``none``
clears an optional value.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import SynthSpec
from .dsp import BANK_HIGH_HZ, BANK_LOW_HZ, FILTER_ORDER, MRCP_BAND

METHODS = ("fbtrca", "eegnet", "tegnet", "otsnet", "ttsnet")
WINDOW_MODES = {"aligned": "aligned", "cue": "cue_I", "cue_I": "cue_I", "cue_II": "cue_II"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Hyperparameters of one cross-validated experiment.

    ``p_components`` and ``stage1_epochs`` default by context: P is 3 for
    onset-aligned windows and 6 otherwise; stage-1 epochs are 200 for binary
    tasks and 50 for multi-class ones.
    """

    method: str = "ttsnet"
    classes: tuple = ()
    window: str = "aligned"
    cue_s: Optional[float] = None
    p_components: Optional[int] = None
    bank_low_hz: float = BANK_LOW_HZ
    bank_high_hz: tuple = BANK_HIGH_HZ
    broad_band_hz: tuple = MRCP_BAND
    filter_order: int = FILTER_ORDER
    target_fs: float = 256.0
    stage1_epochs: Optional[int] = None
    stage2_epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 50
    weight_decay: float = 0.1
    otsnet_weight_decay: float = 0.0
    n_features: int = 10
    classifier: str = "linear-svm"
    paired_projections: bool = False
    decoder_input: str = "raw"
    n_folds: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.window not in WINDOW_MODES:
            raise ConfigError(f"unknown window {self.window!r}; expected one of {sorted(WINDOW_MODES)}")
        if self.classifier not in ("lda", "linear-svm"):
            raise ConfigError(f"unknown classifier {self.classifier!r}")
        if self.decoder_input not in ("raw", "common-removed"):
            raise ConfigError(f"decoder_input must be 'raw' or 'common-removed'")
        if self.p_components is not None and self.p_components < 1:
            raise ConfigError("p_components must be positive")
        if not self.bank_high_hz:
            raise ConfigError("at least one filter bank is required")
        if len(self.broad_band_hz) != 2:
            raise ConfigError("broad_band_hz needs two edges")
        if self.n_folds < 2 or self.batch_size < 1 or self.lr < 0:
            raise ConfigError("n_folds >= 2, batch_size >= 1 and lr >= 0 required")

    @property
    def window_mode(self) -> str:
        return WINDOW_MODES[self.window]

    @property
    def n_components(self) -> int:
        if self.p_components is not None:
            return self.p_components
        return 3 if self.window_mode == "aligned" else 6

    @property
    def n_banks(self) -> int:
        return len(self.bank_high_hz)

    def epochs_stage1(self, n_classes: int) -> int:
        if self.stage1_epochs is not None:
            return self.stage1_epochs
        return 200 if n_classes == 2 else 50

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _convert(raw: str, tp, key: str):
    text = raw.strip()
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        if text.lower() == "none":
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    try:
        if tp is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is tuple:
            items = [s.strip() for s in text.split(",") if s.strip()]
            return tuple(float(s) if any(c in s for c in ".eE") else int(s) for s in items)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_pairs(text: str) -> dict:
    """Parse ``key = value`` lines into an ordered dict of raw strings."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _build(cls, pairs: dict, base=None):
    types = _field_types(cls)
    values = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        values[key] = _convert(raw, types[key], key)
    try:
        return dataclasses.replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> tuple:
    """Return ``(ExperimentConfig, SynthSpec)`` described by a config text."""
    pairs = parse_pairs(text)
    exp = {k: v for k, v in pairs.items() if not k.startswith("synth.")}
    synth = {k[len("synth."):]: v for k, v in pairs.items() if k.startswith("synth.")}
    return _build(ExperimentConfig, exp), _build(SynthSpec, synth)


def load_config(path) -> tuple:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def format_config(cfg: ExperimentConfig, synth: Optional[SynthSpec] = None) -> str:
    """Render a config back into the file grammar (round-trips through :func:`parse_config`)."""
    lines = [f"{f.name} = {_format(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    if synth is not None:
        lines += [f"synth.{f.name} = {_format(getattr(synth, f.name))}"
                  for f in dataclasses.fields(synth)]
    return "\n".join(lines) + "\n"
