import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from ttsnet.config import (METHODS, ConfigError, ExperimentConfig, format_config, load_config,
                           parse_config, parse_pairs)
from ttsnet.core import SynthSpec


def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.lr, cfg.batch_size, cfg.weight_decay) == (1e-3, 50, 0.1)
    assert cfg.n_components == 3
    assert cfg.replace(window="cue").n_components == 6
    assert cfg.replace(window="cue_II", p_components=4).n_components == 4
    assert cfg.epochs_stage1(2) == 200 and cfg.epochs_stage1(6) == 50
    assert cfg.n_banks == 10 and cfg.bank_low_hz == 0.5
    assert cfg.bank_high_hz == tuple(float(h) for h in range(1, 11))
    assert cfg.n_folds == 10 and cfg.classifier == "linear-svm"
    assert cfg.replace(window="cue").window_mode == "cue_I"


@pytest.mark.parametrize("kwargs", [dict(method="svm"), dict(window="late"), dict(classifier="rf"),
                                    dict(p_components=0), dict(bank_high_hz=()), dict(n_folds=1),
                                    dict(decoder_input="x")])
def test_invalid_values(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kwargs)


def test_parse_grammar():
    text = """
    # experiment
    method = fbtrca
    bank_high_hz = 2, 4.5, 8   # three banks
    p_components = none
    paired_projections = true
    synth.trials_per_class = 12
    synth.jitter_max_s = 0.3
    """
    cfg, spec = parse_config(text)
    assert cfg.method == "fbtrca" and cfg.bank_high_hz == (2, 4.5, 8)
    assert cfg.p_components is None and cfg.paired_projections is True
    assert spec == SynthSpec(trials_per_class=12, jitter_max_s=0.3)


@pytest.mark.parametrize("text,match", [
    ("method fbtrca", "expected"),
    ("= 3", "empty key"),
    ("seed = 1\nseed = 2", "duplicate"),
    ("colour = red", "unknown key"),
    ("seed = x", "bad value"),
    ("paired_projections = yes", "bad value"),
    ("synth.noise_std = -1", "noise_std"),
])
def test_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_load_missing(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_pairs_keep_order():
    assert list(parse_pairs("b = 1\na = 2")) == ["b", "a"]


@settings(max_examples=60, deadline=None)
@given(method=st.sampled_from(METHODS),
       window=st.sampled_from(["aligned", "cue", "cue_I", "cue_II"]),
       p=st.one_of(st.none(), st.integers(1, 8)),
       lr=st.floats(0, 1, allow_nan=False),
       highs=st.lists(st.floats(1.0, 20.0, allow_nan=False), min_size=1, max_size=4).map(tuple),
       seed=st.integers(0, 2**31), cue=st.one_of(st.none(), st.floats(0.1, 9.0)),
       noise=st.floats(0, 3), trials=st.integers(1, 80))
def test_format_round_trip(method, window, p, lr, highs, seed, cue, noise, trials):
    cfg = ExperimentConfig(method=method, window=window, p_components=p, lr=lr,
                           bank_high_hz=highs, seed=seed, cue_s=cue)
    spec = SynthSpec(noise_std=noise, trials_per_class=trials)
    back, spec_back = parse_config(format_config(cfg, spec))
    assert back == cfg and spec_back == spec
    assert dataclasses.asdict(back) == dataclasses.asdict(cfg)
