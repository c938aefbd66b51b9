import numpy as np
import pytest

from ttsnet.core import Epochs, SynthSpec, Trial, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_epochs(rng, n=4, C=2, T=5, K=2, fs=128.0, onsets=True):
    trials = []
    for i in range(n):
        onset = int(rng.integers(0, T)) if onsets and i % 2 == 0 else None
        data = rng.standard_normal((C, T)).astype(np.float32)
        trials.append(Trial(data=data, fs=fs, label=i % K, onset_sample=onset))
    return Epochs(trials=tuple(trials), class_count=K)


@pytest.fixture(scope="session")
def small_synth():
    """Binary movement-vs-rest set small enough for fast end-to-end checks."""
    return generate_synthetic(SynthSpec(trials_per_class=12, n_channels=4, n_samples=768,
                                        fs=128.0, seed=3))


# acceptance gate reporting -----------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    name = mark.args[0]
    ok = rep.passed and _CRITERIA.get(name, True)
    _CRITERIA[name] = ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in _CRITERIA.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
