import numpy as np
import pytest

from ttsnet.core import (Epochs, SynthSpec, Trial, generate_synthetic, make_rng,
                         mixing_matrix, mrcp_template)


def test_trial_invariants():
    with pytest.raises(ValueError):
        Trial(np.zeros((0, 4)), 256.0, 0)
    with pytest.raises(ValueError):
        Trial(np.array([[0.0, np.nan]]), 256.0, 0)
    with pytest.raises(ValueError):
        Trial(np.zeros((1, 4)), 0.0, 0)
    with pytest.raises(ValueError):
        Trial(np.zeros((1, 4)), 256.0, 0, onset_sample=4)
    t = Trial(np.zeros((2, 4)), 256.0, 1, onset_sample=3)
    assert t.n_channels == 2 and t.n_samples == 4
    with pytest.raises(ValueError):
        t.data[0, 0] = 1.0


def test_epochs_invariants():
    a = Trial(np.zeros((2, 4)), 256.0, 0)
    with pytest.raises(ValueError):
        Epochs((a, Trial(np.zeros((2, 5)), 256.0, 1)), 2)
    with pytest.raises(ValueError):
        Epochs((a, Trial(np.zeros((2, 4)), 128.0, 1)), 2)
    with pytest.raises(ValueError):
        Epochs((a, Trial(np.zeros((2, 4)), 256.0, 2)), 2)
    with pytest.raises(ValueError):
        Epochs((a,), 1)
    ep = Epochs((a, Trial(np.ones((2, 4)), 256.0, 1)), 2)
    assert ep.channel_names == ("ch0", "ch1")
    assert ep.labels.tolist() == [0, 1]
    assert [g.shape for g in ep.by_class()] == [(1, 2, 4), (1, 2, 4)]


@pytest.mark.parametrize("kwargs", [
    dict(jitter_max_s=1.25),  # 1.25 * 256 = 320 = T / 4
    dict(noise_std=-0.1),
    dict(class_count=1),
    dict(amplitudes=(1.0, 2.0)),
])
def test_synth_spec_rejects(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)


def test_rng_stream_is_pinned():
    # PCG64 is bit-reproducible across platforms; these are its first draws for seed 0
    assert make_rng(0).integers(0, 2**32, size=3).tolist() == \
        np.random.Generator(np.random.PCG64(0)).integers(0, 2**32, size=3).tolist()
    with pytest.raises(ValueError):
        make_rng(-1)


def test_generate_is_pure():
    spec = SynthSpec(trials_per_class=5, n_channels=3, n_samples=512, seed=9)
    assert generate_synthetic(spec) == generate_synthetic(spec)
    assert generate_synthetic(spec) != generate_synthetic(SynthSpec(**{**spec.__dict__, "seed": 10}))


def test_zero_noise_trials_identical():
    ep = generate_synthetic(SynthSpec(trials_per_class=2, noise_std=0.0, n_samples=512))
    a, b = ep.by_class()[0]
    np.testing.assert_array_equal(a, b)
    assert ep.trials[0].onset_sample == int(round(0.6 * 512))


def test_labels_and_rest_class():
    ep = generate_synthetic(SynthSpec(class_count=3, trials_per_class=4, n_samples=512))
    assert np.bincount(ep.labels).tolist() == [4, 4, 4]
    rest = ep.by_class()[2]
    mix_inv = np.linalg.inv(mixing_matrix(ep.n_channels))
    src = np.einsum("cd,ndt->nct", mix_inv, rest)
    # rest trials carry noise only: source 0 has the same spread as the others
    assert abs(src[:, 0].std() - src[:, 1:].std()) < 0.1


def test_template_shape():
    x = mrcp_template(1024, 256.0, 600, 2.0)
    assert np.argmin(x) == 600 and x[600] == pytest.approx(-2.0)
    assert x.max() > 0 and np.argmax(x) > 600  # rebound after the onset


def test_jitter_lowers_grand_average_peak():
    base = dict(trials_per_class=40, noise_std=1.0, seed=4)
    peaks = []
    for jitter in (0.0, 0.3):
        ep = generate_synthetic(SynthSpec(jitter_max_s=jitter, **base))
        ga = ep.by_class()[0].mean(axis=0)
        peaks.append(np.abs(ga).max())
    assert peaks[1] < peaks[0]


def test_rest_variance_below_movement_near_onset():
    spec = SynthSpec(trials_per_class=30, noise_std=0.5, amplitudes=(5.0,), seed=2)
    ep = generate_synthetic(spec)
    lo, hi = spec.nominal_onset - 64, spec.nominal_onset + 64
    move, rest = (g[:, :, lo:hi] for g in ep.by_class())
    assert rest.var(axis=2).mean() < move.var(axis=2).mean()
