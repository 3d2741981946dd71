import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapdenoise import noiselib as nl
from mapdenoise.errors import InsufficientData, InvalidParams, NoPreUpstrokeRegion, ParseError
from mapdenoise.mapsynth import MapParams, synth_beat
from mapdenoise.sigcore import WINDOW_LEN, Beat, Dataset, rms, upstroke_index

N = WINDOW_LEN


@pytest.fixture(scope="module")
def beat():
    return synth_beat(MapParams(upstroke_onset_ms=50.0), "p0", "p0_b0000")


@pytest.fixture(scope="module")
def library(small_clean):
    return nl.extract_ep_library(small_clean)


# Gaussian

def test_gaussian_zero_sigma():
    assert np.array_equal(nl.gaussian_noise(N, 0.0, 1), np.zeros(N))
    with pytest.raises(InvalidParams):
        nl.gaussian_noise(N, -1.0, 1)


def test_gaussian_moments_and_whiteness():
    n, sigma = 10**5, 0.05
    for seed in range(5):
        x = nl.gaussian_noise(n, sigma, seed)
        assert abs(x.mean()) <= 4 * sigma / math.sqrt(n)
        assert abs(x.std() / sigma - 1) <= 0.02
        xc = x - x.mean()
        denom = float(xc @ xc)
        for k in range(1, 51):
            assert abs(float(xc[:-k] @ xc[k:]) / denom) <= 4 / math.sqrt(n)


def test_gaussian_flat_periodogram():
    # Interior periodogram ordinates of white noise are ~Exp(1) relative to
    # their mean. P(max of 183 > t) ~ 183 exp(-t); t = 20 gives ~4e-7.
    for seed in range(200):
        p = np.abs(np.fft.rfft(nl.gaussian_noise(N, 1.0, seed)))[1:-1] ** 2
        assert p.max() / p.mean() < 20.0


def test_gaussian_deterministic():
    assert np.array_equal(nl.gaussian_noise(N, 0.1, [3, 4]), nl.gaussian_noise(N, 0.1, [3, 4]))
    assert not np.array_equal(nl.gaussian_noise(N, 0.1, 3), nl.gaussian_noise(N, 0.1, 4))


# Baseline wander

def test_wander_basics():
    assert np.array_equal(nl.baseline_wander(N, 0.0, seed=2), np.zeros(N))
    with pytest.raises(InvalidParams):
        nl.baseline_wander(N, 0.05, f_low=0.3, f_high=0.01)
    x = nl.baseline_wander(N, 0.06, n_components=3, seed=2)
    assert np.abs(x).max() <= 0.06 + 1e-15


def test_wander_single_component_monotone_ish():
    # at most 0.111 cycles fit in the window, so one component has at most one extremum
    for seed in range(300):
        d = np.diff(nl.baseline_wander(N, 0.05, n_components=1, seed=seed))
        s = np.sign(d[d != 0])
        assert np.count_nonzero(s[1:] != s[:-1]) <= 1


def test_wander_spectrally_subhertz():
    # long Hann-windowed record so leakage from the window edges does not mask the content
    n = 2**20
    f = np.fft.rfftfreq(n, 1e-3)
    for seed in range(3):
        e = np.abs(np.fft.rfft(nl.baseline_wander(n, 0.05, seed=seed) * np.hanning(n))) ** 2
        assert e[f > 1.0].sum() <= 1e-9 * e.sum()


# Powerline

def test_powerline():
    assert np.array_equal(nl.powerline(N, 0.0, 1), np.zeros(N))
    for seed in range(50):
        x = nl.powerline(N, 0.02, seed)
        np.testing.assert_allclose(x[20:], x[:-20], rtol=0, atol=1e-12)
        e = np.abs(np.fft.rfft(x)) ** 2
        assert int(np.argmax(e)) in (18, 19)
        assert (e[18] + e[19]) / e.sum() > 0.8
        assert rms(x) == pytest.approx(0.02 / math.sqrt(2), rel=0.01)


# Spikes

def test_spikes_single(beat):
    up = upstroke_index(beat)
    s = nl.spikes(beat, (0.1, 0.3), 1, seed=4)
    nz = np.flatnonzero(s)
    assert nz.size == 1 and nz[0] < up


def test_spikes_placement(beat):
    assert upstroke_index(beat) == 50
    for seed in range(200):
        s = nl.spikes(beat, (0.1, 0.3), 3, seed=seed)
        nz = np.flatnonzero(s)
        assert nz.size == 3 and nz.max() <= 49
        assert np.all((np.abs(s[nz]) >= 0.1) & (np.abs(s[nz]) <= 0.3))


def test_spikes_sum_equals_heights(beat):
    s = nl.spikes(beat, (0.1, 0.3), 2, seed=8)
    g = np.random.default_rng(8)
    idx = g.choice(upstroke_index(beat), size=2, replace=False)
    heights = g.uniform(0.1, 0.3, size=2) * g.choice([-1.0, 1.0], size=2)
    assert s.sum() == pytest.approx(heights.sum(), abs=1e-15)
    assert sorted(idx) == sorted(np.flatnonzero(s))


def test_spikes_no_room():
    x = np.zeros(N)
    x[1:] = 1.0
    with pytest.raises(NoPreUpstrokeRegion):
        nl.spikes(x, (0.1, 0.2), 1, seed=0)
    with pytest.raises(NoPreUpstrokeRegion):
        nl.spikes(synth_beat(MapParams(upstroke_onset_ms=50.0)), (0.1, 0.2), 60, seed=0)


# Truncation

@settings(max_examples=100, deadline=None)
@given(st.integers(0, N - 1), st.integers(1, N))
def test_truncation_mask_algebra(a, b):
    if a >= b:
        with pytest.raises(InvalidParams):
            nl.truncation_mask(N, a, b)
        return
    m = nl.truncation_mask(N, a, b)
    assert m.sum() == b - a
    assert np.all(m[a:b] == 1.0) and np.all(m[:a] == 0.0) and np.all(m[b:] == 0.0)
    assert np.array_equal(m * m, m)


def test_truncation_examples(beat):
    assert np.array_equal(nl.truncation_mask(N, 0, N), np.ones(N))
    out = beat.samples * nl.truncation_mask(N, 100, 300)
    assert np.all(out[:100] == 0.0) and np.all(out[300:] == 0.0)
    assert np.array_equal(out[100:300], beat.samples[100:300])


# EP library

def test_ep_library_residuals_sum_to_zero(small_clean, library):
    ids = np.array(library.patient_ids)
    for pid in small_clean.patients():
        total = library.residuals[ids == pid].sum(axis=0)
        assert np.abs(total).max() <= 1e-9
    assert np.abs(library.residuals.mean(axis=0)).max() < 0.01


def test_ep_library_examples():
    x = synth_beat(MapParams()).samples
    for n in (2, 4):
        same = [Beat(x, "a", f"a{i}") for i in range(n)]
        lib = nl.extract_ep_library(Dataset(same, {b.beat_id: "train" for b in same}))
        assert np.array_equal(lib.residuals, np.zeros((n, N)))
    # with three copies the mean 3x/3 may round by one ulp
    lib = nl.extract_ep_library([Beat(x, "a", f"a{i}") for i in range(3)])
    assert np.abs(lib.residuals).max() <= np.spacing(1.0)
    m = np.full(N, 0.5)
    d = np.linspace(-0.1, 0.1, N)
    pair = [Beat(m + d, "a", "a0"), Beat(m - d, "a", "a1")]
    lib = nl.extract_ep_library(pair)
    np.testing.assert_allclose(lib.residuals[0], d, atol=1e-15)
    np.testing.assert_allclose(lib.residuals[1], -d, atol=1e-15)
    with pytest.raises(InsufficientData):
        nl.extract_ep_library([Beat(x, "a", "a0"), Beat(x, "b", "b0")])


def test_ep_noise_rms(library):
    for seed in range(100):
        x = nl.ep_noise(library, N, 0.03, 3, seed, exclude_patient=library.patient_ids[0])
        assert abs(rms(x) - 0.03) <= 1e-9
    assert np.array_equal(nl.ep_noise(library, N, 0.0, 3, 1), np.zeros(N))


def test_ep_noise_single_residual(library):
    x = nl.ep_noise(library, N, 0.02, k_mix=1, seed=3, weights=[1.0])
    g = np.random.default_rng(3)
    r = library.residuals[g.choice(library.eligible(None), size=1, replace=False)[0]]
    np.testing.assert_allclose(x, r * (0.02 / rms(r)), rtol=0, atol=1e-15)
    assert abs(rms(x) - 0.02) <= 1e-9


def test_ep_noise_never_leaks(library):
    pids = sorted(set(library.patient_ids))
    for seed in range(10**4):
        own = pids[seed % len(pids)]
        assert own not in nl.ep_noise_sources(library, N, 0.03, 3, seed, exclude_patient=own)


def test_ep_noise_errors(library):
    only = nl.EpNoiseLibrary(library.residuals[:2], ("a", "a"))
    with pytest.raises(InsufficientData):
        nl.ep_noise(only, N, 0.03, 1, 0, exclude_patient="a")
    with pytest.raises(InsufficientData):
        nl.ep_noise(library, N, 0.03, len(library) + 1, 0)


# Corruption

def test_corrupt_identities(beat, library):
    assert nl.corrupt(beat, [], library) == beat
    assert nl.corrupt(beat, [nl.NoiseSpec("Gaussian", 0.0)]) == beat
    plan = [nl.NoiseSpec("Truncation", 0, {"keep_start": 0, "keep_end": N}), nl.NoiseSpec("Powerline", 0.02)]
    out = nl.corrupt(beat, plan, seed=7)
    expected = beat.samples + nl.powerline(N, 0.02, [7, 1])
    assert np.array_equal(out.samples, expected)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["Gaussian", "BaselineWander", "Powerline", "Spike", "EP"]),
       st.sampled_from(["Gaussian", "BaselineWander", "Powerline", "Spike", "EP"]))
def test_corrupt_additive(seed, ka, kb):
    b = synth_beat(MapParams(upstroke_onset_ms=50.0), "p0", "x")
    lib = nl.EpNoiseLibrary(np.random.default_rng(1).normal(0, 0.01, (6, N)), ("q",) * 6)
    amps = {"Gaussian": 0.01, "BaselineWander": 0.05, "Powerline": 0.02, "Spike": 0.3, "EP": 0.03}
    plan = [nl.NoiseSpec(ka, amps[ka]), nl.NoiseSpec(kb, amps[kb])]
    out = nl.corrupt(b, plan, lib, seed)
    total = b.samples + sum(nl.noise_series(b, s, [seed, i], lib) for i, s in enumerate(plan))
    np.testing.assert_allclose(out.samples, np.clip(total, *nl.CLAMP), rtol=0, atol=1e-15)


def test_corrupt_clamps_and_truncates_last(beat):
    plan = [nl.NoiseSpec("Truncation", 0, {"keep_start": 5, "keep_end": 365}),
            nl.NoiseSpec("BaselineWander", 5.0)]
    out = nl.corrupt(beat, plan, seed=1).samples
    assert np.all(out[:5] == 0.0) and np.all(out[365:] == 0.0)
    assert out.min() >= -0.5 and out.max() <= 1.5


def test_plan_validation(tmp_path):
    with pytest.raises(InvalidParams):
        nl.validate_plan([nl.NoiseSpec("Truncation"), nl.NoiseSpec("Truncation")])
    with pytest.raises(InvalidParams):
        nl.NoiseSpec("Thermal", 0.1)
    with pytest.raises(InvalidParams):
        nl.NoiseSpec("Gaussian", -0.1)
    with pytest.raises(InvalidParams):
        nl.NoiseSpec("Powerline", 0.1, {"freq_hz": 600.0})
    with pytest.raises(InvalidParams):
        nl.NoiseSpec("Gaussian", 0.1, {"colour": "pink"})
    plan = nl.default_plan()
    nl.save_plan(plan, tmp_path / "plan.json")
    assert nl.load_plan(tmp_path / "plan.json") == plan
    raw = json.loads((tmp_path / "plan.json").read_text())
    assert raw[3] == {"kind": "Spike", "amplitude": 0.3, "min_amplitude": 0.1, "n_spikes": 2}
    (tmp_path / "bad.json").write_text("[{\"kind\": \n")
    with pytest.raises(ParseError):
        nl.load_plan(tmp_path / "bad.json")
    assert [p.kind for p in nl.default_plan(include_ep=False)] == [
        "Gaussian", "BaselineWander", "Powerline", "Spike", "Truncation"]


def test_corrupt_dataset_deterministic(small_clean):
    a = nl.corrupt_dataset(small_clean, nl.default_plan(), seed=3)
    b = nl.corrupt_dataset(small_clean, nl.default_plan(), seed=3)
    assert a == b and a.paired
    c = nl.corrupt_dataset(small_clean, nl.default_plan(), seed=4)
    assert a != c


def test_library_file_round_trip(tmp_path, library):
    nl.write_library(library, tmp_path / "lib.csv")
    back = nl.read_library(tmp_path / "lib.csv")
    assert np.array_equal(back.residuals, library.residuals)
    assert back.patient_ids == library.patient_ids
