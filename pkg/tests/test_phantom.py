import numpy as np
import pytest
from scipy import stats

from spiralstorm.phantom import (PhantomError, PhantomSpec, generate_phantom,
                                 neighbor_fidelity, phase_distance,
                                 phase_distance_matrix, render_frame)


@pytest.fixture(scope="module")
def default_gt():
    return generate_phantom(PhantomSpec())


def test_no_motion_sources_equal_phase_frames_identical():
    spec = PhantomSpec(grid_size=32, n_frames=16, cardiac_period_frames=4.0,
                       respiratory_amplitude=0.0, heart_rate_jitter=0.0)
    gt = generate_phantom(spec)
    groups = {}
    for i, p in enumerate(gt.cardiac_phase):
        groups.setdefault(float(p), []).append(i)
    assert len(groups) == 4
    for members in groups.values():
        for j in members[1:]:
            assert np.array_equal(gt.frames[members[0]], gt.frames[j])


def test_zero_contraction_with_zero_breathing_is_static():
    spec = PhantomSpec(grid_size=32, n_frames=10, contraction_fraction=0.0,
                       respiratory_amplitude=0.0)
    gt = generate_phantom(spec)
    assert all(np.array_equal(gt.frames[0], f) for f in gt.frames)


def test_zero_contraction_removes_cardiac_dependence():
    # breathing still moves the heart, but the cardiac phase has no effect
    spec = PhantomSpec(grid_size=32, contraction_fraction=0.0)
    a = render_frame(spec, 0.1, 0.4)
    b = render_frame(spec, 0.6, 0.4)
    assert np.array_equal(a, b)


def test_difference_energy_spectrum_peaks(default_gt):
    f = default_gt.frames
    e = np.sum(np.abs(np.diff(f, axis=0)) ** 2, axis=(1, 2))
    e = e - e.mean()
    n = 4096
    spec = np.abs(np.fft.rfft(e * np.hanning(len(e)), n))
    freqs = np.fft.rfftfreq(n)
    band = freqs > 0.004
    # strongest peak near a cardiac harmonic, and a distinct respiratory-rate peak
    peak = freqs[band][np.argmax(spec[band])]
    harmonics = np.array([1, 2, 3]) / 20.3
    assert np.min(np.abs(harmonics - peak)) < 0.006
    low = (freqs > 0.004) & (freqs < 0.03)
    f_resp = freqs[low][np.argmax(spec[low])]
    assert abs(f_resp - 1 / 75) < 0.004 or abs(f_resp - 2 / 75) < 0.004


def test_phase_distance_examples(default_gt):
    assert phase_distance(default_gt, 7, 7) == 0.0
    gt = generate_phantom(PhantomSpec(grid_size=32, n_frames=3))
    object.__setattr__(gt, "cardiac_phase", np.array([0.1, 0.9, 0.5]))
    object.__setattr__(gt, "respiratory_phase", np.array([0.3, 0.3, 0.3]))
    assert phase_distance(gt, 0, 1) == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(IndexError):
        phase_distance(gt, 0, 5)


def test_phase_distance_spearman_with_image_distance(default_gt):
    gt = default_gt
    D = phase_distance_matrix(gt)
    x = np.abs(gt.frames).reshape(gt.n_frames, -1)
    sq = np.sum(x ** 2, 1)
    E = np.sqrt(np.maximum(sq[:, None] + sq[None] - 2 * x @ x.T, 0))
    iu = np.triu_indices(gt.n_frames, 1)
    rho = stats.spearmanr(D[iu], E[iu]).statistic
    assert rho > 0.8


def test_phase_matrix_matches_scalar(default_gt):
    D = phase_distance_matrix(default_gt)
    for i, j in [(0, 5), (13, 199), (100, 42)]:
        assert D[i, j] == pytest.approx(phase_distance(default_gt, i, j), abs=1e-15)


def test_determinism_and_range(default_gt):
    again = generate_phantom(PhantomSpec())
    assert np.array_equal(default_gt.frames, again.frames)
    mag = np.abs(default_gt.frames)
    assert mag.min() >= 0 and mag.max() <= 1
    assert np.all(default_gt.frames.imag == 0)
    assert default_gt.frames.shape == (200, 64, 64)


def test_stored_phases_reproduce_frames(default_gt):
    for i in (0, 57, 199):
        f = render_frame(default_gt.spec, default_gt.cardiac_phase[i],
                         default_gt.respiratory_phase[i])
        assert np.array_equal(f, default_gt.frames[i].real)


def test_arithmetic_cardiac_phase_without_jitter():
    gt = generate_phantom(PhantomSpec(grid_size=32, n_frames=50, heart_rate_jitter=0.0))
    d = np.mod(np.diff(gt.cardiac_phase), 1.0)
    assert np.allclose(d, 1 / 20.3, atol=1e-12)


@pytest.mark.parametrize("kwargs, word", [
    (dict(cardiac_period_frames=30.0, respiratory_period_frames=30.0), "differ"),
    (dict(respiratory_amplitude=8.0), "respiratory_amplitude"),
    (dict(contraction_fraction=1.0), "contraction_fraction"),
    (dict(heart_rate_jitter=-0.1), "jitter"),
])
def test_invalid_spec_names_invariant(kwargs, word):
    with pytest.raises(PhantomError, match=word):
        generate_phantom(PhantomSpec(**kwargs))


def test_neighbor_fidelity_of_phase_oracle(default_gt):
    D = phase_distance_matrix(default_gt)
    assert neighbor_fidelity(-D, default_gt) == 1.0
