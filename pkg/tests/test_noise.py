import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtgnn.noise import UNOBSERVED, NoiseSpec, corrupt


def test_zero_rate_is_identity():
    y = np.array([0, 1, 2, 3, 0, 1])
    lab = corrupt(y, [0, 2, 4], NoiseSpec("uniform", 0.0), 0, 4)
    assert np.array_equal(lab.observed[[0, 2, 4]], y[[0, 2, 4]])
    assert not lab.flip_mask.any()


def test_unlisted_nodes_untouched():
    y = np.arange(10) % 3
    lab = corrupt(y, [1, 2], NoiseSpec("uniform", 0.4), 0, 3)
    rest = np.setdiff1d(np.arange(10), [1, 2])
    assert np.all(lab.observed[rest] == UNOBSERVED)
    assert not lab.flip_mask[rest].any()


def test_binary_uniform_flip_probability():
    y = np.zeros(20_000, dtype=int)
    lab = corrupt(y, np.arange(20_000), NoiseSpec("uniform", 0.3), 1, 2)
    rate = lab.flip_mask.mean()
    sigma = np.sqrt(0.3 * 0.7 / 20_000)
    assert abs(rate - 0.3) < 5 * sigma
    assert np.all(lab.observed[lab.flip_mask] == 1)


def test_uniform_spreads_over_other_classes():
    y = np.zeros(40_000, dtype=int)
    lab = corrupt(y, np.arange(40_000), NoiseSpec("uniform", 0.3), 2, 4)
    counts = np.bincount(lab.observed, minlength=4) / 40_000
    sigma = np.sqrt(0.1 * 0.9 / 40_000)
    assert np.all(np.abs(counts[1:] - 0.1) < 5 * sigma)


def test_pair_flip_fraction_binomial():
    y = np.arange(10_000) % 4
    lab = corrupt(y, np.arange(10_000), NoiseSpec.pair(0.3, 4), 3, 4)
    sigma = np.sqrt(0.3 * 0.7 / 10_000)
    assert sigma == pytest.approx(0.0046, abs=1e-4)
    assert abs(lab.flip_mask.mean() - 0.3) < 3 * sigma


@given(st.sampled_from(["uniform", "pair"]), st.floats(0.0, 0.49), st.integers(2, 6), st.integers(0, 10_000))
def test_flip_mask_matches_label_change(kind, rate, C, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, C, size=300)
    spec = NoiseSpec.pair(rate, C) if kind == "pair" else NoiseSpec("uniform", rate)
    ids = np.arange(0, 300, 2)
    lab = corrupt(y, ids, spec, seed, C)
    assert np.array_equal(lab.flip_mask[ids], lab.observed[ids] != y[ids])
    flipped = ids[lab.flip_mask[ids]]
    if kind == "pair":
        assert np.array_equal(lab.observed[flipped], (y[flipped] + 1) % C)
    assert np.all((lab.observed[ids] >= 0) & (lab.observed[ids] < C))


def test_deterministic():
    y = np.arange(1000) % 5
    a = corrupt(y, np.arange(1000), NoiseSpec("uniform", 0.3), 9, 5)
    b = corrupt(y, np.arange(1000), NoiseSpec("uniform", 0.3), 9, 5)
    assert np.array_equal(a.observed, b.observed)


class TestSpecValidation:
    def test_rate_at_half_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec("uniform", 0.5)

    def test_pair_needs_map(self):
        with pytest.raises(ValueError):
            NoiseSpec("pair", 0.2)

    def test_pair_map_without_fixed_points(self):
        with pytest.raises(ValueError):
            NoiseSpec("pair", 0.2, (1, 1, 0))

    def test_custom_pair_map(self):
        y = np.array([0, 1, 2] * 2000)
        lab = corrupt(y, np.arange(6000), NoiseSpec.pair(0.4, 3, (2, 0, 1)), 4, 3)
        flipped = lab.flip_mask
        assert np.array_equal(lab.observed[flipped], np.array([2, 0, 1])[y[flipped]])

    def test_empty_ids(self):
        with pytest.raises(ValueError):
            corrupt(np.array([0, 1]), [], NoiseSpec("uniform", 0.1), 0)
