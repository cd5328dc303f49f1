import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rlpp import _backend
from rlpp.core import Dataset, EventSequence
from rlpp.errors import DegenerateData, ValidationError
from rlpp.kernel import (
    KernelConfig,
    RewardEstimator,
    gram,
    k,
    median_bandwidth,
    median_pairwise_distance,
    mmd_squared,
    reward_at,
    reward_profile,
)
from rlpp.rng import RngStream
from rlpp.simulate import Linear, preset, simulate_dataset


def ds(seqs, T=10.0):
    return Dataset([EventSequence(s, T) for s in seqs], T)


def brute_mmd(A, B, sigma):
    kk = lambda x, y: math.exp(-((x - y) ** 2) / (2 * sigma**2))  # noqa: E731
    L, M = len(A), len(B)
    ee = sum(kk(x, y) for a in A for b in A for x in a.times for y in b.times)
    ll = sum(kk(x, y) for a in B for b in B for x in a.times for y in b.times)
    el = sum(kk(x, y) for a in A for b in B for x in a.times for y in b.times)
    return ee / L**2 + ll / M**2 - 2 * el / (L * M)


def random_dataset(rng, n, T=10.0, max_events=6):
    return ds([np.sort(rng.uniform(0, T, rng.integers(0, max_events + 1))) for _ in range(n)], T)


# ------------------------------------------------------------ kernel

def test_kernel_examples():
    assert k(3.0, 3.0, KernelConfig(0.7)) == 1.0
    assert k(0.0, 1.0, KernelConfig(1.0)) == pytest.approx(0.606531, abs=1e-6)
    assert k(0.0, 1.0, KernelConfig(1.0)) == math.exp(-0.5)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 20))
def test_kernel_symmetric_and_bounded(a, b, s):
    cfg = KernelConfig(s)
    assert k(a, b, cfg) == k(b, a, cfg)
    assert 0.0 <= k(a, b, cfg) <= 1.0


@pytest.mark.parametrize("sigma", [0.0, -1.0, math.inf, math.nan])
def test_kernel_config_rejects_bad_sigma(sigma):
    with pytest.raises(ValidationError):
        KernelConfig(sigma)


@given(st.lists(st.floats(0, 20), min_size=1, max_size=50), st.floats(0.05, 10))
def test_gram_is_psd(points, sigma):
    G = gram(points, KernelConfig(sigma))
    assert np.array_equal(G, G.T)
    assert np.linalg.eigvalsh(G).min() >= -1e-9


# ------------------------------------------------------------ bandwidth

def test_median_examples():
    assert median_bandwidth(ds([[0.0, 1.0, 3.0]])).sigma == 2.0
    assert median_bandwidth(ds([[0.0, 2.0]])).sigma == 2.0
    with pytest.raises(DegenerateData):
        median_bandwidth(ds([[1.0], [1.0]]))
    with pytest.raises(DegenerateData):
        median_bandwidth(ds([[1.0]]))


@given(st.lists(st.integers(0, 30), min_size=2, max_size=60))
def test_median_matches_enumeration(values):
    x = np.asarray(values, dtype=np.float64) / 3.0
    d = np.abs(x[:, None] - x[None, :])[np.triu_indices(x.size, 1)]
    d = d[d > 0]
    if d.size == 0:
        with pytest.raises(DegenerateData):
            median_pairwise_distance(x)
    else:
        assert median_pairwise_distance(x) == np.median(d)


def test_median_subsample_is_deterministic():
    data = simulate_dataset(preset("HP"), 15.0, 300, RngStream(0))
    a = median_bandwidth(data, max_points=2000, seed=5)
    b = median_bandwidth(data, max_points=2000, seed=5)
    assert a == b
    assert a.sigma == pytest.approx(median_bandwidth(data).sigma, rel=0.05)


# ------------------------------------------------------------ MMD

def test_mmd_hand_case():
    value = mmd_squared(ds([[1.0]]), ds([[2.0]]), KernelConfig(1.0))
    assert value == 2.0 - 2.0 * math.exp(-0.5)
    assert value == pytest.approx(0.786939, abs=1e-6)


def test_mmd_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        A = random_dataset(rng, rng.integers(1, 5))
        B = random_dataset(rng, rng.integers(1, 5))
        sigma = rng.uniform(0.2, 5)
        ref = brute_mmd(A, B, sigma)
        got = mmd_squared(A, B, KernelConfig(sigma))
        assert got == pytest.approx(max(ref, 0.0), rel=1e-10, abs=1e-13)


def test_mmd_identical_and_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(20):
        A = random_dataset(rng, 4)
        B = random_dataset(rng, 3)
        cfg = KernelConfig(rng.uniform(0.2, 5))
        assert abs(mmd_squared(A, A, cfg)) <= 1e-12
        assert mmd_squared(A, B, cfg) == pytest.approx(mmd_squared(B, A, cfg), rel=1e-12)
        assert mmd_squared(A, B, cfg) >= 0.0


def test_mmd_bitwise_independent_of_threads():
    A = simulate_dataset(preset("HP"), 15.0, 40, RngStream(2))
    B = simulate_dataset(preset("IP"), 15.0, 40, RngStream(3))
    cfg = KernelConfig(2.0)
    before = _backend.get_threads()
    try:
        _backend.set_threads(1)
        one = mmd_squared(A, B, cfg)
        _backend.set_threads(4)
        assert mmd_squared(A, B, cfg) == one
    finally:
        _backend.set_threads(before)


# ------------------------------------------------------------ reward

def test_reward_examples():
    est = RewardEstimator(ds([[1.0]]), ds([[2.0], [2.0]]), KernelConfig(1.0))
    assert reward_at(est, 1.0, exclude=1) == pytest.approx(1 - math.exp(-0.5), abs=1e-15)
    assert reward_at(est, 1.0, exclude=1) == pytest.approx(0.393469, abs=1e-6)


def test_reward_zero_when_batches_match():
    A = ds([[1.0, 4.0], [2.5]])
    est = RewardEstimator(A, A, KernelConfig(1.3))
    assert np.all(est.evaluate(np.linspace(0, 9.9, 50)) == 0.0)


def test_reward_antisymmetry():
    rng = np.random.default_rng(2)
    A, B = random_dataset(rng, 3), random_dataset(rng, 4)
    cfg = KernelConfig(1.5)
    grid = np.linspace(0, 9.9, 40)
    r1 = RewardEstimator(A, B, cfg).evaluate(grid)
    r2 = RewardEstimator(B, A, cfg).evaluate(grid)
    np.testing.assert_allclose(r1, -r2, rtol=0, atol=1e-14)


def test_reward_exclusion_matches_manual():
    rng = np.random.default_rng(3)
    A, B = random_dataset(rng, 3), random_dataset(rng, 4)
    cfg = KernelConfig(0.8)
    est = RewardEstimator(A, B, cfg)
    rest = Dataset([B[i] for i in range(4) if i != 2], B.window_end)
    # excluding a learner equals the full-batch reward against the other learners
    full = RewardEstimator(A, rest, cfg).evaluate([3.3])[0]
    assert reward_at(est, 3.3, exclude=2) == pytest.approx(full, rel=1e-13, abs=1e-15)
    with pytest.raises(ValidationError):
        reward_at(est, 3.3, exclude=4)


def test_learner_rewards_match_evaluate():
    rng = np.random.default_rng(4)
    A, B = random_dataset(rng, 3), random_dataset(rng, 5)
    est = RewardEstimator(A, B, KernelConfig(1.1))
    rewards, mmd2 = est.learner_rewards()
    for m in range(5):
        np.testing.assert_allclose(rewards[m], est.evaluate(B[m].times, exclude=m), rtol=1e-12, atol=1e-14)
    assert mmd2 == pytest.approx(mmd_squared(A, B, KernelConfig(1.1)), rel=1e-12, abs=1e-14)


def test_reward_is_mmd_derivative():
    # adding a learner event at t moves the learner embedding by k(., t)/M, so
    # mmd2 changes by exactly -2 r(t)/M + k(t, t)/M^2
    rng = np.random.default_rng(5)
    A, B = random_dataset(rng, 3), random_dataset(rng, 4)
    cfg = KernelConfig(1.7)
    M = len(B)
    base = mmd_squared(A, B, cfg)
    for t in (0.5, 4.2, 8.8):
        seqs = [s.times for s in B]
        seqs[1] = np.sort(np.append(seqs[1], t))
        after = mmd_squared(A, ds(seqs), cfg)
        r = reward_at(RewardEstimator(A, B, cfg), t)
        assert after - base == pytest.approx(-2 * r / M + 1 / M**2, rel=1e-9, abs=1e-12)


def test_normalized_reward():
    rng = np.random.default_rng(6)
    A, B = random_dataset(rng, 3), random_dataset(rng, 4)
    cfg = KernelConfig(1.0)
    est = RewardEstimator(A, B, cfg)
    ratio = est.evaluate([2.0], normalized=True)[0] / est.evaluate([2.0])[0]
    assert ratio == pytest.approx(1 / math.sqrt(mmd_squared(A, B, cfg)), rel=1e-12)


def test_reward_profile_and_translation():
    assert reward_profile(RewardEstimator(ds([[1.0]]), ds([[2.0], [3.0]]), KernelConfig(1.0)), []) == []
    A = ds([[2.0, 2.5], [3.0]], 30.0)
    B = ds([[6.0], [7.0, 8.0]], 30.0)
    shift = 10.0
    As = ds([s.times + shift for s in A], 30.0)
    Bs = ds([s.times + shift for s in B], 30.0)
    grid = np.linspace(0, 15, 301)
    p1 = np.array(reward_profile(RewardEstimator(A, B, KernelConfig(1.0)), grid))
    p2 = np.array(reward_profile(RewardEstimator(As, Bs, KernelConfig(1.0)), grid + shift))
    assert p2[np.argmax(p2[:, 1]), 0] == pytest.approx(p1[np.argmax(p1[:, 1]), 0] + shift)


def test_reward_sign_follows_intensity_gap():
    # expert HP runs well above a rate-1 learner, so the reward is positive where the
    # expert intensity exceeds the learner's
    expert = simulate_dataset(preset("HP"), 15.0, 100, RngStream(7))
    learner = simulate_dataset(Linear(0.0, 1.0), 15.0, 100, RngStream(8))
    est = RewardEstimator(expert, learner, median_bandwidth(expert))
    grid = np.linspace(1.0, 14.0, 27)
    assert np.all(est.evaluate(grid) > 0)
    low = simulate_dataset(Linear(0.0, 8.0), 15.0, 100, RngStream(9))
    assert np.all(RewardEstimator(expert, low, median_bandwidth(expert)).evaluate(grid) < 0)


def test_leave_one_out_reward_unbiased():
    spec = Linear(0.0, 2.0)
    vals = []
    for rep in range(300):
        E = simulate_dataset(spec, 10.0, 5, RngStream(100, (rep, 0)))
        B = simulate_dataset(spec, 10.0, 4, RngStream(100, (rep, 1)))
        est = RewardEstimator(E, B, KernelConfig(1.0))
        vals.append(np.mean([reward_at(est, 5.0, exclude=m) for m in range(4)]))
    vals = np.asarray(vals)
    assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_estimator_requires_two_learners_and_shared_window():
    with pytest.raises(ValidationError):
        RewardEstimator(ds([[1.0]]), ds([[2.0]]), KernelConfig(1.0))
    with pytest.raises(ValidationError):
        RewardEstimator(ds([[1.0]], 5.0), ds([[2.0], [3.0]], 6.0), KernelConfig(1.0))
