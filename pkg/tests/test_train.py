import math

import numpy as np
import pytest
from scipy import stats

from rlpp import _fallback
from rlpp.core import Dataset, EventSequence, InterEventTimes
from rlpp.errors import ValidationError
from rlpp.kernel import KernelConfig
from rlpp.policy import PolicyParams, RolloutSample, rollout
from rlpp.rng import RngStream
from rlpp.simulate import Linear, preset, simulate_dataset
from rlpp.train import (
    FULL_RETURN,
    REWARD_TO_GO,
    REWARD_TO_GO_BASELINE,
    OptimizerState,
    TrainConfig,
    coupled_baselines,
    initial_params,
    load_checkpoint,
    policy_gradient,
    returns_for,
    score_gradient,
    step,
    train,
    write_trace_csv,
)

SMALL = dict(L=4, M=4, d=4, iterations=6, learning_rate=1e-2)


@pytest.fixture(scope="module")
def expert():
    return simulate_dataset(preset("HP"), 5.0, 20, RngStream(0))


def single_event_sample(params, t, T):
    gaps = np.array([t])
    H, Z = _fallback.rnn_forward(params.V, params.W, params.u, params.c, gaps)
    return RolloutSample(EventSequence([t], T), InterEventTimes(gaps), H, Z)


def trace_key(trace):
    return [(r.iteration, r.mmd2, r.mean_return, r.grad_norm) for r in trace]


# ------------------------------------------------------------ returns

def test_returns_for_variants():
    r = [np.array([1.0, 2.0, 3.0]), np.array([4.0])]
    full = returns_for(r, FULL_RETURN)
    np.testing.assert_array_equal(full[0], [6.0, 6.0, 6.0])
    np.testing.assert_array_equal(full[1], [4.0])
    rtg = returns_for(r, REWARD_TO_GO)
    np.testing.assert_array_equal(rtg[0], [6.0, 5.0, 3.0])
    base = returns_for(r, REWARD_TO_GO_BASELINE)
    # step 0: the other rollout's reward-to-go is the baseline; later steps have no others
    np.testing.assert_array_equal(base[0], [6.0 - 4.0, 5.0, 3.0])
    np.testing.assert_array_equal(base[1], [4.0 - 6.0])
    assert returns_for([np.zeros(0), np.zeros(0)], REWARD_TO_GO_BASELINE)[0].size == 0
    with pytest.raises(ValidationError):
        returns_for(r, "nope")


def test_baseline_is_leave_one_out_mean():
    rng = np.random.default_rng(0)
    r = [rng.normal(size=n) for n in (3, 5, 5, 1)]
    rtg = returns_for(r, REWARD_TO_GO)
    base = returns_for(r, REWARD_TO_GO_BASELINE)
    for m in range(4):
        for i in range(r[m].size):
            others = [rtg[j][i] for j in range(4) if j != m and rtg[j].size > i]
            b = np.mean(others) if others else 0.0
            assert base[m][i] == pytest.approx(rtg[m][i] - b, abs=1e-14)


def test_coupled_baselines_brute_force():
    from rlpp.kernel import RewardEstimator

    T = 4.0
    expert = Dataset([EventSequence(t, T) for t in ([0.5, 1.5], [2.0], [])], T)
    learner = Dataset([EventSequence(t, T) for t in ([0.3, 1.1, 3.0], [], [2.2], [0.9, 1.0])], T)
    kern = KernelConfig(0.9)
    rewards, blocks, _ = RewardEstimator(expert, learner, kern).learner_terms()
    got = coupled_baselines(rewards, blocks)
    M = len(learner)
    for m in range(M):
        rest = [j for j in range(M) if j != m]
        # rewards of the other rollouts computed as if rollout m did not exist
        est = RewardEstimator(expert, learner.subset(rest), kern)
        rtgs = []
        for pos, j in enumerate(rest):
            r = est.evaluate(learner[j].times, exclude=pos)
            rtgs.append(np.append(np.cumsum(r[::-1])[::-1], 0.0))
        expect = []
        for i in range(len(learner[m]) + 1):
            vals = [g[i] for g in rtgs if g.size > i]
            expect.append(np.mean(vals) if vals else 0.0)
        np.testing.assert_allclose(got[m], expect, rtol=1e-12, atol=1e-14)
    assert coupled_baselines(rewards[:2], blocks[:, :2]) is None


# ------------------------------------------------------------ gradient

@pytest.mark.parametrize("vr", [FULL_RETURN, REWARD_TO_GO, REWARD_TO_GO_BASELINE])
def test_policy_gradient_brute_force_minimal(vr):
    # M = 2 rollouts with one event each, d = 1, exponential output
    V, W, u, c = 0.7, -0.4, 0.9, 0.2
    params = PolicyParams([V], [[W]], [u], c)
    T = 3.0
    a = [0.6, 1.7]
    samples = [single_event_sample(params, t, T) for t in a]
    expert = Dataset([EventSequence([1.0], T)], T)
    kern = KernelConfig(0.8)
    grad, info = policy_gradient(expert, samples, params, kern, vr)

    k = lambda x, y: math.exp(-((x - y) ** 2) / (2 * 0.8**2))  # noqa: E731
    sp = lambda z: math.log1p(math.exp(z)) + 1e-6  # noqa: E731
    sig = lambda z: 1 / (1 + math.exp(-z))  # noqa: E731
    r = [k(1.0, a[0]) - k(a[1], a[0]), k(1.0, a[1]) - k(a[0], a[1])]
    expect = np.zeros(4)  # V, W, u, c
    for m in range(2):
        th0 = sp(c)
        h1 = math.tanh(V * a[m])
        z1 = u * h1 + c
        tail = T - a[m]
        event_score = np.array([0.0, 0.0, 0.0, (1 / th0 - a[m]) * sig(c)])
        surv_score = -tail * sig(z1) * np.array([u * (1 - h1 * h1) * a[m], 0.0, h1, 1.0])
        if vr == FULL_RETURN:
            w_event, w_surv = r[m], r[m]
        elif vr == REWARD_TO_GO:
            w_event, w_surv = r[m], 0.0
        else:
            # two rollouts admit no independent baseline: plain reward-to-go
            w_event, w_surv = r[m], 0.0
        expect += w_event * event_score + w_surv * surv_score
    expect /= 2
    np.testing.assert_allclose(grad, expect, rtol=1e-10, atol=1e-15)
    assert info["mean_return"] == pytest.approx(np.mean(r), rel=1e-14)


def _gradient_batches(params, expert, kern, n_batches, M, T, vrs):
    out = {vr: [] for vr in vrs}
    for b in range(n_batches):
        samples = [rollout(params, T, RngStream(77, (b, m))) for m in range(M)]
        for vr in vrs:
            out[vr].append(policy_gradient(expert, samples, params, kern, vr)[0])
    return {vr: np.array(v) for vr, v in out.items()}


@pytest.fixture(scope="module")
def gradient_batches():
    params = PolicyParams([0.5], [[0.3]], [-0.6], 0.4)
    expert = simulate_dataset(Linear(0.0, 2.0), 3.0, 8, RngStream(1))
    return _gradient_batches(params, expert, KernelConfig(0.7), 2000, 4, 3.0,
                             [FULL_RETURN, REWARD_TO_GO, REWARD_TO_GO_BASELINE])


def test_full_return_and_reward_to_go_agree_in_expectation(gradient_batches):
    diff = gradient_batches[FULL_RETURN] - gradient_batches[REWARD_TO_GO]
    se = diff.std(axis=0, ddof=1) / math.sqrt(diff.shape[0])
    assert np.all(np.abs(diff.mean(axis=0)) <= 3 * se + 1e-12)
    diff = gradient_batches[REWARD_TO_GO_BASELINE] - gradient_batches[REWARD_TO_GO]
    se = diff.std(axis=0, ddof=1) / math.sqrt(diff.shape[0])
    assert np.all(np.abs(diff.mean(axis=0)) <= 3 * se + 1e-12)


def test_variance_ordering(gradient_batches):
    # one-sided bootstrap: fail only if a variance ratio is above 1 at the 1% level
    boot = np.random.default_rng(0)
    x = {vr: g[:, -1] for vr, g in gradient_batches.items()}  # the output bias coordinate
    n = x[FULL_RETURN].size
    for lo, hi in ((REWARD_TO_GO_BASELINE, REWARD_TO_GO), (REWARD_TO_GO, FULL_RETURN)):
        ratios = []
        for _ in range(1000):
            i = boot.integers(0, n, n)
            ratios.append(x[lo][i].var() / x[hi][i].var())
        assert np.quantile(ratios, 0.01) <= 1.0, (lo, hi)


def test_score_estimator_unbiased_against_finite_difference():
    # frozen reward r(t) = cos(t); objective J = E[sum_i r(t_i)] for a d = 1 policy
    T = 2.0
    reward = np.cos
    base = np.array([0.5, 0.3, -0.6, 0.4])
    n = 20000

    def returns(x):
        p = PolicyParams.from_flat(x, 1)
        return np.array([reward(rollout(p, T, RngStream(5, (m,))).sequence.times).sum() for m in range(n)])

    params = PolicyParams.from_flat(base, 1)
    grads = []
    for m in range(n):
        s = rollout(params, T, RngStream(6, (m,)))
        grads.append(score_gradient(params, [s], [reward(s.sequence.times)], REWARD_TO_GO))
    grads = np.array(grads)
    h = 0.05
    for i in (0, 3):
        xp, xm = base.copy(), base.copy()
        xp[i] += h
        xm[i] -= h
        fd_samples = (returns(xp) - returns(xm)) / (2 * h)
        se = math.sqrt(grads[:, i].var(ddof=1) / n + fd_samples.var(ddof=1) / n)
        assert abs(grads[:, i].mean() - fd_samples.mean()) <= 3 * se


def test_matched_distributions_give_small_gradient():
    # learner = expert distribution: zero-weight policy vs homogeneous Poisson at its rate
    theta = math.log(2.0) + 1e-6
    params = PolicyParams([0.0], [[0.0]], [0.0], 0.0)
    kern = KernelConfig(1.0)
    norms = []
    grads = []
    for b in range(50):
        expert = simulate_dataset(Linear(0.0, theta), 4.0, 32, RngStream(3, (b,)))
        samples = [rollout(params, 4.0, RngStream(4, (b, m))) for m in range(32)]
        g = policy_gradient(expert, samples, params, kern)[0]
        grads.append(g)
        norms.append(np.linalg.norm(g))
    grads = np.array(grads)
    se = grads.std(axis=0, ddof=1) / math.sqrt(50)
    assert np.all(np.abs(grads.mean(axis=0)) <= 3 * se + 1e-12)


# ------------------------------------------------------------ training loop

def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(M=1)
    with pytest.raises(ValidationError):
        TrainConfig(L=0)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValidationError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValidationError):
        TrainConfig(kernel="wide")
    assert TrainConfig(kernel="0.5").kernel == 0.5
    assert TrainConfig.from_dict(TrainConfig(**SMALL).to_dict()) == TrainConfig(**SMALL)


def test_training_deterministic(expert):
    cfg = TrainConfig(**SMALL)
    p1, t1 = train(expert, cfg)
    p2, t2 = train(expert, cfg)
    assert p1 == p2
    assert trace_key(t1) == trace_key(t2)
    assert [r.iteration for r in t1] == list(range(6))
    assert all(np.isfinite(trace_key(t1)).ravel())


def test_zero_learning_rate_keeps_params(expert):
    cfg = TrainConfig(**{**SMALL, "learning_rate": 0.0})
    p, tr = train(expert, cfg)
    assert p == initial_params(expert, cfg)
    assert len(tr) == 6 and all(r.mmd2 > 0 for r in tr)


def test_zero_iterations_returns_initial(expert, tmp_path):
    cfg = TrainConfig(**{**SMALL, "iterations": 0})
    p, tr = train(expert, cfg, checkpoint_dir=tmp_path)
    assert p == initial_params(expert, cfg) and tr == []
    state, _ = load_checkpoint(tmp_path / "checkpoint_000000.json")
    assert state.params == p


@pytest.mark.parametrize("optimizer", ["adam", "sgd"])
@pytest.mark.parametrize("kernel", ["median-data", "median-batch", 1.5])
def test_resume_is_bit_identical(expert, tmp_path, optimizer, kernel):
    cfg = TrainConfig(**{**SMALL, "checkpoint_every": 3, "optimizer": optimizer, "kernel": kernel})
    p_full, t_full = train(expert, cfg, checkpoint_dir=tmp_path)
    state, loaded_cfg = load_checkpoint(tmp_path / "checkpoint_000003.json")
    assert loaded_cfg == cfg
    p_res, t_res = train(expert, cfg, resume=state)
    assert p_res == p_full
    assert trace_key(t_res) == trace_key(t_full)


def test_step_updates_optimizer_state(expert):
    cfg = TrainConfig(**SMALL)
    p0 = initial_params(expert, cfg)
    opt = OptimizerState.zeros(p0.n_params)
    p1, row = step(p0, expert, cfg, opt, 0, KernelConfig(1.0))
    assert opt.t == 1 and np.any(opt.m != 0)
    assert p1 != p0 and row.iteration == 0 and row.grad_norm > 0


def test_init_bias_options(expert):
    rate = expert.total_events / (len(expert) * expert.window_end)
    p = initial_params(expert, TrainConfig(**SMALL, init_bias="data"))
    assert math.log1p(math.exp(p.c)) == pytest.approx(rate, rel=1e-12)
    p = initial_params(expert, TrainConfig(**SMALL, init_bias=0.25))
    assert p.c == 0.25
    with pytest.raises(ValidationError):
        TrainConfig(init_bias="big")


def test_trace_csv(expert, tmp_path):
    _, tr = train(expert, TrainConfig(**SMALL))
    write_trace_csv(tr, tmp_path / "a.csv", timing=False)
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "iter,mmd2,mean_return,grad_norm,wall_ms"
    assert len(lines) == 7 and all(line.endswith(",0") for line in lines[1:])


def test_mmd_decreases_on_short_run():
    expert = simulate_dataset(preset("HP"), 10.0, 50, RngStream(2))
    cfg = TrainConfig(L=16, M=16, d=8, iterations=150, learning_rate=2e-2, seed=1)
    _, tr = train(expert, cfg)
    first = np.mean([r.mmd2 for r in tr[:10]])
    last = np.mean([r.mmd2 for r in tr[-10:]])
    assert last < 0.5 * first
    assert stats.spearmanr(np.arange(len(tr)), [r.mmd2 for r in tr]).statistic < 0
