import numpy as np
import pytest

from pgqaoa import pgtrain
from pgqaoa.models import build_multi_qubit_I, build_multi_qubit_II, build_single_qubit
from pgqaoa.noise import RewardChannel
from pgqaoa.pgtrain import (SGD, Adam, DivergenceError, TrainConfig, pretrain_then_correlate, reinforce_gradient,
                            train, train_robust)
from pgqaoa.policy import CorrelatedGaussianPolicy, DiagonalGaussianPolicy, initial_diagonal_policy, policy_from_dict


def small_policy(p, seed=0, **kw):
    return initial_diagonal_policy(p, np.random.default_rng(seed), **kw)


def test_equal_rewards_give_zero_gradient():
    rng = np.random.default_rng(0)
    for pol in (small_policy(4), CorrelatedGaussianPolicy.from_diagonal(small_policy(4))):
        x, _ = pol.sample(64, rng)
        for g in reinforce_gradient(pol, x, np.full(64, 0.37)):
            assert np.all(g == 0)
    with pytest.raises(ValueError):
        reinforce_gradient(small_policy(1), np.zeros((0, 2)), [])


def test_reward_shift_invariance():
    rng = np.random.default_rng(1)
    pol = small_policy(4)
    x, _ = pol.sample(128, rng)
    # 0/1 rewards and dyadic shifts keep every subtraction exact
    r = rng.integers(0, 2, 128).astype(float)
    for c in (0.5, 3.0, -2.25):
        for a, b in zip(reinforce_gradient(pol, x, r), reinforce_gradient(pol, x, r + c)):
            assert np.array_equal(a, b)
    r = rng.uniform(0, 1, 128)
    for a, b in zip(reinforce_gradient(pol, x, r), reinforce_gradient(pol, x, r + 0.1)):
        assert np.allclose(a, b, rtol=0, atol=1e-12 * np.abs(a).max())


def test_baseline_reduces_variance():
    model = build_single_qubit()
    pol = small_policy(4, seed=2)
    rng = np.random.default_rng(3)
    with_b, without = [], []
    for _ in range(100):
        x, _ = pol.sample(128, rng)
        r = pgtrain.batch_fidelity(model, x)
        with_b.append(np.concatenate(reinforce_gradient(pol, x, r)))
        without.append(np.concatenate(pol.weighted_score(x, r)))
    assert np.var(with_b, axis=0).sum() <= np.var(without, axis=0).sum()


def test_toy_landscape_converges_to_peak():
    c = 0.7
    # the policy needs an even dimension; the second coordinate is an independent copy
    pol = DiagonalGaussianPolicy([0.0, 0.0], [0.3, 0.3])
    opt = Adam()
    rng = np.random.default_rng(4)
    cfg = TrainConfig(lr=2e-2)
    for t in range(2000):
        x, _ = pol.sample(64, rng)
        r = np.exp(-((x - c) ** 2).sum(axis=1))
        pol.set_parameters(opt.step(pol.parameters(), reinforce_gradient(pol, x, r), cfg.learning_rate(t)))
    assert np.abs(pol.mean - c).max() <= 0.05


def test_learning_rate_schedule():
    cfg = TrainConfig(lr=1e-2)
    assert cfg.learning_rate(0) == 1e-2 and cfg.learning_rate(49) == 1e-2
    assert cfg.learning_rate(50) == 1e-2 * 0.96
    assert cfg.learning_rate(120) == 1e-2 * 0.96**2
    for bad in ({"batch_size": 0}, {"iterations": 0}, {"lr": 0.0}, {"optimizer": "rmsprop"}, {"decay_every": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_optimizers_ascend():
    params = [np.array([1.0, -1.0])]
    grads = [np.array([0.5, -0.25])]
    assert np.allclose(SGD().step(params, grads, 0.1)[0], [1.05, -1.025])
    out = Adam().step(params, grads, 0.1)[0]
    # first Adam step moves each coordinate by lr in the gradient's sign
    assert np.allclose(out, [1.1, -1.1], atol=1e-6)


def test_training_record_contents():
    model = build_single_qubit()
    cfg = TrainConfig(batch_size=32, iterations=30, snapshot_iterations=(0, 29))
    rec = train(model, small_policy(4), cfg, np.random.default_rng(5))
    assert len(rec.rows) == 30
    assert list(rec.column("iteration")) == list(range(30))
    f = rec.column("exact_mean_fidelity")
    assert np.all((f >= 0) & (f <= 1))
    assert np.array_equal(rec.column("mean_reward"), f)
    assert set(rec.snapshots) == {0, 29}
    assert rec.snapshots[0]["total_duration"].shape == (32,)
    assert rec.column("lr")[0] == cfg.lr


def test_single_qubit_improves():
    model = build_single_qubit()
    cfg = TrainConfig(batch_size=64, iterations=300)
    rec = train(model, small_policy(4, seed=6, mean_loc=0.1, mean_scale=0.05), cfg, np.random.default_rng(6))
    assert rec.rows[0].exact_mean_fidelity < 0.6
    assert rec.tail_mean("exact_mean_fidelity", 20) > 0.9


def test_deterministic_across_threads(monkeypatch):
    model = build_multi_qubit_I(3)
    cfg = TrainConfig(batch_size=300, iterations=5, channel=RewardChannel("quantum"))
    runs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("PGQAOA_NUM_THREADS", threads)
        rec = train(model, small_policy(5, seed=7), cfg, np.random.default_rng(7))
        runs.append((rec.column("mean_reward"), rec.column("exact_mean_fidelity"), list(rec.column("policy_hash"))))
    assert np.array_equal(runs[0][0], runs[1][0]) and np.array_equal(runs[0][1], runs[1][1])
    assert runs[0][2] == runs[1][2]


def test_nan_reward_aborts_with_iteration(monkeypatch):
    model = build_single_qubit()
    calls = {"n": 0}
    real = pgtrain.batch_fidelity

    def flaky(m, x, deltas=None):
        calls["n"] += 1
        out = real(m, x, deltas)
        return out * np.nan if calls["n"] > 3 else out

    monkeypatch.setattr(pgtrain, "batch_fidelity", flaky)
    with pytest.raises(DivergenceError) as err:
        train(model, small_policy(2), TrainConfig(batch_size=8, iterations=10), np.random.default_rng(8))
    assert err.value.iteration == 3


def test_degenerate_robust_rewards_are_noise_free():
    model = build_multi_qubit_II(3, (-0.15, 0.15))
    cfg = TrainConfig(batch_size=32, iterations=20, channel=RewardChannel("robust", support=(0.0, 0.0)))
    rec = train_robust(model, small_policy(4, mean_loc=1.0), cfg, np.random.default_rng(9))
    assert np.array_equal(rec.column("mean_reward"), rec.column("exact_mean_fidelity"))
    assert all(r[2] == pytest.approx(r[1], abs=1e-14) for r in rec.robust_log)


def test_robust_log_worst_below_average():
    model = build_multi_qubit_II(3, (-0.15, 0.15))
    cfg = TrainConfig(batch_size=16, iterations=25, robust_eval_every=10,
                      channel=RewardChannel("robust", support=(-0.15, 0.15)))
    rec = train_robust(model, small_policy(4, mean_loc=1.0), cfg, np.random.default_rng(10))
    assert [r[0] for r in rec.robust_log] == [0, 10, 20, 25]
    assert all(w <= a for _, a, w in rec.robust_log)


def test_robust_validation():
    cfg = TrainConfig(iterations=1, channel=RewardChannel("robust", support=(-0.1, 0.1)))
    with pytest.raises(ValueError):
        train_robust(build_single_qubit(), small_policy(2), cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        train(build_single_qubit(), small_policy(2), cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        train_robust(build_multi_qubit_II(3, (-0.1, 0.1)), small_policy(2), TrainConfig(iterations=1),
                     np.random.default_rng(0))
    with pytest.raises(ValueError):
        train(build_single_qubit(), small_policy(2), TrainConfig(iterations=1, mask_offdiagonal=True),
              np.random.default_rng(0))


def test_pretrain_handoff():
    model = build_multi_qubit_I(3)
    m = 512
    pre = TrainConfig(batch_size=128, iterations=40, snapshot_iterations=(39,), channel=RewardChannel("gaussian", 0.1))
    fine = TrainConfig(batch_size=m, iterations=5, optimizer="sgd", lr=1e-5, snapshot_iterations=(40,),
                       channel=RewardChannel("gaussian", 0.1))
    rec = pretrain_then_correlate(model, small_policy(5, seed=11), pre, fine, np.random.default_rng(11))
    phases = rec.column("phase")
    assert list(phases) == [1] * 40 + [2] * 5
    assert rec.rows[40].iteration == 40
    pretrained = policy_from_dict(rec.metadata["handoff"]["pretrained_policy"])
    handoff = CorrelatedGaussianPolicy.from_diagonal(pretrained)
    assert np.array_equal(handoff.covariance, np.diag(pretrained.std**2))
    a, b = rec.snapshots[39]["reward"], rec.snapshots[40]["reward"]
    se = np.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) <= 3 * se
    with pytest.raises(TypeError):
        pretrain_then_correlate(model, CorrelatedGaussianPolicy.from_diagonal(small_policy(5)), pre, fine,
                                np.random.default_rng(0))


def test_masked_correlated_matches_diagonal_training():
    model = build_multi_qubit_I(3)
    start = small_policy(5, seed=12)
    cfg = dict(batch_size=64, iterations=30, optimizer="sgd", lr=1e-5, channel=RewardChannel("quantum"))
    diag = DiagonalGaussianPolicy(start.mean, start.std, std_param="direct")
    corr = CorrelatedGaussianPolicy.from_diagonal(start, lower=True)
    rd = train(model, diag, TrainConfig(**cfg), np.random.default_rng(13))
    rc = train(model, corr, TrainConfig(mask_offdiagonal=True, **cfg), np.random.default_rng(13))
    assert np.array_equal(rd.column("mean_reward"), rc.column("mean_reward"))
    assert np.allclose(corr.mean, diag.mean, rtol=0, atol=1e-10)
    assert np.allclose(np.diag(corr.transform), diag.std, rtol=0, atol=1e-10)
    assert np.all(corr.transform[~np.eye(10, dtype=bool)] == 0)
