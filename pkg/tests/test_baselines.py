import numpy as np
import pytest

from pgqaoa.baselines import (ALGORITHMS, BudgetExhausted, ScalarObjective, cma_es, cma_population_size,
                              compare_suite, nelder_mead, powell, pso, run_baseline)
from pgqaoa.models import build_multi_qubit_I, build_single_qubit
from pgqaoa.noise import RewardChannel
from pgqaoa.pgtrain import TrainConfig
from pgqaoa.policy import initial_diagonal_policy

C = np.array([1.3, 0.4, 2.2, 0.9, 1.7, 0.6])
C4 = C[:4]
SPHERE_CENTRE = np.linspace(0.8, 3.1, 10)


def neg_quadratic(x, scale=(1.0, 3.0, 0.5, 2.0, 1.0, 4.0)):
    return -float(np.sum(np.asarray(scale) * (x - C) ** 2))


def bowl(x):
    return 1.0 - float(np.sum((x - C4) ** 2)) / 4


def sphere(x):
    return -float(np.sum((x - SPHERE_CENTRE) ** 2))


def test_budget_is_enforced():
    obj = ScalarObjective(lambda x: 0.0, budget=3)
    for _ in range(3):
        obj(np.zeros(2))
    with pytest.raises(BudgetExhausted):
        obj(np.zeros(2))
    with pytest.raises(ValueError):
        ScalarObjective(lambda x: 0.0, budget=0)


@pytest.mark.parametrize("method", [nelder_mead, powell])
def test_local_methods_find_quadratic_peak(method):
    res = method(ScalarObjective(bowl, budget=10_000), np.ones(4))
    assert np.abs(res.best_protocol - C4).max() <= 1e-3
    assert res.evaluations == 10_000
    again = method(ScalarObjective(bowl, budget=10_000), np.ones(4))
    assert np.array_equal(res.trace, again.trace)


def test_powell_separable_single_sweep():
    obj = ScalarObjective(neg_quadratic)
    res = powell(obj, np.ones(6), restart=False)
    assert np.abs(res.best_protocol - C).max() <= 1e-6
    # the first sweep already lands on the optimum, so the second sweep improves by < ftol
    assert res.restarts == 0


def test_cma_population_size():
    assert cma_population_size(30) == 14
    assert cma_population_size(2) == 6


def test_cma_es_sphere():
    res = cma_es(ScalarObjective(sphere, budget=5000), np.ones(10), np.random.default_rng(0))
    assert -res.best_reward <= 1e-6
    assert res.evaluations == 5000


@pytest.mark.parametrize("method", [cma_es, pso])
def test_population_methods_on_separable_quadratic(method):
    res = method(ScalarObjective(neg_quadratic, budget=10_000), np.ones(6), np.random.default_rng(5))
    assert np.abs(res.best_protocol - C).max() <= 1e-3


def test_pso_sphere_stays_in_box():
    seen = []

    def f(x):
        seen.append(x)
        return sphere(x)

    res = pso(ScalarObjective(f, budget=10_000), np.ones(10), np.random.default_rng(1))
    assert -res.best_reward <= 1e-4
    seen = np.array(seen)
    assert seen.min() >= 0.0 and seen.max() <= 4.0


def test_cma_candidates_clipped_to_box():
    seen = []

    def f(x):
        seen.append(x)
        return -float(np.sum((x + 1) ** 2))

    cma_es(ScalarObjective(f, budget=600), np.full(4, 0.5), np.random.default_rng(2), sigma0=1.0)
    assert np.min(seen) >= 0.0


@pytest.mark.parametrize("name", ALGORITHMS[1:])
def test_baselines_on_model_are_deterministic(name):
    model = build_single_qubit()
    runs = [run_baseline(name, model, RewardChannel("quantum"), np.full(4, 0.5), 150, 16, np.random.default_rng(3))
            for _ in range(2)]
    a, b = runs
    assert a.evaluations == 150 and b.evaluations == 150
    assert np.array_equal(a.trace, b.trace)
    assert np.array_equal(a.best_protocol, b.best_protocol)
    curve = a.best_so_far()
    assert np.all(np.diff(curve) >= 0) and curve[-1] == a.best_reward
    assert 0.0 <= a.exact_fidelity <= 1.0


def test_unknown_baseline():
    with pytest.raises(ValueError):
        run_baseline("simulated_annealing", build_single_qubit(), RewardChannel(), np.zeros(2), 10, 1,
                     np.random.default_rng(0))


def test_compare_suite_rows():
    model = build_multi_qubit_I(3)

    def make_policy(rng):
        return initial_diagonal_policy(3, rng)

    def rng_for_seed(seed, label):
        return np.random.default_rng([seed, len(label)])

    rows = compare_suite(model, RewardChannel(), ALGORITHMS, 20, [0, 1], 8, make_policy,
                         TrainConfig(batch_size=8, iterations=20), rng_for_seed)
    assert [(r.algorithm, r.seed) for r in rows] == [(a, s) for s in (0, 1) for a in ALGORITHMS]
    assert all(r.evaluations == 20 for r in rows)
    assert all(0.0 <= r.exact_fidelity <= 1.0 for r in rows)
    assert all(r.log_infidelity <= 0 for r in rows)
