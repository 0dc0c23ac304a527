import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dulqa import hypersearch as hs
from dulqa.errors import ContractError
from dulqa.ising import generate_sk


def test_budget_one_returns_the_sample():
    space = hs.SearchSpace(hs.Param("x", 0.0, 10.0))
    res = hs.random_search(lambda x: 1e9, space, 1, seed=3)
    assert res.best_params == res.trials[0][0]
    assert res.best_objective == 1e9


def test_quadratic_search():
    res = hs.random_search(lambda x: (x - 2) ** 2, hs.SearchSpace(hs.Param("x", 0.0, 10.0)), 200, seed=11)
    assert abs(res.best_params["x"] - 2) < 0.2


@settings(max_examples=25)
@given(st.integers(0, 2**63 - 1), st.integers(1, 30))
def test_best_is_minimum_and_replayable(seed, budget):
    space = hs.SearchSpace(hs.Param("a", 1e-3, 1.0, log=True), hs.Param("b", -1.0, 1.0))
    fn = lambda a, b: math.sin(7 * a) + b**2  # noqa: E731
    r1 = hs.random_search(fn, space, budget, seed)
    r2 = hs.random_search(fn, space, budget, seed)
    assert r1.trials == r2.trials and r1.best_params == r2.best_params
    assert all(r1.best_objective <= v for _, v in r1.trials)
    for p, _ in r1.trials:
        assert 1e-3 <= p["a"] <= 1.0 and -1.0 <= p["b"] <= 1.0


def test_nonfinite_objectives_lose_and_ties_go_early():
    space = hs.SearchSpace(hs.Param("x", 0.0, 1.0))
    res = hs.random_search(lambda x: float("nan") if x > 0.5 else 1.0, space, 20, seed=4)
    assert res.best_objective == 1.0
    first = next(k for k, (_, v) in enumerate(res.trials) if v == 1.0)
    assert res.best_params == res.trials[first][0]
    assert all(v in (1.0, math.inf) for _, v in res.trials)


def test_parallel_search_identical():
    space = hs.SearchSpace(hs.Param("x", 0.0, 1.0))
    a = hs.random_search(lambda x: (x - 0.3) ** 2, space, 40, 5)
    b = hs.random_search(lambda x: (x - 0.3) ** 2, space, 40, 5, workers=4)
    assert a.trials == b.trials


def test_param_validation():
    with pytest.raises(ContractError):
        hs.Param("x", 1.0, 1.0)
    with pytest.raises(ContractError):
        hs.Param("x", 0.0, 1.0, log=True)
    with pytest.raises(ContractError):
        hs.random_search(lambda x: x, hs.SearchSpace(hs.Param("x", 0, 1)), 0, 1)


def test_tune_gd_budget_one():
    inst = generate_sk(10, 1)
    res = hs.tune_lqa_gd(inst, 5, 2, 1, seed=9)
    assert res.best_params["eta"] == res.trials[0][0]["eta"]


def test_tune_gd_beats_the_edge():
    inst = generate_sk(50, 2)
    res = hs.tune_lqa_gd(inst, 20, 20, 50, seed=3)
    W0 = hs.tuning_starts(50, 20, 3, 0)
    assert res.best_objective <= hs.final_energy(inst, W0, "gd", 20, 10.0)


def test_tune_adam_runs_and_logs(tmp_path):
    res = hs.tune_lqa_adam([generate_sk(12, 1), generate_sk(12, 2)], 6, 3, 5, seed=1)
    assert hs.ADAM_LR_RANGE[0] <= res.best_params["lr"] <= hs.ADAM_LR_RANGE[1]
    path = tmp_path / "trials.csv"
    res.write_csv(path, ["hello"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# hello" and lines[1] == "trial,lr,objective" and len(lines) == 7


def test_diverging_step_is_infinite():
    inst = generate_sk(10, 3)
    W0 = hs.tuning_starts(10, 2, 1, 0)
    assert hs.final_energy(inst, W0, "gd", 5, 1e9) == math.inf
    assert np.isfinite(hs.final_energy(inst, W0, "gd", 5, 0.1))
