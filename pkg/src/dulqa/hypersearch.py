"""Random-search tuning of the baseline LQA step sizes."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dulqa import lqa, rng
from dulqa.errors import ContractError
from dulqa.ising import IsingInstance
from dulqa.parallel import map_ordered, worker_pool
from dulqa.unfold import init_w0

log = logging.getLogger(__name__)

GD_ETA_RANGE = (1e-3, 10.0)
ADAM_LR_RANGE = (1e-4, 1.0)


@dataclass(frozen=True)
class Param:
    name: str
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ContractError(f"{self.name}: need low < high, got [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise ContractError(f"{self.name}: log-uniform needs low > 0, got {self.low}")

    def sample(self, gen: np.random.Generator) -> float:
        u = gen.random()
        if self.log:
            return float(math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low))))
        return float(self.low + u * (self.high - self.low))


@dataclass(frozen=True)
class SearchSpace:
    params: tuple

    def __init__(self, *params: Param):
        if not params:
            raise ContractError("search space needs at least one parameter")
        object.__setattr__(self, "params", tuple(params))


@dataclass
class SearchResult:
    best_params: dict
    best_objective: float
    trials: list = field(default_factory=list)

    def write_csv(self, path, header_comments=()) -> None:
        names = [p for p in self.trials[0][0]] if self.trials else []
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            for c in header_comments:
                fh.write(f"# {c}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", *names, "objective"])
            for k, (params, obj) in enumerate(self.trials):
                w.writerow([k, *(f"{n}={params[n]:.17g}" for n in names), f"{obj:.17g}"])


def random_search(objective, space: SearchSpace, budget: int, seed: int, workers: int = 1) -> SearchResult:
    """Evaluate ``budget`` i.i.d. points from ``space`` and keep the best.

    All points are drawn up front from one seeded stream; ties go to the
    earliest trial. Non-finite objective values are recorded as ``+inf``.
    """
    if budget < 1:
        raise ContractError(f"budget must be >= 1, got {budget}")
    gen = rng.stream(seed, "random_search")
    points = [{p.name: p.sample(gen) for p in space.params} for _ in range(budget)]

    def evaluate(params):
        value = float(objective(**params))
        return value if math.isfinite(value) else math.inf

    with worker_pool(workers) as pool:
        values = map_ordered(evaluate, points, pool)
    trials = list(zip(points, values))
    best = min(range(budget), key=lambda k: (values[k], k))
    return SearchResult(dict(points[best]), values[best], trials)


def _as_list(instances) -> list:
    if isinstance(instances, IsingInstance):
        return [instances]
    out = list(instances)
    if not out:
        raise ContractError("need at least one instance to tune on")
    return out


def tuning_starts(n: int, restarts: int, seed: int, instance_index: int, f: float = 0.5) -> np.ndarray:
    """Starting points shared by every trial (common random numbers)."""
    return np.stack([init_w0(n, f, rng.stream(seed, "tune_w0", instance_index, r)) for r in range(restarts)])


def final_energy(inst: IsingInstance, W0: np.ndarray, solver: str, tau: int, step: float, gamma: float = 1.0) -> float:
    """Mean final ``E_ising / n`` over the rows of ``W0``; diverged rows count as ``+inf``."""
    if solver == "gd":
        rec = lqa.rollout(inst.couplings, inst.fields, W0, np.full(tau + 1, step), np.full(tau + 1, gamma))
    elif solver == "adam":
        rec = lqa.adam_rollout(inst.couplings, inst.fields, W0, tau, step, gamma)
    else:
        raise ContractError(f"unknown baseline solver {solver!r}")
    if np.any(rec.diverged_at >= 0):
        return math.inf
    return float(np.mean(rec.e_ising_per_spin[:, -1]))


def _tune(solver, param: Param, instances, tau, restarts, budget, seed, f, workers):
    if restarts < 1:
        raise ContractError(f"restarts must be >= 1, got {restarts}")
    insts = _as_list(instances)
    starts = [tuning_starts(inst.n, restarts, seed, k, f) for k, inst in enumerate(insts)]

    def objective(**params):
        step = params[param.name]
        return float(np.mean([final_energy(i, W0, solver, tau, step) for i, W0 in zip(insts, starts)]))

    result = random_search(objective, SearchSpace(param), budget, seed, workers)
    for k, (params, value) in enumerate(result.trials):
        log.debug("%s trial %d: %s=%.6g objective=%.6f", solver, k, param.name, params[param.name], value)
    return result


def tune_lqa_gd(instances, tau: int, restarts: int, budget: int, seed: int, *, f: float = 0.5,
                bounds=GD_ETA_RANGE, workers: int = 1) -> SearchResult:
    """Constant GD step size (``gamma = 1``) minimizing mean final ``E_ising / n``."""
    return _tune("gd", Param("eta", *bounds, log=True), instances, tau, restarts, budget, seed, f, workers)


def tune_lqa_adam(instances, tau: int, restarts: int, budget: int, seed: int, *, f: float = 0.5,
                  bounds=ADAM_LR_RANGE, workers: int = 1) -> SearchResult:
    """Adam step size (``gamma = 1``) minimizing mean final ``E_ising / n``."""
    return _tune("adam", Param("lr", *bounds, log=True), instances, tau, restarts, budget, seed, f, workers)
