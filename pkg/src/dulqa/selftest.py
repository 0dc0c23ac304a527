"""Finite-difference and brute-force self-checks behind ``dulqa verify``."""

from __future__ import annotations

import itertools

import numpy as np

from dulqa import lqa, rng
from dulqa.ising import brute_force_ground_state, generate_sk, ising_energy
from dulqa.unfold import Batch, TrainableSchedule, backward, forward, init_w0, loss


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def central_diff(fn, x, h=1e-6):
    """Central differences of a scalar or vector ``fn`` along every coordinate of ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h))
    return np.stack(cols, axis=-1) if np.ndim(cols[0]) else np.array(cols)


def check_cost_derivatives(seed: int, n: int = 20, trials: int = 10) -> dict:
    """Worst relative errors of gradient, HVP and gamma derivatives against FD."""
    gen = rng.stream(seed, "selftest_cost")
    worst = {"gradient": 0.0, "hvp": 0.0, "grad_dgamma": 0.0, "cost_dgamma": 0.0}
    for k in range(trials):
        inst = generate_sk(n, rng.derive_seed(seed, "selftest_instance", k))
        w = gen.uniform(-1.0, 1.0, n)
        v = gen.standard_normal(n)
        s, gamma = gen.uniform(0.0, 1.0), gen.uniform(0.1, 5.0)
        fd = central_diff(lambda x: lqa.cost(x, inst, s, gamma), w)
        worst["gradient"] = max(worst["gradient"], rel_err(lqa.cost_gradient(w, inst, s, gamma), fd))
        eps = 1e-6
        fd_hvp = (lqa.cost_gradient(w + eps * v, inst, s, gamma) - lqa.cost_gradient(w - eps * v, inst, s, gamma)) / (2 * eps)
        worst["hvp"] = max(worst["hvp"], rel_err(lqa.cost_hvp(w, inst, s, gamma, v), fd_hvp))
        fd_g = (lqa.cost_gradient(w, inst, s, gamma + eps) - lqa.cost_gradient(w, inst, s, gamma - eps)) / (2 * eps)
        worst["grad_dgamma"] = max(worst["grad_dgamma"], rel_err(lqa.cost_grad_dgamma(w, inst, s, gamma), fd_g))
        fd_c = (lqa.cost(w, inst, s, gamma + eps) - lqa.cost(w, inst, s, gamma - eps)) / (2 * eps)
        worst["cost_dgamma"] = max(worst["cost_dgamma"], rel_err(lqa.cost_dgamma(w, inst, s, gamma), fd_c))
    return worst


def check_adjoint(seed: int, n: int = 8, depth: int = 4, batch_size: int = 3) -> float:
    """Worst relative error of ``backward`` against FD of the rolled-out loss."""
    gen = rng.stream(seed, "selftest_adjoint")
    items = [(generate_sk(n, rng.derive_seed(seed, "selftest_adjoint_instance", d)),
              init_w0(n, 0.5, rng.stream(seed, "selftest_adjoint_w0", d))) for d in range(batch_size)]
    batch = Batch(items)
    eta = gen.uniform(0.02, 0.2, depth + 1)
    gamma = gen.uniform(0.5, 2.0, depth + 1)
    theta = TrainableSchedule.initial(depth, 0.1, 1.0)
    theta.eta[:], theta.gamma[:] = eta, gamma
    ge, gg = backward(batch, forward(batch, theta, depth))
    fd_eta = central_diff(lambda x: loss(batch, lqa.AnnealSchedule(x, gamma), depth), eta)
    fd_gamma = central_diff(lambda x: loss(batch, lqa.AnnealSchedule(eta, x), depth), gamma)
    return max(rel_err(ge, fd_eta), rel_err(gg, fd_gamma))


def check_brute_force(seed: int, n: int = 8) -> bool:
    """Chunked enumeration agrees with a plain loop over every configuration."""
    inst = generate_sk(n, rng.derive_seed(seed, "selftest_brute"))
    gt = brute_force_ground_state(inst)
    best = min(ising_energy(inst, np.array(c)) for c in itertools.product((1, -1), repeat=n))
    return abs(gt.energy - best) <= 1e-9 * max(1.0, abs(best))


def run_selftest(seed: int = 0, report=print) -> int:
    """Run every check; returns the number of failures."""
    failures = 0
    cost = check_cost_derivatives(seed)
    limits = {"gradient": 1e-6, "hvp": 1e-5, "grad_dgamma": 1e-6, "cost_dgamma": 1e-6}
    for name, err in cost.items():
        ok = err < limits[name]
        failures += not ok
        report(f"{'PASS' if ok else 'FAIL'} {name}: rel err {err:.2e} (limit {limits[name]:.0e})")
    err = check_adjoint(seed)
    ok = err < 1e-5
    failures += not ok
    report(f"{'PASS' if ok else 'FAIL'} adjoint: rel err {err:.2e} (limit 1e-05)")
    ok = check_brute_force(seed)
    failures += not ok
    report(f"{'PASS' if ok else 'FAIL'} brute force ground state")
    return failures
