from pathlib import Path

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dulqa import io, lqa, rng
from dulqa.errors import ContractError, DivergenceError, DomainError
from dulqa.ising import IsingInstance, brute_force_ground_state, generate_sk, ising_energy
from dulqa.parallel import single_threaded_blas
from dulqa.selftest import central_diff, rel_err
from dulqa.unfold import init_w0

from conftest import two_spin

DATA = Path(__file__).parent / "data"
unit = st.floats(0.0, 1.0)
gammas = st.floats(0.1, 5.0)
seeds = st.integers(0, 2**32 - 1)


def mp_cost(J, h, w, s, gamma):
    """High-precision cost evaluated straight from its definition (sum over i != j).

    Callers set the working precision; resetting it here would break ``mp.diff``.
    """
    phi = [mp.pi / 2 * mp.tanh(mp.mpf(v)) for v in w]
    z = [mp.sin(p) for p in phi]
    x = [mp.cos(p) for p in phi]
    n = len(w)
    quad = mp.fsum(mp.mpf(J[i][j]) * z[i] * z[j] for i in range(n) for j in range(n) if i != j)
    field = mp.fsum(mp.mpf(h[i]) * z[i] for i in range(n))
    return s * gamma * (quad + field) - (1 - mp.mpf(s)) * mp.fsum(x)


def random_case(seed, n=20):
    g = np.random.default_rng(seed)
    inst = IsingInstance(generate_sk(n, seed).couplings, 0.3 * g.standard_normal(n))
    return inst, g.uniform(-1.5, 1.5, n), g


# ---------------------------------------------------------------- state and schedule


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-50, 50)))
def test_relaxed_state_invariants(w):
    st_ = lqa.RelaxedState(w)
    # sin is flat near pi/2, so z rounds to exactly 1 once |w| is around 8
    assert np.all(np.abs(st_.z) <= 1)
    assert np.all(np.abs(st_.z[np.abs(w) <= 5]) < 1)
    assert np.all((st_.x >= 0) & (st_.x <= 1))
    np.testing.assert_allclose(st_.z**2 + st_.x**2, 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        st_.z[0] = 0.0


def test_schedule_validation():
    assert lqa.AnnealSchedule.constant(3, 0.1).tau == 3
    for eta, gamma in [([0.1, 0.0], [1, 1]), ([0.1], [1, 1]), ([np.inf], [1]), ([0.1], [-1])]:
        with pytest.raises(ContractError):
            lqa.AnnealSchedule(eta, gamma)


@given(st.integers(0, 50))
def test_anneal_endpoints(tau):
    s = lqa.anneal_fractions(tau)
    assert s[0] == 0.0 and s.shape == (tau + 1,)
    assert np.all(np.diff(s) >= 0)
    if tau >= 1:
        assert s[-1] == 1.0


# ---------------------------------------------------------------- cost and derivatives


def test_cost_at_origin(sk20):
    for s in (0.0, 0.3, 1.0):
        assert lqa.cost(np.zeros(20), sk20, s, 2.5) == pytest.approx(-(1 - s) * 20, abs=1e-12)


def test_cost_two_spin_high_precision():
    w, s, gamma = [0.5, -0.5], 0.5, 2.0
    with mp.workdps(40):
        ref = mp_cost([[0, 1], [1, 0]], [0, 0], w, s, gamma)
    assert lqa.cost(np.array(w), two_spin(1.0), s, gamma) == pytest.approx(float(ref), rel=1e-14)
    assert float(ref) == pytest.approx(-1.6292, abs=1e-4)


@given(seeds, unit, gammas)
def test_cost_matches_high_precision(seed, s, gamma):
    inst, w, _ = random_case(seed, n=6)
    with mp.workdps(40):
        ref = mp_cost(inst.couplings.tolist(), inst.fields.tolist(), w.tolist(), s, gamma)
    assert lqa.cost(w, inst, s, gamma) == pytest.approx(float(ref), rel=1e-12, abs=1e-12)


def test_cost_saturated(sk20):
    inst = IsingInstance(sk20.couplings, np.linspace(-1, 1, 20))
    expected = inst.couplings.sum() + inst.fields.sum()
    assert lqa.cost(np.full(20, 10.0), inst, 1.0, 1.0) == pytest.approx(expected, abs=1e-6)


def test_s_out_of_range(sk20):
    with pytest.raises(DomainError):
        lqa.cost(np.zeros(20), sk20, 1.2, 1.0)
    with pytest.raises(DomainError):
        lqa.cost_gradient(np.zeros(20), sk20, -0.1, 1.0)


def test_gradient_special_points(sk20):
    np.testing.assert_array_equal(lqa.cost_gradient(np.zeros(20), sk20, 0.0, 1.0), 0.0)
    inst = IsingInstance(sk20.couplings, np.arange(20) / 10.0)
    np.testing.assert_allclose(lqa.cost_gradient(np.zeros(20), inst, 1.0, 1.7), 1.7 * inst.fields * np.pi / 2, rtol=1e-15)


@given(seeds, unit, gammas)
def test_gradient_matches_fd(seed, s, gamma):
    inst, w, _ = random_case(seed)
    fd = central_diff(lambda x: lqa.cost(x, inst, s, gamma), w)
    assert rel_err(lqa.cost_gradient(w, inst, s, gamma), fd) < 1e-6


def test_hvp_special_points(sk20):
    v = np.arange(20, dtype=float) - 7
    np.testing.assert_array_equal(lqa.cost_hvp(np.ones(20), sk20, 0.4, 1.0, np.zeros(20)), 0.0)
    np.testing.assert_allclose(lqa.cost_hvp(np.zeros(20), sk20, 0.0, 1.0, v), (np.pi / 2) ** 2 * v, rtol=1e-14)


@given(seeds, unit, gammas)
def test_hvp_matches_fd(seed, s, gamma):
    inst, w, g = random_case(seed, n=15)
    v = g.standard_normal(15)
    eps = 1e-6
    fd = (lqa.cost_gradient(w + eps * v, inst, s, gamma) - lqa.cost_gradient(w - eps * v, inst, s, gamma)) / (2 * eps)
    assert rel_err(lqa.cost_hvp(w, inst, s, gamma, v), fd) < 1e-5


@given(seeds, unit, gammas)
def test_hvp_symmetric(seed, s, gamma):
    inst, w, g = random_case(seed)
    u, v = g.standard_normal(20), g.standard_normal(20)
    a = v @ lqa.cost_hvp(w, inst, s, gamma, u)
    b = u @ lqa.cost_hvp(w, inst, s, gamma, v)
    assert abs(a - b) <= 1e-9 * max(abs(a), abs(b), 1e-12)


# below s ~ 1e-6 the gamma term drops under one ulp of the gradient and no difference can see it
resolvable_s = st.one_of(st.just(0.0), st.floats(1e-6, 1.0))


@given(seeds, resolvable_s, gammas)
def test_gamma_derivatives_match_fd(seed, s, gamma):
    inst, w, _ = random_case(seed, n=15)
    # C is linear in gamma, so a wide central step is exact and keeps tiny-s cases above rounding noise
    eps = 0.5 * gamma
    fd_g = (lqa.cost_gradient(w, inst, s, gamma + eps) - lqa.cost_gradient(w, inst, s, gamma - eps)) / (2 * eps)
    fd_c = (lqa.cost(w, inst, s, gamma + eps) - lqa.cost(w, inst, s, gamma - eps)) / (2 * eps)
    assert rel_err(lqa.cost_grad_dgamma(w, inst, s, gamma), fd_g) < 1e-6
    assert abs(lqa.cost_dgamma(w, inst, s, gamma) - fd_c) < 1e-6 * max(abs(fd_c), 1e-12)


def test_gamma_derivative_special_points(sk20):
    w = np.linspace(-1, 1, 20)
    np.testing.assert_array_equal(lqa.cost_grad_dgamma(w, sk20, 0.0, 1.0), 0.0)
    np.testing.assert_array_equal(lqa.cost_grad_dgamma(w, sk20, 0.6, 0.5), lqa.cost_grad_dgamma(w, sk20, 0.6, 2.0))
    assert lqa.cost_dgamma(np.zeros(20), sk20, 0.7, 1.0) == 0.0
    z = lqa.RelaxedState(w).z
    assert lqa.cost_dgamma(w, sk20, 1.0, 3.0) == pytest.approx(z @ sk20.couplings @ z, rel=1e-13)


@given(seeds, unit, gammas)
def test_small_step_descends(seed, s, gamma):
    inst, w, _ = random_case(seed)
    g = lqa.cost_gradient(w, inst, s, gamma)
    assert lqa.cost(w - 1e-4 * g, inst, s, gamma) <= lqa.cost(w, inst, s, gamma) + 1e-10


# ---------------------------------------------------------------- readout


def test_sign_readout():
    np.testing.assert_array_equal(lqa.sign_readout([0.3, -0.2, 0.0]), [1, -1, 1])


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-5, 5).filter(lambda v: v != 0)))
def test_sign_readout_odd(w):
    np.testing.assert_array_equal(lqa.sign_readout(-w), -lqa.sign_readout(w))


def test_saturated_energy_matches_cost(sk20):
    g = np.random.default_rng(3)
    w = 10.0 * g.choice([-1.0, 1.0], 20)
    e = ising_energy(sk20, lqa.sign_readout(w))
    assert abs(e - lqa.cost(w, sk20, 1.0, 1.0)) <= 1e-4 * 20


@given(st.integers(2, 14), seeds, st.floats(0.01, 0.5), st.integers(1, 10))
def test_readout_above_ground_state(n, seed, eta, tau):
    inst = generate_sk(n, seed)
    w0 = init_w0(n, 0.5, rng.stream(seed, "t"))
    rec = lqa.rollout(inst.couplings, inst.fields, w0[None], np.full(tau + 1, eta), np.ones(tau + 1))
    gs = brute_force_ground_state(inst).energy / n
    assert np.all(rec.e_ising_per_spin >= gs - 1e-12)


# ---------------------------------------------------------------- rollouts


def test_origin_is_stationary(sk20):
    rec, w = lqa.lqa_run(sk20, np.zeros(20), lqa.AnnealSchedule.constant(10, 0.3, 1.3), record_snapshots=True)
    assert np.all(rec.snapshots == 0) and np.all(w == 0)
    np.testing.assert_allclose(rec.e_ising_per_spin, ising_energy(sk20, np.ones(20)) / 20, rtol=1e-13)


def test_tau_zero_single_step(sk20):
    w0 = np.linspace(-0.4, 0.4, 20)
    rec, w = lqa.lqa_run(sk20, w0, lqa.AnnealSchedule([0.2], [1.5]))
    np.testing.assert_array_equal(w, w0 - 0.2 * lqa.cost_gradient(w0, sk20, 0.0, 1.5))
    np.testing.assert_array_equal(rec.s, [0.0, 1.0])


def test_record_layout(sk20):
    w0 = np.linspace(-0.4, 0.4, 20)
    sched = lqa.AnnealSchedule(np.full(5, 0.1), np.linspace(1, 2, 5))
    rec, w = lqa.lqa_run(sk20, w0, sched, record_snapshots=True)
    assert rec.e_w_per_spin.shape == (6,)
    assert rec.e_w_per_spin[2] == pytest.approx(lqa.cost(rec.snapshots[2], sk20, 0.5, 1.5) / 20, rel=1e-13)
    assert rec.e_w_per_spin[-1] == pytest.approx(lqa.cost(w, sk20, 1.0, 2.0) / 20, rel=1e-13)
    # manual unroll
    x = w0.copy()
    for t, s in enumerate(lqa.anneal_fractions(4)):
        x = x - sched.eta[t] * lqa.cost_gradient(x, sk20, s, sched.gamma[t])
    np.testing.assert_allclose(w, x, rtol=1e-13)


def test_divergence_raises(sk20):
    with pytest.raises(DivergenceError) as exc:
        lqa.lqa_run(sk20, np.full(20, 0.3), lqa.AnnealSchedule.constant(5, 1e9))
    assert exc.value.step == 0


def test_batched_rows_isolated(sk20):
    # a diverging row never disturbs its neighbours
    W0 = np.stack([np.full(20, 0.3), np.linspace(-0.3, 0.3, 20)])
    eta = np.array([1e-3, 1e-3])
    a = lqa.rollout(sk20.couplings, sk20.fields, W0, eta, np.ones(2))
    b = lqa.rollout(sk20.couplings, sk20.fields, W0[1:], eta, np.ones(2))
    np.testing.assert_array_equal(a.final_w[1], b.final_w[0])


def test_golden_rollout_bit_identical():
    inst = generate_sk(50, 20240601)
    w0 = init_w0(50, 0.5, rng.stream(20240601, "golden_w0"))
    with single_threaded_blas():
        rec, w = lqa.lqa_run(inst, w0, lqa.AnnealSchedule.constant(20, 0.1, 1.0))
    _, rows = io.read_table(DATA / "golden_lqa_n50_tau20.csv")
    for t, row in enumerate(rows):
        assert [io.fmt(v) for v in (rec.s[t], rec.e_w_per_spin[t], rec.e_ising_per_spin[t])] == row[1:]
    np.testing.assert_array_equal(w, np.loadtxt(DATA / "golden_lqa_n50_tau20_final_w.txt"))


# ---------------------------------------------------------------- Adam


def test_adam_origin_fixed_point(sk20):
    rec, w = lqa.lqa_adam_run(sk20, np.zeros(20), 6, 0.1)
    assert np.all(w == 0)


def test_adam_hand_replay_two_spin():
    inst = IsingInstance(np.array([[0.0, 0.7], [0.7, 0.0]]), np.array([0.2, -0.1]))
    w0, lr, gamma = np.array([0.3, -0.1]), 0.05, 1.3
    with mp.workdps(40):
        w = [mp.mpf(v) for v in w0]
        m = [mp.mpf(0)] * 2
        v = [mp.mpf(0)] * 2
        b1, b2, eps = mp.mpf("0.9"), mp.mpf("0.999"), mp.mpf("1e-8")
        for t, s in enumerate((0, 1)):
            # gradient by high-precision differentiation of the cost definition
            g = [mp.diff(lambda u, i=i: mp_cost(inst.couplings.tolist(), inst.fields.tolist(),
                                                [u if k == i else w[k] for k in range(2)], s, gamma), w[i])
                 for i in range(2)]
            m = [b1 * m[i] + (1 - b1) * g[i] for i in range(2)]
            v = [b2 * v[i] + (1 - b2) * g[i] ** 2 for i in range(2)]
            w = [w[i] - lr * (m[i] / (1 - b1 ** (t + 1))) / (mp.sqrt(v[i] / (1 - b2 ** (t + 1))) + eps) for i in range(2)]
    _, got = lqa.lqa_adam_run(inst, w0, 1, lr, gamma)
    np.testing.assert_allclose(got, [float(u) for u in w], rtol=1e-12)


def test_adam_deterministic(sk20):
    w0 = np.linspace(-0.4, 0.4, 20)
    a, _ = lqa.lqa_adam_run(sk20, w0, 10, 0.05)
    b, _ = lqa.lqa_adam_run(sk20, w0, 10, 0.05)
    np.testing.assert_array_equal(a.e_w_per_spin, b.e_w_per_spin)
    with pytest.raises(ContractError):
        lqa.lqa_adam_run(sk20, w0, 0, 0.05)
