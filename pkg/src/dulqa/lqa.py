"""Local quantum annealing: the relaxed cost, its derivatives and forward rollouts.

The relaxed spins ``w`` enter through ``phi = (pi/2) tanh(w)``, ``z = sin(phi)`` and
``x = cos(phi)``. The cost at annealing fraction ``s`` and coupling strength
``gamma`` is

    C(w) = s * gamma * (z^T J z + h^T z) - (1 - s) * sum(x)

Everything below has a batched kernel (leading axis = batch item) that the
public single-vector functions wrap. ``J`` may be shared ``(n, n)`` or stacked
``(B, n, n)``; ``h`` may be ``(n,)`` or ``(B, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from dulqa.errors import ContractError, DivergenceError, DomainError
from dulqa.ising import IsingInstance

HALF_PI = np.pi / 2
DIVERGENCE_LIMIT = 1e6
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class RelaxedState:
    """Relaxed spin vector with its angle, projection and transverse parts."""

    w: np.ndarray
    phi: np.ndarray = field(init=False, repr=False)
    z: np.ndarray = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, copy=True)
        if w.ndim != 1:
            raise ContractError(f"relaxed state must be 1-D, got shape {w.shape}")
        phi = HALF_PI * np.tanh(w)
        for name, arr in (("w", w), ("phi", phi), ("z", np.sin(phi)), ("x", np.cos(phi))):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class AnnealSchedule:
    """Per-step step sizes ``eta[t]`` and coupling strengths ``gamma[t]``, ``t = 0..tau``."""

    eta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=np.float64, copy=True).reshape(-1)
        gamma = np.array(self.gamma, dtype=np.float64, copy=True).reshape(-1)
        if eta.shape != gamma.shape or eta.shape[0] < 1:
            raise ContractError(
                f"eta and gamma must have equal length tau+1 >= 1, got {eta.shape[0]} and {gamma.shape[0]}"
            )
        if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(gamma))):
            raise ContractError("schedule entries must be finite")
        if np.any(eta <= 0) or np.any(gamma <= 0):
            raise ContractError("schedule entries must be strictly positive")
        eta.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def tau(self) -> int:
        return self.eta.shape[0] - 1

    @classmethod
    def constant(cls, tau: int, eta: float, gamma: float = 1.0) -> "AnnealSchedule":
        if tau < 0:
            raise ContractError(f"tau must be >= 0, got {tau}")
        return cls(np.full(tau + 1, float(eta)), np.full(tau + 1, float(gamma)))


@dataclass
class TrajectoryRecord:
    """Observables at every state ``w(0) .. w(tau+1)``.

    Entry ``t <= tau`` is evaluated at ``(s(t), gamma(t))``, the parameters of
    the update that leaves ``w(t)``; the final entry uses ``s = 1`` and the
    last ``gamma``. For batched rollouts the energy arrays are ``(B, tau+2)``.
    """

    s: np.ndarray
    e_w_per_spin: np.ndarray
    e_ising_per_spin: np.ndarray
    final_w: np.ndarray
    snapshots: np.ndarray | None = None
    coupled: np.ndarray | None = None
    diverged_at: np.ndarray | None = None
    problem: tuple | None = None
    parts: list | None = None


def anneal_fractions(tau: int) -> np.ndarray:
    """``s(t) = t / tau`` for ``t = 0..tau``; a zero-length anneal is one pure-transverse step."""
    if tau == 0:
        return np.zeros(1)
    return np.arange(tau + 1, dtype=np.float64) / tau


# ---------------------------------------------------------------- batched kernels


class Parts(NamedTuple):
    """``tanh(w)``, ``z``, ``x`` and ``dphi/dw`` for a stack of states."""

    T: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    A: np.ndarray


def parts(W) -> Parts:
    if isinstance(W, Parts):
        return W
    T = np.tanh(W)
    phi = HALF_PI * T
    return Parts(T, np.sin(phi), np.cos(phi), HALF_PI * (1.0 - T * T))


def couple(J, Z):
    """``J z`` for every row of ``Z`` (``J`` symmetric)."""
    if J.ndim == 2:
        return Z @ J
    return np.matmul(J, Z[..., None])[..., 0]


def _field_dot(Z, h):
    return Z @ h if h.ndim == 1 else np.einsum("bi,bi->b", Z, h)


def _check_s(s):
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"annealing fraction s must lie in [0, 1], got {s}")


def batch_cost(W, J, h, s, gamma, JZ=None):
    _, Z, X, _ = parts(W)
    if JZ is None:
        JZ = couple(J, Z)
    problem = np.einsum("bi,bi->b", Z, JZ) + _field_dot(Z, h)
    return s * gamma * problem - (1.0 - s) * X.sum(axis=-1)


def batch_gradient(W, J, h, s, gamma, JZ=None):
    _, Z, X, A = parts(W)
    if JZ is None:
        JZ = couple(J, Z)
    return (s * gamma * (2.0 * JZ + h) * X + (1.0 - s) * Z) * A


def batch_hvp(W, J, h, s, gamma, V, JZ=None):
    T, Z, X, A = parts(W)
    if JZ is None:
        JZ = couple(J, Z)
    field_ = s * gamma * (2.0 * JZ + h)
    dphi = field_ * X + (1.0 - s) * Z
    curv_phi = -field_ * Z + (1.0 - s) * X
    d2phi = -2.0 * T * A
    XA = X * A
    offdiag = 2.0 * s * gamma * XA * couple(J, XA * V)
    return offdiag + (A * A * curv_phi + dphi * d2phi) * V


def batch_grad_dgamma(W, J, h, s, JZ=None):
    _, Z, X, A = parts(W)
    if JZ is None:
        JZ = couple(J, Z)
    return s * (2.0 * JZ + h) * X * A


def batch_cost_dgamma(W, J, h, s, JZ=None):
    _, Z, _, _ = parts(W)
    if JZ is None:
        JZ = couple(J, Z)
    return s * (np.einsum("bi,bi->b", Z, JZ) + _field_dot(Z, h))


def batch_sign(W):
    return np.where(W >= 0.0, 1.0, -1.0)


def batch_ising_per_spin(W, J, h):
    S = batch_sign(W)
    JS = couple(J, S)
    return (np.einsum("bi,bi->b", S, JS) + _field_dot(S, h)) / W.shape[-1]


def _guard(W, alive, diverged_at, step):
    bad = alive & ~np.all(np.isfinite(W) & (np.abs(W) <= DIVERGENCE_LIMIT), axis=-1)
    if bad.any():
        diverged_at[bad] = step
        alive &= ~bad


def rollout(J, h, W0, eta, gamma, *, snapshots=False, observe=True) -> TrajectoryRecord:
    """Gradient-descent anneal of every row of ``W0``.

    ``w(t+1) = w(t) - eta[t] * grad C(w(t), s(t), gamma[t])`` for ``t = 0..tau``.
    Rows that blow up are zeroed, frozen and reported in ``diverged_at`` (the
    update index, ``-1`` for healthy rows) instead of raising.
    """
    eta = np.asarray(eta, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    tau = eta.shape[0] - 1
    s_t = anneal_fractions(tau)
    W = np.array(W0, dtype=np.float64, copy=True)
    B, n = W.shape
    alive = np.ones(B, dtype=bool)
    diverged_at = np.full(B, -1, dtype=np.int64)
    e_w = np.empty((B, tau + 2))
    e_is = np.empty((B, tau + 2))
    snaps = np.empty((tau + 2, B, n)) if snapshots else None
    coupled_ = np.empty((tau + 2, B, n)) if snapshots else None
    cached = [] if snapshots else None

    for t in range(tau + 1):
        P = parts(W)
        JZ = couple(J, P.Z)
        if snapshots:
            snaps[t] = W
            coupled_[t] = JZ
            cached.append(P)
        if observe:
            e_w[:, t] = batch_cost(P, J, h, s_t[t], gamma[t], JZ) / n
            e_is[:, t] = batch_ising_per_spin(W, J, h)
        W = W - eta[t] * batch_gradient(P, J, h, s_t[t], gamma[t], JZ)
        _guard(W, alive, diverged_at, t)
        if not alive.all():
            W[~alive] = 0.0

    P = parts(W)
    JZ = couple(J, P.Z)
    if snapshots:
        snaps[tau + 1] = W
        coupled_[tau + 1] = JZ
        cached.append(P)
    e_w[:, tau + 1] = batch_cost(P, J, h, 1.0, gamma[tau], JZ) / n
    e_is[:, tau + 1] = batch_ising_per_spin(W, J, h)
    s_rec = np.append(s_t, 1.0)
    if not observe:
        e_w[:, :tau + 1] = np.nan
        e_is[:, :tau + 1] = np.nan
    return TrajectoryRecord(s_rec, e_w, e_is, W, snaps, coupled_, diverged_at, parts=cached)


def adam_rollout(J, h, W0, tau, step_size, gamma=1.0) -> TrajectoryRecord:
    """Same anneal as :func:`rollout` but each row is moved by its own Adam state."""
    s_t = anneal_fractions(tau)
    W = np.array(W0, dtype=np.float64, copy=True)
    B, n = W.shape
    M = np.zeros_like(W)
    V = np.zeros_like(W)
    alive = np.ones(B, dtype=bool)
    diverged_at = np.full(B, -1, dtype=np.int64)
    e_w = np.empty((B, tau + 2))
    e_is = np.empty((B, tau + 2))
    for t in range(tau + 1):
        P = parts(W)
        JZ = couple(J, P.Z)
        e_w[:, t] = batch_cost(P, J, h, s_t[t], gamma, JZ) / n
        e_is[:, t] = batch_ising_per_spin(W, J, h)
        G = batch_gradient(P, J, h, s_t[t], gamma, JZ)
        M = ADAM_BETA1 * M + (1.0 - ADAM_BETA1) * G
        V = ADAM_BETA2 * V + (1.0 - ADAM_BETA2) * G * G
        m_hat = M / (1.0 - ADAM_BETA1 ** (t + 1))
        v_hat = V / (1.0 - ADAM_BETA2 ** (t + 1))
        W = W - step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        _guard(W, alive, diverged_at, t)
        if not alive.all():
            W[~alive] = 0.0
            M[~alive] = 0.0
            V[~alive] = 0.0
    e_w[:, tau + 1] = batch_cost(W, J, h, 1.0, gamma) / n
    e_is[:, tau + 1] = batch_ising_per_spin(W, J, h)
    return TrajectoryRecord(np.append(s_t, 1.0), e_w, e_is, W, diverged_at=diverged_at)


# ---------------------------------------------------------------- single-vector API


def _prep(w, inst: IsingInstance, *vectors):
    if not isinstance(inst, IsingInstance):
        raise ContractError("inst must be an IsingInstance")
    W = np.asarray(w.w if isinstance(w, RelaxedState) else w, dtype=np.float64)
    if W.ndim != 1 or W.shape[0] != inst.n:
        raise ContractError(f"state has shape {W.shape}, instance has n={inst.n}")
    out = [W[None, :]]
    for v in vectors:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != W.shape:
            raise ContractError(f"vector has shape {v.shape}, expected {W.shape}")
        out.append(v[None, :])
    return out


def cost(w, inst: IsingInstance, s: float, gamma: float) -> float:
    _check_s(s)
    (W,) = _prep(w, inst)
    return float(batch_cost(W, inst.couplings, inst.fields, s, gamma)[0])


def cost_gradient(w, inst: IsingInstance, s: float, gamma: float) -> np.ndarray:
    """Analytic gradient of the cost with respect to ``w``.

    ``dC/dw_i = [s gamma (2 (J z)_i + h_i) cos(phi_i) + (1 - s) sin(phi_i)] * (pi/2)(1 - tanh^2 w_i)``
    """
    _check_s(s)
    (W,) = _prep(w, inst)
    return batch_gradient(W, inst.couplings, inst.fields, s, gamma)[0]


def cost_hvp(w, inst: IsingInstance, s: float, gamma: float, v) -> np.ndarray:
    """Hessian-vector product in O(n^2) without forming the Hessian.

    The Hessian is ``2 s gamma diag(x a) J diag(x a)`` plus a diagonal built
    from the second derivatives in the angle and the curvature of
    ``phi(w) = (pi/2) tanh(w)``.
    """
    _check_s(s)
    W, V = _prep(w, inst, v)
    return batch_hvp(W, inst.couplings, inst.fields, s, gamma, V)[0]


def cost_grad_dgamma(w, inst: IsingInstance, s: float, gamma: float) -> np.ndarray:
    _check_s(s)
    (W,) = _prep(w, inst)
    return batch_grad_dgamma(W, inst.couplings, inst.fields, s)[0]


def cost_dgamma(w, inst: IsingInstance, s: float, gamma: float) -> float:
    _check_s(s)
    (W,) = _prep(w, inst)
    return float(batch_cost_dgamma(W, inst.couplings, inst.fields, s)[0])


def sign_readout(w) -> np.ndarray:
    """``sigma_i = +1`` if ``w_i >= 0`` else ``-1``."""
    W = np.asarray(w.w if isinstance(w, RelaxedState) else w, dtype=np.float64)
    return batch_sign(W)


def _single(rec: TrajectoryRecord) -> TrajectoryRecord:
    return TrajectoryRecord(
        rec.s,
        rec.e_w_per_spin[0],
        rec.e_ising_per_spin[0],
        rec.final_w[0],
        None if rec.snapshots is None else rec.snapshots[:, 0],
        None if rec.coupled is None else rec.coupled[:, 0],
        rec.diverged_at,
    )


def lqa_run(inst: IsingInstance, w0, sched: AnnealSchedule, record_snapshots: bool = False):
    """GD anneal from ``w0``; returns ``(TrajectoryRecord, final_w)``.

    Raises :class:`DivergenceError` naming the update that blew up.
    """
    if not isinstance(sched, AnnealSchedule):
        raise ContractError("sched must be an AnnealSchedule")
    (W0,) = _prep(w0, inst)
    rec = rollout(inst.couplings, inst.fields, W0, sched.eta, sched.gamma, snapshots=record_snapshots)
    if rec.diverged_at[0] >= 0:
        raise DivergenceError(int(rec.diverged_at[0]))
    rec = _single(rec)
    return rec, rec.final_w


def lqa_adam_run(inst: IsingInstance, w0, tau: int, step_size: float, gamma: float = 1.0):
    """Adam-driven anneal with constant ``gamma``; returns ``(TrajectoryRecord, final_w)``."""
    if tau < 1:
        raise ContractError(f"Adam rollouts need tau >= 1, got {tau}")
    (W0,) = _prep(w0, inst)
    rec = adam_rollout(inst.couplings, inst.fields, W0, tau, step_size, gamma)
    if rec.diverged_at[0] >= 0:
        raise DivergenceError(int(rec.diverged_at[0]))
    rec = _single(rec)
    return rec, rec.final_w
