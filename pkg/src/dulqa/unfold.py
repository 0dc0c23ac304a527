"""Deep-unfolded LQA: unsupervised loss, adjoint backprop and incremental training.

The trainable schedule holds ``eta(t)`` and ``gamma(t)`` for ``t = 0..tau``.
Stage ``k`` of incremental training unrolls ``k + 1`` GD updates with
``s(t') = t'/k`` and minimizes the mean final cost ``C(w(k+1), s=1, gamma(k))``
over a batch. Gradients come from the adjoint recursion

    lam(k+1) = grad C(w(k+1); 1, gamma(k))
    dL/deta(t)   = -lam(t+1) . grad C(w(t); s(t), gamma(t))
    dL/dgamma(t) = -eta(t) lam(t+1) . d/dgamma grad C(w(t); s(t), gamma(t))
    lam(t)       = lam(t+1) - eta(t) H(w(t)) lam(t+1)

plus the direct term ``dC/dgamma`` of the loss itself for ``gamma(k)``.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from dulqa import lqa, rng
from dulqa.errors import ContractError, DivergenceError
from dulqa.ising import IsingInstance, generate_sk
from dulqa.parallel import chunks, map_ordered, worker_pool

log = logging.getLogger(__name__)

STRATEGIES = ("one_instance", "ensemble")
POSITIVITY_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    n: int = 1000
    tau: int = 20
    n_epoch: int = 5000
    batch_size: int = 200
    eta0: float = 0.1
    gamma0: float = 1.0
    f: float = 0.5
    outer_lr: float = 1e-3
    strategy: str = "ensemble"
    master_seed: int | None = None
    reset_moments: bool = True

    def validate(self) -> "TrainConfig":
        if self.master_seed is None:
            raise ContractError("master_seed is required (no wall-clock default)")
        for name in ("tau", "n_epoch", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n < 2:
            raise ContractError(f"n must be >= 2, got {self.n}")
        if not self.f > 0:
            raise ContractError(f"f must be > 0, got {self.f}")
        if not self.outer_lr >= 0:
            raise ContractError(f"outer_lr must be >= 0, got {self.outer_lr}")
        if not (self.eta0 > 0 and self.gamma0 > 0):
            raise ContractError("eta0 and gamma0 must be > 0")
        if self.strategy not in STRATEGIES:
            raise ContractError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        return self


@dataclass
class TrainableSchedule:
    """Schedule parameters plus the outer Adam moments for each of them."""

    eta: np.ndarray
    gamma: np.ndarray
    m_eta: np.ndarray = None
    v_eta: np.ndarray = None
    m_gamma: np.ndarray = None
    v_gamma: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.eta = np.array(self.eta, dtype=np.float64)
        self.gamma = np.array(self.gamma, dtype=np.float64)
        if self.eta.shape != self.gamma.shape or self.eta.ndim != 1:
            raise ContractError("eta and gamma must be 1-D vectors of equal length")
        if self.m_eta is None:
            self.reset_moments()

    @classmethod
    def initial(cls, tau: int, eta0: float, gamma0: float) -> "TrainableSchedule":
        return cls(np.full(tau + 1, float(eta0)), np.full(tau + 1, float(gamma0)))

    @property
    def tau(self) -> int:
        return self.eta.shape[0] - 1

    def reset_moments(self) -> None:
        size = self.eta.shape[0]
        self.m_eta, self.v_eta = np.zeros(size), np.zeros(size)
        self.m_gamma, self.v_gamma = np.zeros(size), np.zeros(size)
        self.step = 0

    def schedule(self, depth: int | None = None) -> lqa.AnnealSchedule:
        depth = self.tau if depth is None else depth
        return lqa.AnnealSchedule(self.eta[: depth + 1], self.gamma[: depth + 1])

    def copy(self) -> "TrainableSchedule":
        return dataclasses.replace(
            self,
            **{k: np.array(getattr(self, k)) for k in ("eta", "gamma", "m_eta", "v_eta", "m_gamma", "v_gamma")},
        )


@dataclass
class Batch:
    items: list
    strategy: str = "ensemble"

    def __len__(self):
        return len(self.items)


@dataclass
class ForwardPass:
    """Rollouts of one batch at a given depth, kept for the backward pass."""

    depth: int
    schedule: lqa.AnnealSchedule
    records: list
    item_losses: np.ndarray
    diverged: np.ndarray

    @property
    def loss(self) -> float:
        alive = ~self.diverged
        if not alive.any():
            raise DivergenceError(-1, detail="every batch item diverged")
        return float(np.mean(self.item_losses[alive]))


@dataclass
class TrainResult:
    schedule: TrainableSchedule
    loss_log: list = field(default_factory=list)


def init_w0(n: int, f: float, stream: np.random.Generator) -> np.ndarray:
    """``w_i = (2 u_i - 1) f`` with ``u_i ~ Unif[0, 1)``."""
    if not f > 0:
        raise ContractError(f"f must be > 0, got {f}")
    return (2.0 * stream.random(n) - 1.0) * f


def training_instance(config: TrainConfig) -> IsingInstance:
    return generate_sk(config.n, rng.derive_seed(config.master_seed, "train_instance"))


def make_batch(strategy: str, config: TrainConfig, epoch_index: int, _fixed=None) -> Batch:
    """Training batch for one epoch.

    ``one_instance`` pairs the fixed training instance with fresh starting
    points; ``ensemble`` also draws a fresh SK instance per item. Every draw
    comes from a stream keyed by ``(master_seed, epoch_index, item)``.
    """
    if strategy not in STRATEGIES:
        raise ContractError(f"unknown strategy {strategy!r}")
    items = []
    fixed = _fixed if _fixed is not None else (
        training_instance(config) if strategy == "one_instance" else None
    )
    for d in range(config.batch_size):
        w0 = init_w0(config.n, config.f, rng.stream(config.master_seed, "train_w0", epoch_index, d))
        if fixed is not None:
            inst = fixed
        else:
            inst = generate_sk(config.n, rng.derive_seed(config.master_seed, "train_instance", epoch_index, d))
        items.append((inst, w0))
    return Batch(items, strategy)


def _stack(items):
    first = items[0][0]
    if all(inst is first for inst, _ in items):
        J, h = first.couplings, first.fields
    else:
        J = np.stack([inst.couplings for inst, _ in items])
        h = np.stack([inst.fields for inst, _ in items])
    return J, h, np.stack([w0 for _, w0 in items])


def _check_depth(sched: lqa.AnnealSchedule, depth: int):
    if depth < 0 or sched.tau < depth:
        raise ContractError(f"schedule covers t = 0..{sched.tau}, depth {depth} requested")


def _forward_chunk(items, eta, gamma):
    J, h, W0 = _stack(items)
    rec = lqa.rollout(J, h, W0, eta, gamma, snapshots=True, observe=False)
    final = lqa.batch_cost(rec.final_w, J, h, 1.0, gamma[-1], rec.coupled[-1])
    rec.problem = (J, h)
    return rec, final


def forward(batch: Batch, sched, depth: int, pool=None) -> ForwardPass:
    """Roll every batch item out to ``depth`` and keep the snapshots."""
    sched = sched.schedule(depth) if isinstance(sched, TrainableSchedule) else sched
    _check_depth(sched, depth)
    eta, gamma = sched.eta[: depth + 1], sched.gamma[: depth + 1]
    parts = chunks(len(batch.items))
    out = map_ordered(lambda r: _forward_chunk([batch.items[i] for i in r], eta, gamma), parts, pool)
    records = [rec for rec, _ in out]
    item_losses = np.concatenate([final for _, final in out])
    diverged = np.concatenate([rec.diverged_at >= 0 for rec in records])
    for d in np.flatnonzero(diverged):
        log.warning("batch item %d diverged at depth %d; dropped from this epoch", d, depth)
    return ForwardPass(depth, lqa.AnnealSchedule(eta, gamma), records, item_losses, diverged)


def loss(batch: Batch, sched, depth: int) -> float:
    """Mean over the batch of ``C(w(depth+1), s=1, gamma(depth))``."""
    return forward(batch, sched, depth).loss


def _cached_parts(rec, t):
    return rec.parts[t] if rec.parts is not None else lqa.parts(rec.snapshots[t])


def _adjoint_chunk(rec, eta, gamma):
    J, h = rec.problem
    depth = eta.shape[0] - 1
    s_t = lqa.anneal_fractions(depth)
    W, JZ = _cached_parts(rec, depth + 1), rec.coupled[depth + 1]
    lam = lqa.batch_gradient(W, J, h, 1.0, gamma[depth], JZ)
    d_eta = np.zeros((lam.shape[0], depth + 1))
    d_gamma = np.zeros((lam.shape[0], depth + 1))
    d_gamma[:, depth] = lqa.batch_cost_dgamma(W, J, h, 1.0, JZ)
    for t in range(depth, -1, -1):
        W, JZ = _cached_parts(rec, t), rec.coupled[t]
        g = lqa.batch_gradient(W, J, h, s_t[t], gamma[t], JZ)
        d_eta[:, t] = -np.einsum("bi,bi->b", lam, g)
        dg = lqa.batch_grad_dgamma(W, J, h, s_t[t], JZ)
        d_gamma[:, t] -= eta[t] * np.einsum("bi,bi->b", lam, dg)
        lam = lam - eta[t] * lqa.batch_hvp(W, J, h, s_t[t], gamma[t], lam, JZ)
    return d_eta, d_gamma


def backward(batch: Batch, fwd: ForwardPass, pool=None):
    """Batch-mean gradients ``(dL/deta, dL/dgamma)`` for ``t = 0..depth``.

    Diverged items are excluded; the mean is taken in batch-index order.
    """
    if any(rec.snapshots is None for rec in fwd.records):
        raise ContractError("backward needs a forward pass that kept snapshots")
    eta, gamma = fwd.schedule.eta, fwd.schedule.gamma
    parts = chunks(len(batch.items))
    if len(parts) != len(fwd.records):
        raise ContractError("forward pass does not match this batch")
    grads = map_ordered(
        lambda rec: _adjoint_chunk(rec, eta, gamma),
        fwd.records,
        pool,
    )
    d_eta = np.concatenate([g[0] for g in grads])
    d_gamma = np.concatenate([g[1] for g in grads])
    alive = ~fwd.diverged
    if not alive.any():
        raise DivergenceError(-1, detail="every batch item diverged")
    return d_eta[alive].mean(axis=0), d_gamma[alive].mean(axis=0)


def outer_adam_step(theta: TrainableSchedule, grad_eta, grad_gamma, lr: float,
                    beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> TrainableSchedule:
    """One bias-corrected Adam step on every schedule entry, in place.

    Gradients shorter than the schedule are zero-padded. Entries are clamped
    at ``POSITIVITY_FLOOR`` afterwards.
    """
    size = theta.eta.shape[0]
    ge = np.zeros(size)
    gg = np.zeros(size)
    ge[: len(grad_eta)] = grad_eta
    gg[: len(grad_gamma)] = grad_gamma
    if not (np.all(np.isfinite(ge)) and np.all(np.isfinite(gg))):
        raise ContractError("outer Adam received non-finite gradients")
    theta.step += 1
    bc1 = 1.0 - beta1**theta.step
    bc2 = 1.0 - beta2**theta.step
    for p, m, v, g in (
        (theta.eta, theta.m_eta, theta.v_eta, ge),
        (theta.gamma, theta.m_gamma, theta.v_gamma, gg),
    ):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        np.maximum(p, POSITIVITY_FLOOR, out=p)
    return theta


def epoch_index(config: TrainConfig, stage: int, epoch: int) -> int:
    return (stage - 1) * config.n_epoch + (epoch - 1)


def incremental_train(config: TrainConfig, *, workers: int = 1, resume: TrainResult | None = None,
                      start_stage: int = 1, stop_after_stage: int | None = None,
                      on_stage_end=None) -> TrainResult:
    """Train stage by stage, depth 1 up to ``tau``, each warm-started from the last.

    ``resume``/``start_stage`` continue a run whose earlier stages are done;
    ``on_stage_end(stage, result)`` is called after each completed stage.
    """
    config.validate()
    if resume is None:
        result = TrainResult(TrainableSchedule.initial(config.tau, config.eta0, config.gamma0))
    else:
        result = TrainResult(resume.schedule.copy(), list(resume.loss_log))
    theta = result.schedule
    fixed = training_instance(config) if config.strategy == "one_instance" else None
    last = config.tau if stop_after_stage is None else min(stop_after_stage, config.tau)
    with worker_pool(workers) as pool:
        for stage in range(start_stage, last + 1):
            if config.reset_moments:
                theta.reset_moments()
            for epoch in range(1, config.n_epoch + 1):
                batch = make_batch(config.strategy, config, epoch_index(config, stage, epoch), fixed)
                fwd = forward(batch, theta, stage, pool)
                try:
                    value = fwd.loss
                except DivergenceError as exc:
                    raise DivergenceError(stage, detail=f"epoch {epoch}: {exc}") from exc
                ge, gg = backward(batch, fwd, pool)
                result.loss_log.append((stage, epoch, value))
                outer_adam_step(theta, ge, gg, config.outer_lr)
            log.info("stage %d/%d done, last loss %.6f", stage, config.tau, result.loss_log[-1][2])
            if on_stage_end is not None:
                on_stage_end(stage, result)
    return result
