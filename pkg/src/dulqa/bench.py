"""Benchmark experiments: trajectories, crossover time, generalization, size scaling.

Solvers are named in a roster:

* ``dulqa`` or ``dulqa:<label>`` -- a trained schedule from ``spec.checkpoints``
* ``gd`` / ``adam`` -- baseline LQA with step size tuned by random search
* ``gd=<eta>`` / ``adam=<lr>`` -- baseline with a fixed step size

All baselines use ``gamma = 1``. Starting points are shared across solvers
(common random numbers) and come from streams keyed by instance and restart.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dulqa import E_GS_SK, __version__, io, lqa, rng
from dulqa.errors import ContractError, FitDomainError
from dulqa.hypersearch import tune_lqa_adam, tune_lqa_gd
from dulqa.ising import BRUTE_FORCE_MAX_N, brute_force_ground_state, generate_sk
from dulqa.parallel import map_ordered, worker_pool
from dulqa.unfold import init_w0

log = logging.getLogger(__name__)

KINDS = ("trajectory", "crossover", "generalization", "scaling")
REFERENCE_EXPONENTS = {
    "omega_residual": {"value": 0.623, "fit_range": [50, 300]},
    "omega_sd": {"value": 0.694, "fit_range": [50, 1000]},
}


@dataclass
class ExperimentSpec:
    kind: str
    master_seed: int
    sizes: tuple = (100,)
    tau: int = 20
    taus: tuple = ()
    restarts: int = 100
    instances: int = 1
    solvers: tuple = ("dulqa", "gd", "adam")
    checkpoints: dict = field(default_factory=dict)
    tune_budget: int = 50
    tune_restarts: int = 20
    f: float = 0.5
    exact_gs: bool = False
    fit_range: tuple = (50, 300)
    sd_fit_range: tuple = (50, 1000)

    def validate(self) -> "ExperimentSpec":
        if self.kind not in KINDS:
            raise ContractError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.master_seed is None:
            raise ContractError("master_seed is required")
        if not self.solvers:
            raise ContractError("solver roster is empty")
        if not self.sizes or any(int(n) < 2 for n in self.sizes):
            raise ContractError(f"sizes must be a non-empty list of n >= 2, got {self.sizes}")
        for name in ("tau", "restarts", "instances", "tune_budget", "tune_restarts"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.kind == "crossover" and not self.taus:
            raise ContractError("crossover needs a list of baseline taus")
        self._resolved = {}
        for solver in self.solvers:
            if _parse_solver(solver)[0] == "dulqa":
                for n in (self.sizes if self.kind == "scaling" else (None,)):
                    self.schedule_for(solver, n)
        return self

    def schedule_for(self, solver: str, n: int | None = None) -> lqa.AnnealSchedule:
        """Trained schedule for a ``dulqa[:label]`` roster entry.

        With ``n`` given, ``<label>@n=<n>`` is preferred over the shared ``<label>``.
        """
        _, label, _ = _parse_solver(solver)
        keys = ([f"{label}@n={n}"] if n is not None else []) + [label]
        resolved = self.__dict__.setdefault("_resolved", {})
        for key in keys:
            if key not in self.checkpoints:
                continue
            if key not in resolved:
                sched = self.checkpoints[key]
                sched = sched if isinstance(sched, lqa.AnnealSchedule) else io.read_checkpoint(sched)
                if self.kind != "crossover" and sched.tau != self.tau:
                    raise ContractError(
                        f"checkpoint {key!r} has tau={sched.tau} but the experiment uses tau={self.tau}"
                    )
                if n is not None and key == label:
                    log.info("n=%d uses shared checkpoint %r", n, label)
                resolved[key] = sched
            return resolved[key]
        raise ContractError(f"no checkpoint for solver {solver!r} (looked for {keys})")

    def describe(self) -> dict:
        out = asdict(self)
        out["checkpoints"] = {
            k: (str(v) if not isinstance(v, lqa.AnnealSchedule) else "<in-memory>")
            for k, v in self.checkpoints.items()
        }
        return out


@dataclass
class PowerLawFit:
    exponent: float
    prefactor: float
    r2: float
    fit_range: tuple
    points: int


@dataclass
class ScalingResult:
    sizes: list
    mean_e_ising: list
    residual: list
    sd: list
    e_gs: list
    residual_fit: PowerLawFit | None
    sd_fit: PowerLawFit | None


@dataclass
class Table:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)


def _parse_solver(name: str):
    base, _, arg = name.partition("=")
    kind, _, label = base.partition(":")
    if kind == "dulqa":
        return "dulqa", base, None
    if kind in ("gd", "adam") and not label:
        return kind, base, (float(arg) if arg else None)
    raise ContractError(f"unknown solver {name!r}")


def pop_sd(values, axis=0):
    """Population standard deviation (ddof = 0)."""
    return np.std(np.asarray(values, dtype=np.float64), axis=axis)


def power_law_fit(points, fit_range=None) -> PowerLawFit:
    """Least squares on ``(log n, log y)``; the exponent is the decay rate ``-slope``."""
    pts = [(float(n), float(y)) for n, y in points]
    if fit_range is not None:
        lo, hi = fit_range
        pts = [(n, y) for n, y in pts if lo <= n <= hi]
    if len(pts) < 2:
        raise FitDomainError(f"power-law fit needs >= 2 points in range {fit_range}, got {len(pts)}")
    if any(y <= 0 for _, y in pts):
        raise FitDomainError("power-law fit needs y > 0 for every point in range")
    x = np.log([n for n, _ in pts])
    y = np.log([y for _, y in pts])
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(float(-slope), float(np.exp(intercept)), r2, tuple(fit_range or ()), len(pts))


# ---------------------------------------------------------------- shared pieces


def bench_instance(spec: ExperimentSpec, n: int, k: int = 0):
    return generate_sk(n, rng.derive_seed(spec.master_seed, "bench_instance", n, k))


def start_points(spec: ExperimentSpec, n: int, k: int, restarts: int | None = None) -> np.ndarray:
    restarts = spec.restarts if restarts is None else restarts
    return np.stack([init_w0(n, spec.f, rng.stream(spec.master_seed, "bench_w0", n, k, r)) for r in range(restarts)])


def _tune_seed(spec, n, k, tau):
    return rng.derive_seed(spec.master_seed, "bench_tune", n, k, tau)


def resolve_step(spec: ExperimentSpec, solver: str, inst, k: int, tau: int) -> float:
    """Fixed step size, or one tuned on ``inst`` for this ``tau``."""
    kind, _, fixed = _parse_solver(solver)
    if fixed is not None:
        return fixed
    tuner = tune_lqa_gd if kind == "gd" else tune_lqa_adam
    result = tuner(inst, tau, spec.tune_restarts, spec.tune_budget, _tune_seed(spec, inst.n, k, tau), f=spec.f)
    return next(iter(result.best_params.values()))


def run_solver(spec: ExperimentSpec, solver: str, inst, W0, tau: int, step=None, n_for_ckpt=None):
    kind, _, _ = _parse_solver(solver)
    if kind == "dulqa":
        sched = spec.schedule_for(solver, n_for_ckpt)
        rec = lqa.rollout(inst.couplings, inst.fields, W0, sched.eta, sched.gamma)
    elif kind == "gd":
        rec = lqa.rollout(inst.couplings, inst.fields, W0, np.full(tau + 1, step), np.ones(tau + 1))
    else:
        rec = lqa.adam_rollout(inst.couplings, inst.fields, W0, tau, step, 1.0)
    bad = np.flatnonzero(rec.diverged_at >= 0)
    if bad.size:
        log.warning("%s: %d of %d restarts diverged", solver, bad.size, W0.shape[0])
    return rec


# ---------------------------------------------------------------- experiments


def trajectory_experiment(spec: ExperimentSpec, pool=None) -> Table:
    """Per-step mean/SD of ``E_w/n`` and ``E_ising/n`` over restarts on one instance."""
    spec.validate()
    n, tau = spec.sizes[0], spec.tau
    inst = bench_instance(spec, n)
    W0 = start_points(spec, n, 0)

    def one(solver):
        kind, _, _ = _parse_solver(solver)
        step = None if kind == "dulqa" else resolve_step(spec, solver, inst, 0, tau)
        return step, run_solver(spec, solver, inst, W0, tau, step)

    results = map_ordered(one, spec.solvers, pool)
    rows = []
    steps = {}
    for solver, (step, rec) in zip(spec.solvers, results):
        steps[solver] = step
        ew, ei = rec.e_w_per_spin, rec.e_ising_per_spin
        for t in range(tau + 2):
            s = rec.s[t]
            rows.append([solver, n, tau, t, s, ew[:, t].mean(), pop_sd(ew[:, t]),
                         ei[:, t].mean(), pop_sd(ei[:, t]), -(1.0 - s)])
    columns = ["solver", "n", "tau", "t", "s", "mean_e_w", "sd_e_w", "mean_e_ising", "sd_e_ising", "transverse_ref"]
    return Table(columns, rows, {"baseline_steps": steps})


def crossover_experiment(spec: ExperimentSpec, pool=None) -> Table:
    """Baseline mean final energy vs ``tau`` against the best DULQA restart."""
    spec.validate()
    n = spec.sizes[0]
    inst = bench_instance(spec, n)
    W0 = start_points(spec, n, 0)
    dulqa = [s for s in spec.solvers if _parse_solver(s)[0] == "dulqa"]
    if len(dulqa) != 1:
        raise ContractError("crossover needs exactly one dulqa solver as the reference")
    ref = spec.schedule_for(dulqa[0])
    ref_rec = run_solver(spec, dulqa[0], inst, W0, ref.tau)
    ref_min = float(ref_rec.e_ising_per_spin[:, -1].min())
    rows = [[dulqa[0], n, ref.tau, float(ref_rec.e_ising_per_spin[:, -1].mean()), ref_min,
             float(ref_rec.e_ising_per_spin[:, -1].mean()) - ref_min]]
    baselines = [s for s in spec.solvers if _parse_solver(s)[0] != "dulqa"]
    work = [(b, tau) for b in baselines for tau in spec.taus]

    def one(item):
        solver, tau = item
        step = resolve_step(spec, solver, inst, 0, tau)
        rec = run_solver(spec, solver, inst, W0, tau, step)
        return float(rec.e_ising_per_spin[:, -1].mean())

    means = map_ordered(one, work, pool)
    crossover = {}
    for (solver, tau), mean in zip(work, means):
        delta = mean - ref_min
        rows.append([solver, n, tau, mean, ref_min, delta])
        if delta <= 0 and solver not in crossover:
            crossover[solver] = tau
    summary = {"tau_ref": ref.tau, "dulqa_min": ref_min,
               "crossover_tau": {b: crossover.get(b, "not reached") for b in baselines}}
    return Table(["solver", "n", "tau", "mean_e_ising", "dulqa_min", "delta_e"], rows, summary)


def generalization_experiment(spec: ExperimentSpec, pool=None) -> Table:
    """Fixed trained schedules vs per-instance tuned baselines on fresh instances."""
    spec.validate()
    tau = spec.tau
    work = [(n, k) for n in spec.sizes for k in range(spec.instances)]

    def one(item):
        n, k = item
        inst = generate_sk(n, rng.derive_seed(spec.master_seed, "test_instance", n, k))
        W0 = start_points(spec, n, k)
        out = {}
        for solver in spec.solvers:
            kind, _, _ = _parse_solver(solver)
            step = None if kind == "dulqa" else resolve_step(spec, solver, inst, k, tau)
            rec = run_solver(spec, solver, inst, W0, tau, step)
            out[solver] = rec.e_ising_per_spin.mean(axis=0)
        return out

    per_instance = map_ordered(one, work, pool)
    rows = []
    for n in spec.sizes:
        idx = [i for i, (m, _) in enumerate(work) if m == n]
        for solver in spec.solvers:
            curves = np.stack([per_instance[i][solver] for i in idx])
            for t in range(tau + 2):
                rows.append([solver, n, tau, t, curves[:, t].mean(), pop_sd(curves[:, t])])
    return Table(["solver", "n", "tau", "t", "mean_e_ising", "sd_e_ising"], rows)


def scaling_experiment(spec: ExperimentSpec, pool=None) -> tuple[ScalingResult, Table]:
    """Residual energy and SD of the best-of-restarts ``E_ising/n`` versus ``n``."""
    spec.validate()
    dulqa = [s for s in spec.solvers if _parse_solver(s)[0] == "dulqa"]
    if len(dulqa) != 1:
        raise ContractError("scaling needs exactly one dulqa solver")
    solver = dulqa[0]
    work = [(n, k) for n in spec.sizes for k in range(spec.instances)]

    def one(item):
        n, k = item
        inst = generate_sk(n, rng.derive_seed(spec.master_seed, "test_instance", n, k))
        rec = run_solver(spec, solver, inst, start_points(spec, n, k), spec.tau, n_for_ckpt=n)
        best = float(rec.e_ising_per_spin[:, -1].min())
        gs = E_GS_SK
        if spec.exact_gs and n <= BRUTE_FORCE_MAX_N:
            gs = brute_force_ground_state(inst).energy / n
        return best, gs

    per_instance = map_ordered(one, work, pool)
    sizes, means, residuals, sds, gss, rows = [], [], [], [], [], []
    for n in spec.sizes:
        vals = [per_instance[i] for i, (m, _) in enumerate(work) if m == n]
        best = np.array([v for v, _ in vals])
        gs = np.array([g for _, g in vals])
        mean, sd, residual = float(best.mean()), float(pop_sd(best)), float(np.mean(best - gs))
        sizes.append(n)
        means.append(mean)
        residuals.append(residual)
        sds.append(sd)
        gss.append(float(gs.mean()))
        rows.append([solver, n, spec.tau, spec.instances, spec.restarts, mean, float(gs.mean()), residual, sd])

    def fit(values, window):
        try:
            return power_law_fit(zip(sizes, values), window)
        except FitDomainError as exc:
            log.warning("scaling fit skipped: %s", exc)
            return None

    result = ScalingResult(sizes, means, residuals, sds, gss, fit(residuals, spec.fit_range), fit(sds, spec.sd_fit_range))
    summary = {
        "residual_fit": None if result.residual_fit is None else asdict(result.residual_fit),
        "sd_fit": None if result.sd_fit is None else asdict(result.sd_fit),
    }
    columns = ["solver", "n", "tau", "instances", "restarts", "mean_e_ising", "e_gs", "residual", "sd_e_ising"]
    return result, Table(columns, rows, summary)


EXPERIMENTS = {
    "trajectory": trajectory_experiment,
    "crossover": crossover_experiment,
    "generalization": generalization_experiment,
    "scaling": lambda spec, pool=None: scaling_experiment(spec, pool)[1],
}


def run_experiment(spec: ExperimentSpec, out_dir, workers: int = 1) -> Table:
    """Run ``spec`` and write ``<kind>.csv`` plus ``manifest.json`` into ``out_dir``."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {k: v for k, v in spec.checkpoints.items() if not isinstance(v, lqa.AnnealSchedule)}
    with worker_pool(workers) as pool:
        table = EXPERIMENTS[spec.kind](spec, pool)
    csv_path = out_dir / f"{spec.kind}.csv"
    io.write_table(csv_path, table.columns, table.rows, io.provenance(spec.master_seed, inputs))
    manifest = {
        "tool": f"dulqa {__version__}",
        "spec": spec.describe(),
        "master_seed": spec.master_seed,
        "checkpoint_sha256": {k: io.sha256_file(v) for k, v in sorted(inputs.items())},
        "outputs": {csv_path.name: io.sha256_file(csv_path)},
        "summary": table.summary,
        "reference_targets": REFERENCE_EXPONENTS,
    }
    io.write_json(out_dir / "manifest.json", manifest)
    return table
