"""Desk-scale reproduction runs: train checkpoints, run the benchmarks, write CSVs.

Every output is a pure function of ``DeskConfig``; wall-clock timings go to
``timings.json`` and are the only non-reproducible file.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from dulqa import io, lqa, rng
from dulqa.bench import ExperimentSpec, run_experiment, start_points
from dulqa.hypersearch import tune_lqa_adam, tune_lqa_gd
from dulqa.ising import brute_force_ground_state, generate_sk, ising_energy
from dulqa.parallel import map_ordered, worker_pool
from dulqa.unfold import TrainConfig, incremental_train, training_instance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeskConfig:
    master_seed: int = 2024
    tau: int = 20
    # brute-force bound (n=16)
    bf_n: int = 16
    bf_instances: int = 50
    bf_restarts: int = 20
    bf_train_epochs: int = 200
    bf_batch: int = 50
    bf_success_restarts: int = 100
    # trajectory / generalization (n=100)
    traj_n: int = 100
    traj_epochs: int = 500
    traj_batch: int = 50
    traj_restarts: int = 100
    tune_budget: int = 50
    tune_restarts: int = 20
    gen_sizes: tuple = (100, 200)
    gen_instances: int = 20
    gen_restarts: int = 100
    # scaling
    scale_sizes: tuple = (50, 100, 200)
    scale_epochs: int = 100
    scale_batch: int = 20
    scale_instances: int = 50
    scale_restarts: int = 50

    def smoke(self) -> "DeskConfig":
        """Tiny budgets for plumbing tests."""
        return replace(self, tau=3, bf_n=8, bf_instances=3, bf_restarts=4, bf_train_epochs=3, bf_batch=4,
                       bf_success_restarts=8, traj_n=12, traj_epochs=3, traj_batch=4, traj_restarts=6,
                       tune_budget=3, tune_restarts=3, gen_sizes=(12, 16), gen_instances=2, gen_restarts=4,
                       scale_sizes=(8, 12, 16), scale_epochs=2, scale_batch=3, scale_instances=2, scale_restarts=4)


def _train(config: TrainConfig, out_dir: Path, workers: int) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    result = incremental_train(config, workers=workers)
    header = io.provenance(config.master_seed) + [f"{k}={v}" for k, v in asdict(config).items()]
    path = out_dir / "checkpoint.txt"
    io.write_checkpoint(result.schedule, path, header)
    io.write_loss_log(out_dir / "loss_log.csv", result.loss_log, header)
    return path


def brute_force_check(cfg: DeskConfig, out_dir: Path, workers: int) -> None:
    """Bound check on many small instances plus the ground-state hit rate on the training instance."""
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig(n=cfg.bf_n, tau=cfg.tau, n_epoch=cfg.bf_train_epochs, batch_size=cfg.bf_batch,
                     strategy="one_instance", master_seed=rng.derive_seed(cfg.master_seed, "bf_train"))
    ckpt = io.read_checkpoint(_train(tc, out_dir / "train", workers))
    train_inst = training_instance(tc)
    tune_seed = rng.derive_seed(cfg.master_seed, "bf_tune")
    eta = tune_lqa_gd(train_inst, cfg.tau, cfg.tune_restarts, cfg.tune_budget, tune_seed, workers=workers).best_params["eta"]
    lr = tune_lqa_adam(train_inst, cfg.tau, cfg.tune_restarts, cfg.tune_budget, tune_seed, workers=workers).best_params["lr"]
    spec = ExperimentSpec(kind="trajectory", master_seed=rng.derive_seed(cfg.master_seed, "bf_bench"),
                          sizes=(cfg.bf_n,), tau=cfg.tau, restarts=cfg.bf_restarts)

    def finals(inst, W0):
        J, h = inst.couplings, inst.fields
        recs = {
            "dulqa": lqa.rollout(J, h, W0, ckpt.eta, ckpt.gamma),
            "gd": lqa.rollout(J, h, W0, np.full(cfg.tau + 1, eta), np.ones(cfg.tau + 1)),
            "adam": lqa.adam_rollout(J, h, W0, cfg.tau, lr, 1.0),
        }
        # reference summation order, so a readout equal to the optimum gives exactly its energy
        return {k: np.array([ising_energy(inst, sigma) for sigma in lqa.batch_sign(r.final_w)])
                for k, r in recs.items()}

    def one(k):
        inst = generate_sk(cfg.bf_n, rng.derive_seed(cfg.master_seed, "bf_instance", k))
        return brute_force_ground_state(inst).energy, finals(inst, start_points(spec, cfg.bf_n, k))

    with worker_pool(workers) as pool:
        per_instance = map_ordered(one, range(cfg.bf_instances), pool)
    rows = []
    for k, (gs, energies) in enumerate(per_instance):
        for solver, values in energies.items():
            for r, e in enumerate(values):
                rows.append([k, solver, r, e, gs, e - gs])
    header = io.provenance(cfg.master_seed) + [f"gd_eta={eta!r}", f"adam_lr={lr!r}"]
    io.write_table(out_dir / "bound.csv", ["instance", "solver", "restart", "e_ising", "e_gs", "gap"], rows, header)

    gs = brute_force_ground_state(train_inst).energy
    success_spec = replace(spec, master_seed=rng.derive_seed(cfg.master_seed, "bf_success"))
    W0 = start_points(success_spec, cfg.bf_n, 0, cfg.bf_success_restarts)
    energies = finals(train_inst, W0)
    rows = [[solver, r, e, gs, int(e == gs)]
            for solver, values in energies.items() for r, e in enumerate(values)]
    io.write_table(out_dir / "success.csv", ["solver", "restart", "e_ising", "e_gs", "hit"], rows, header)


def run_desk_suite(out_dir, workers: int = 1, cfg: DeskConfig | None = None, parts=("bf", "traj", "gen", "scale")) -> dict:
    """Run the desk-scale experiments into ``out_dir``; returns wall-clock seconds per part."""
    cfg = cfg or DeskConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}

    def timed(name, fn):
        t0 = time.perf_counter()
        fn()
        timings[name] = time.perf_counter() - t0
        log.info("%s done in %.1f s", name, timings[name])

    traj_ckpt = out / "traj" / "train" / "checkpoint.txt"

    def traj():
        tc = TrainConfig(n=cfg.traj_n, tau=cfg.tau, n_epoch=cfg.traj_epochs, batch_size=cfg.traj_batch,
                         strategy="ensemble", master_seed=rng.derive_seed(cfg.master_seed, "traj_train"))
        _train(tc, out / "traj" / "train", workers)
        spec = ExperimentSpec(kind="trajectory", master_seed=rng.derive_seed(cfg.master_seed, "traj_bench"),
                              sizes=(cfg.traj_n,), tau=cfg.tau, restarts=cfg.traj_restarts,
                              solvers=("dulqa", "gd", "adam"), checkpoints={"dulqa": str(traj_ckpt)},
                              tune_budget=cfg.tune_budget, tune_restarts=cfg.tune_restarts)
        run_experiment(spec, out / "traj", workers)

    def gen():
        spec = ExperimentSpec(kind="generalization", master_seed=rng.derive_seed(cfg.master_seed, "gen_bench"),
                              sizes=cfg.gen_sizes, tau=cfg.tau, restarts=cfg.gen_restarts,
                              instances=cfg.gen_instances, solvers=("dulqa", "gd"),
                              checkpoints={"dulqa": str(traj_ckpt)},
                              tune_budget=cfg.tune_budget, tune_restarts=cfg.tune_restarts)
        run_experiment(spec, out / "gen", workers)

    def scale():
        checkpoints = {}
        for n in cfg.scale_sizes:
            tc = TrainConfig(n=n, tau=cfg.tau, n_epoch=cfg.scale_epochs, batch_size=cfg.scale_batch,
                             strategy="ensemble", master_seed=rng.derive_seed(cfg.master_seed, "scale_train", n))
            checkpoints[f"dulqa@n={n}"] = str(_train(tc, out / "scale" / f"train_n{n}", workers))
        spec = ExperimentSpec(kind="scaling", master_seed=rng.derive_seed(cfg.master_seed, "scale_bench"),
                              sizes=cfg.scale_sizes, tau=cfg.tau, restarts=cfg.scale_restarts,
                              instances=cfg.scale_instances, solvers=("dulqa",), checkpoints=checkpoints,
                              fit_range=(min(cfg.scale_sizes), max(cfg.scale_sizes)),
                              sd_fit_range=(min(cfg.scale_sizes), max(cfg.scale_sizes)))
        run_experiment(spec, out / "scale", workers)

    jobs = {"bf": lambda: brute_force_check(cfg, out / "bf", workers), "traj": traj, "gen": gen, "scale": scale}
    for name in parts:
        timed(name, jobs[name])
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")
    return timings
