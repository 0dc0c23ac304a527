"""Command-line entry point: ``dulqa {generate,run,train,tune,bench,verify}``.

Exit codes: 0 success, 2 validation error, 3 numerical divergence, 4 self-test failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from dulqa import __version__, bench, hypersearch, io, lqa, rng
from dulqa.errors import ContractError, DulqaError
from dulqa.ising import generate_sk, read_instance, write_instance
from dulqa.parallel import single_threaded_blas
from dulqa.unfold import TrainConfig, TrainableSchedule, TrainResult, incremental_train, init_w0

log = logging.getLogger("dulqa")

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_SELFTEST = 0, 2, 3, 4


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _coerce(cls, raw: dict, converters: dict, extra_ok=()):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known - set(extra_ok)
    if unknown:
        raise ContractError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, value in raw.items():
        if key in extra_ok:
            continue
        try:
            out[key] = converters.get(key, str)(value)
        except ValueError as exc:
            raise ContractError(f"bad value for {key!r}: {exc}") from None
    return out


TRAIN_TYPES = {
    "n": int, "tau": int, "n_epoch": int, "batch_size": int, "eta0": float, "gamma0": float,
    "f": float, "outer_lr": float, "master_seed": int, "reset_moments": _bool,
}


def load_train_config(path) -> TrainConfig:
    raw = io.read_kv(path)
    if "master_seed" not in raw:
        raise ContractError(f"{path}: master_seed must be given explicitly")
    return TrainConfig(**_coerce(TrainConfig, raw, TRAIN_TYPES)).validate()


BENCH_TYPES = {
    "master_seed": int, "sizes": _ints, "tau": int, "taus": _ints, "restarts": int, "instances": int,
    "solvers": lambda v: tuple(v.replace(",", " ").split()), "tune_budget": int, "tune_restarts": int,
    "f": float, "exact_gs": _bool, "fit_range": _floats, "sd_fit_range": _floats,
}


def load_bench_spec(path) -> bench.ExperimentSpec:
    """Flat key-value spec; ``checkpoint.<label> = <path>`` lines name trained schedules."""
    raw = io.read_kv(path)
    ckpt_keys = [k for k in raw if k.startswith("checkpoint.")]
    values = _coerce(bench.ExperimentSpec, raw, BENCH_TYPES, extra_ok=ckpt_keys)
    base = Path(path).parent
    checkpoints = {}
    for key in ckpt_keys:
        p = Path(raw[key])
        p = p if p.is_absolute() else base / p
        if not p.is_file():
            raise ContractError(f"{key}: checkpoint file {p} not found")
        checkpoints[key.split(".", 1)[1]] = str(p)
    if "kind" not in values or "master_seed" not in values:
        raise ContractError(f"{path}: 'kind' and 'master_seed' are required")
    return bench.ExperimentSpec(checkpoints=checkpoints, **values).validate()


# ---------------------------------------------------------------- subcommands


def cmd_generate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        seed = args.seed + i
        inst = generate_sk(args.n, seed)
        write_instance(inst, out / f"sk_n{args.n}_s{seed}.txt", header=[f"dulqa {__version__}", f"seed={seed}"])
    return EXIT_OK


def cli_run(instance_path, *, tau, restarts, seed, eta=None, gamma=1.0, checkpoint=None,
            solver="gd", zero_init=False, f=0.5):
    """Rollouts from ``restarts`` seeded starting points; returns ``(columns, rows)``."""
    inst = read_instance(instance_path)
    if restarts < 1:
        raise ContractError(f"restarts must be >= 1, got {restarts}")
    if checkpoint is not None:
        sched = io.read_checkpoint(checkpoint)
        if tau is not None and sched.tau != tau:
            raise ContractError(f"checkpoint tau={sched.tau} does not match requested tau={tau}")
        tau = sched.tau
    elif tau is None or eta is None:
        raise ContractError("give either --checkpoint or both --tau and --eta")
    if zero_init:
        W0 = np.zeros((restarts, inst.n))
    else:
        W0 = np.stack([init_w0(inst.n, f, rng.stream(seed, "run_w0", r)) for r in range(restarts)])
    if checkpoint is not None:
        rec = lqa.rollout(inst.couplings, inst.fields, W0, sched.eta, sched.gamma)
    elif solver == "adam":
        if tau < 1:
            raise ContractError("Adam rollouts need tau >= 1")
        rec = lqa.adam_rollout(inst.couplings, inst.fields, W0, tau, eta, gamma)
    else:
        rec = lqa.rollout(inst.couplings, inst.fields, W0, np.full(tau + 1, eta), np.full(tau + 1, gamma))
    bad = np.flatnonzero(rec.diverged_at >= 0)
    if bad.size:
        from dulqa.errors import DivergenceError

        raise DivergenceError(int(rec.diverged_at[bad[0]]), int(bad[0]))
    rows = []
    for r in range(restarts):
        for t in range(tau + 2):
            rows.append([r, t, rec.s[t], rec.e_w_per_spin[r, t], rec.e_ising_per_spin[r, t]])
    for stat, fn in (("mean", np.mean), ("sd", bench.pop_sd), ("min", np.min)):
        for t in range(tau + 2):
            rows.append([stat, t, rec.s[t], fn(rec.e_w_per_spin[:, t]), fn(rec.e_ising_per_spin[:, t])])
    return ["restart", "t", "s", "e_w_per_spin", "e_ising_per_spin"], rows


def cmd_run(args) -> int:
    columns, rows = cli_run(
        args.instance, tau=args.tau, restarts=args.restarts, seed=args.seed, eta=args.eta, gamma=args.gamma,
        checkpoint=args.checkpoint, solver=args.solver, zero_init=args.zero_init, f=args.f,
    )
    inputs = {"instance": args.instance}
    if args.checkpoint:
        inputs["checkpoint"] = args.checkpoint
    io.write_table(args.out, columns, rows, io.provenance(args.seed, inputs))
    return EXIT_OK


def _state_path(out_dir: Path) -> Path:
    return out_dir / "train_state.json"


def _save_state(out_dir: Path, stage: int, result: TrainResult) -> None:
    th = result.schedule
    state = {
        "completed_stage": stage,
        "schedule": {k: [float(v) for v in getattr(th, k)] for k in ("eta", "gamma", "m_eta", "v_eta", "m_gamma", "v_gamma")},
        "step": th.step,
        "loss_log": [[s, e, float(v)] for s, e, v in result.loss_log],
    }
    tmp = _state_path(out_dir).with_suffix(".tmp")
    tmp.write_text(json.dumps(state), encoding="utf-8")
    tmp.replace(_state_path(out_dir))


def _load_state(out_dir: Path):
    state = json.loads(_state_path(out_dir).read_text(encoding="utf-8"))
    th = TrainableSchedule(**{k: np.array(v) for k, v in state["schedule"].items()}, step=state["step"])
    log_ = [(int(s), int(e), float(v)) for s, e, v in state["loss_log"]]
    return state["completed_stage"], TrainResult(th, log_)


def cli_train(config_path, out_dir, *, resume=False, stop_after_stage=None, workers=1) -> TrainResult:
    """Train from a key-value config; writes checkpoint, loss log and a resume state."""
    config = load_train_config(config_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start, previous = 1, None
    if resume and _state_path(out_dir).is_file():
        done, previous = _load_state(out_dir)
        if previous.schedule.tau != config.tau:
            raise ContractError(f"resume state has tau={previous.schedule.tau}, config has tau={config.tau}")
        start = done + 1
        log.info("resuming after stage %d", done)
    header = io.provenance(config.master_seed, {"config": config_path})
    result = incremental_train(
        config, workers=workers, resume=previous, start_stage=start, stop_after_stage=stop_after_stage,
        on_stage_end=lambda stage, res: _save_state(out_dir, stage, res),
    )
    io.write_checkpoint(result.schedule, out_dir / "checkpoint.txt", header)
    io.write_loss_log(out_dir / "loss_log.csv", result.loss_log, header)
    return result


def cmd_train(args) -> int:
    cli_train(args.config, args.out_dir, resume=args.resume, stop_after_stage=args.stop_after_stage,
              workers=args.workers)
    return EXIT_OK


def cmd_tune(args) -> int:
    insts = [read_instance(p) for p in args.instance]
    tuner = hypersearch.tune_lqa_gd if args.solver == "gd" else hypersearch.tune_lqa_adam
    result = tuner(insts, args.tau, args.restarts, args.budget, args.seed, f=args.f, workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {f"instance{i}": p for i, p in enumerate(args.instance)}
    header = io.provenance(args.seed, inputs)
    result.write_csv(out / f"tune_{args.solver}.csv", header)
    manifest = {
        "tool": f"dulqa {__version__}", "master_seed": args.seed, "solver": args.solver, "tau": args.tau,
        "restarts": args.restarts, "budget": args.budget,
        "inputs_sha256": {k: io.sha256_file(v) for k, v in inputs.items()},
        "best_params": result.best_params, "best_objective": result.best_objective,
    }
    io.write_json(out / "manifest.json", manifest)
    print(json.dumps(result.best_params))
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = load_bench_spec(args.spec)
    bench.run_experiment(spec, args.out_dir, workers=args.workers)
    manifest_path = Path(args.out_dir) / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest["spec_sha256"] = io.sha256_file(args.spec)
    io.write_json(manifest_path, manifest)
    return EXIT_OK


def cmd_verify(args) -> int:
    from dulqa.selftest import run_selftest

    failures = run_selftest(seed=args.seed, report=print)
    return EXIT_SELFTEST if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dulqa", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dulqa {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write SK instance files")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="LQA rollouts on one instance, per-step CSV")
    r.add_argument("--instance", required=True)
    r.add_argument("--checkpoint")
    r.add_argument("--eta", type=float, help="constant step size (GD) or Adam step size")
    r.add_argument("--gamma", type=float, default=1.0)
    r.add_argument("--solver", choices=("gd", "adam"), default="gd")
    r.add_argument("--tau", type=int)
    r.add_argument("--restarts", type=int, default=1)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--f", type=float, default=0.5)
    r.add_argument("--zero-init", action="store_true", help="start every restart at w = 0")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", help="incremental DULQA training from a key-value config")
    t.add_argument("config")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--stop-after-stage", type=int)
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=cmd_train)

    u = sub.add_parser("tune", help="random-search a baseline step size")
    u.add_argument("--instance", nargs="+", required=True)
    u.add_argument("--solver", choices=("gd", "adam"), required=True)
    u.add_argument("--tau", type=int, default=20)
    u.add_argument("--restarts", type=int, default=20)
    u.add_argument("--budget", type=int, default=50)
    u.add_argument("--seed", type=int, required=True)
    u.add_argument("--f", type=float, default=0.5)
    u.add_argument("--workers", type=int, default=1)
    u.add_argument("--out-dir", required=True)
    u.set_defaults(func=cmd_tune)

    b = sub.add_parser("bench", help="run an experiment spec")
    b.add_argument("spec")
    b.add_argument("--out-dir", required=True)
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="finite-difference and brute-force self-tests")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with single_threaded_blas():
            return args.func(args)
    except DulqaError as exc:
        print(f"dulqa: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"dulqa: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
