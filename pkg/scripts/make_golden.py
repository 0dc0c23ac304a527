"""Record the golden regression files under tests/data from the current build.

Run only after the finite-difference and brute-force checks pass; the tests
compare later builds against these files bit for bit.
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from dulqa import io, lqa, rng
from dulqa.cli import main as cli_main
from dulqa.ising import generate_sk, write_instance
from dulqa.unfold import TrainConfig, TrainableSchedule, init_w0, loss, make_batch

GOLDEN_SEED = 20240601


def golden_rollout():
    inst = generate_sk(50, GOLDEN_SEED)
    w0 = init_w0(50, 0.5, rng.stream(GOLDEN_SEED, "golden_w0"))
    rec, _ = lqa.lqa_run(inst, w0, lqa.AnnealSchedule.constant(20, 0.1, 1.0))
    return rec


def golden_loss():
    config = TrainConfig(n=50, tau=5, n_epoch=1, batch_size=8, master_seed=GOLDEN_SEED)
    batch = make_batch("ensemble", config, 0)
    return loss(batch, TrainableSchedule.initial(5, 0.1, 1.0), 5)


def golden_cli_run(out_csv: Path):
    with tempfile.TemporaryDirectory() as tmp:
        inst_path = Path(tmp) / f"sk_n30_s{GOLDEN_SEED}.txt"
        write_instance(generate_sk(30, GOLDEN_SEED), inst_path)
        code = cli_main(["run", "--instance", str(inst_path), "--tau", "8", "--eta", "0.2",
                         "--restarts", "3", "--seed", str(GOLDEN_SEED), "--out", str(out_csv)])
        assert code == 0


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", default=str(Path(__file__).resolve().parents[1] / "tests" / "data"))
    out = Path(p.parse_args().out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = golden_rollout()
    rows = [[t, rec.s[t], rec.e_w_per_spin[t], rec.e_ising_per_spin[t]] for t in range(rec.s.shape[0])]
    io.write_table(out / "golden_lqa_n50_tau20.csv", ["t", "s", "e_w_per_spin", "e_ising_per_spin"], rows)
    np.savetxt(out / "golden_lqa_n50_tau20_final_w.txt", rec.final_w, fmt="%.17g")
    (out / "golden_loss_n50_tau5.txt").write_text(f"{io.fmt(golden_loss())}\n")
    golden_cli_run(out / "golden_cli_run.csv")


if __name__ == "__main__":
    main()
