import json
from pathlib import Path

import numpy as np
import pytest

from dulqa import io
from dulqa.cli import load_train_config, main
from dulqa.ising import generate_sk, read_instance

DATA = Path(__file__).parent / "data"


def write(path, text):
    path.write_text(text)
    return path


TRAIN_CFG = """\
n = 10            # spins
tau = 3           # anneal steps
n_epoch = 3       # epochs per stage
batch_size = 4
eta0 = 0.1
gamma0 = 1
outer_lr = 0.001
f = 0.5
master_seed = 17
"""


def test_generate_round_trip(tmp_path):
    assert main(["generate", "--n", "9", "--count", "2", "--seed", "40", "--out-dir", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["sk_n9_s40.txt", "sk_n9_s41.txt"]
    assert read_instance(tmp_path / "sk_n9_s41.txt") == generate_sk(9, 41)
    first = (tmp_path / "sk_n9_s40.txt").read_bytes()
    main(["generate", "--n", "9", "--count", "1", "--seed", "40", "--out-dir", str(tmp_path)])
    assert (tmp_path / "sk_n9_s40.txt").read_bytes() == first


def test_generate_n2_content(tmp_path):
    main(["generate", "--n", "2", "--seed", "5", "--out-dir", str(tmp_path)])
    body = [ln for ln in (tmp_path / "sk_n2_s5.txt").read_text().splitlines() if not ln.startswith("#")]
    assert body[0] == "n 2" and len(body) == 2 and body[1].startswith("J 0 1 ")
    assert float(body[1].split()[3]) == generate_sk(2, 5).couplings[0, 1]


def test_generate_bad_size(tmp_path, capsys):
    assert main(["generate", "--n", "1", "--seed", "5", "--out-dir", str(tmp_path)]) == 2
    assert "n >= 2" in capsys.readouterr().err


@pytest.fixture
def instance(tmp_path):
    main(["generate", "--n", "12", "--seed", "3", "--out-dir", str(tmp_path)])
    return tmp_path / "sk_n12_s3.txt"


def test_run_zero_init_is_stationary(tmp_path, instance):
    out = tmp_path / "run.csv"
    assert main(["run", "--instance", str(instance), "--tau", "5", "--eta", "0.3", "--restarts", "1",
                 "--seed", "1", "--zero-init", "--out", str(out)]) == 0
    cols, rows = io.read_table(out)
    per_restart = [r for r in rows if r[0] == "0"]
    e_ising = {r[4] for r in per_restart}
    assert len(per_restart) == 7 and len(e_ising) == 1
    np.testing.assert_allclose([float(r[3]) for r in per_restart[:6]], [-(1 - t / 5) for t in range(6)], atol=1e-15)
    assert {r[0] for r in rows} == {"0", "mean", "sd", "min"}


def test_run_checkpoint_tau_mismatch(tmp_path, instance, capsys):
    ck = write(tmp_path / "ck.txt", "tau=2\n0,0.1,1\n1,0.1,1\n2,0.1,1\n")
    code = main(["run", "--instance", str(instance), "--checkpoint", str(ck), "--tau", "5", "--seed", "1",
                 "--out", str(tmp_path / "x.csv")])
    err = capsys.readouterr().err
    assert code == 2 and "tau=2" in err and "tau=5" in err


def test_run_checkpoint_matches_constant(tmp_path, instance):
    ck = write(tmp_path / "ck.txt", "tau=2\n0,0.1,1\n1,0.1,1\n2,0.1,1\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", "--instance", str(instance), "--checkpoint", str(ck), "--seed", "1", "--restarts", "3", "--out", str(a)])
    main(["run", "--instance", str(instance), "--tau", "2", "--eta", "0.1", "--seed", "1", "--restarts", "3", "--out", str(b)])
    assert io.read_table(a)[1] == io.read_table(b)[1]


def test_run_divergence_exit_code(tmp_path, instance):
    assert main(["run", "--instance", str(instance), "--tau", "3", "--eta", "1e9", "--seed", "1",
                 "--out", str(tmp_path / "x.csv")]) == 3


def test_run_golden(tmp_path):
    from importlib import util

    spec = util.spec_from_file_location("make_golden", Path(__file__).parents[1] / "scripts" / "make_golden.py")
    mod = util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    out = tmp_path / "golden.csv"
    mod.golden_cli_run(out)
    assert out.read_bytes() == (DATA / "golden_cli_run.csv").read_bytes()


def test_train_lr_zero(tmp_path):
    cfg = write(tmp_path / "t.cfg", TRAIN_CFG.replace("outer_lr = 0.001", "outer_lr = 0"))
    assert main(["train", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    sched = io.read_checkpoint(tmp_path / "o" / "checkpoint.txt")
    assert np.all(sched.eta == 0.1) and np.all(sched.gamma == 1.0)
    cols, rows = io.read_table(tmp_path / "o" / "loss_log.csv")
    assert cols == ["stage", "epoch", "loss"] and len(rows) == 9


def test_train_resume_identical(tmp_path):
    cfg = write(tmp_path / "t.cfg", TRAIN_CFG)
    main(["train", str(cfg), "--out-dir", str(tmp_path / "a")])
    main(["train", str(cfg), "--out-dir", str(tmp_path / "b"), "--stop-after-stage", "1"])
    main(["train", str(cfg), "--out-dir", str(tmp_path / "b"), "--resume"])
    for name in ("checkpoint.txt", "loss_log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_threads_identical(tmp_path):
    cfg = write(tmp_path / "t.cfg", TRAIN_CFG.replace("batch_size = 4", "batch_size = 40"))
    main(["train", str(cfg), "--out-dir", str(tmp_path / "a")])
    main(["train", str(cfg), "--out-dir", str(tmp_path / "b"), "--workers", "8"])
    assert (tmp_path / "a" / "checkpoint.txt").read_bytes() == (tmp_path / "b" / "checkpoint.txt").read_bytes()


def test_train_config_contract(tmp_path):
    full = write(tmp_path / "p.cfg", "n = 1000\ntau = 20\nn_epoch = 5000\nbatch_size = 200\neta0 = 0.1\n"
                  "gamma0 = 1\nouter_lr = 0.001\nf = 0.5\nmaster_seed = 1\n")
    assert load_train_config(full).tau == 20
    assert main(["train", str(write(tmp_path / "s.cfg", "n = 10\n")), "--out-dir", str(tmp_path)]) == 2
    assert main(["train", str(write(tmp_path / "u.cfg", TRAIN_CFG + "bogus = 1\n")), "--out-dir", str(tmp_path)]) == 2


def test_output_headers(tmp_path, instance):
    out = tmp_path / "r.csv"
    main(["run", "--instance", str(instance), "--tau", "2", "--eta", "0.1", "--seed", "99", "--out", str(out)])
    head = out.read_text().splitlines()[:3]
    assert head[0].startswith("# dulqa ") and head[1] == "# master_seed=99"
    assert head[2] == f"# input instance sha256={io.sha256_file(instance)}"


def bench_spec(tmp_path, ck_path, solvers="dulqa gd=0.1"):
    return write(tmp_path / "b.cfg", f"kind = trajectory\nmaster_seed = 4\nsizes = 10\ntau = 2\nrestarts = 3\n"
                 f"solvers = {solvers}\ncheckpoint.dulqa = {ck_path}\n")


def test_bench_empty_roster(tmp_path):
    ck = write(tmp_path / "ck.txt", "tau=2\n0,0.1,1\n1,0.1,1\n2,0.1,1\n")
    cfg = bench_spec(tmp_path, ck, solvers="")
    assert main(["bench", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2


def test_bench_manifest_hashes_track_inputs(tmp_path):
    ck = write(tmp_path / "ck.txt", "tau=2\n0,0.1,1\n1,0.1,1\n2,0.1,1\n")
    cfg = bench_spec(tmp_path, ck)

    def manifest(out):
        assert main(["bench", str(cfg), "--out-dir", str(tmp_path / out)]) == 0
        return json.loads((tmp_path / out / "manifest.json").read_text())

    m1, m2 = manifest("o1"), manifest("o2")
    assert m1 == {**m2, "spec": m1["spec"]} and m1["checkpoint_sha256"] == m2["checkpoint_sha256"]
    write(ck, "tau=2\n0,0.2,1\n1,0.1,1\n2,0.1,1\n")
    m3 = manifest("o3")
    assert m3["checkpoint_sha256"] != m1["checkpoint_sha256"]
    assert m3["spec_sha256"] == m1["spec_sha256"]
    write(cfg, cfg.read_text().replace("restarts = 3", "restarts = 4"))
    assert manifest("o4")["spec_sha256"] != m1["spec_sha256"]


def test_tune_writes_trial_log(tmp_path, instance):
    assert main(["tune", "--instance", str(instance), "--solver", "adam", "--tau", "4", "--restarts", "2",
                 "--budget", "3", "--seed", "8", "--out-dir", str(tmp_path / "t")]) == 0
    lines = (tmp_path / "t" / "tune_adam.csv").read_text().splitlines()
    assert lines[-4] == "trial,lr,objective" and len(lines) == 3 + 4
    assert json.loads((tmp_path / "t" / "manifest.json").read_text())["master_seed"] == 8


def test_verify_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 6


def test_missing_file_is_validation_error(tmp_path):
    assert main(["run", "--instance", str(tmp_path / "nope.txt"), "--tau", "2", "--eta", "0.1",
                 "--seed", "1", "--out", str(tmp_path / "x.csv")]) == 2
