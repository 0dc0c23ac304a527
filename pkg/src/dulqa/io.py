"""Text formats: checkpoints, loss logs, CSV tables, key-value configs, hashes.

Numbers are written with 17 significant digits so every float round-trips.
Lines starting with ``#`` are provenance comments and are skipped on read.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from dulqa import __version__
from dulqa.errors import ContractError
from dulqa.lqa import AnnealSchedule


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def provenance(master_seed=None, inputs: dict | None = None) -> list[str]:
    """Header comment lines: tool version, master seed and input file hashes."""
    lines = [f"dulqa {__version__}"]
    if master_seed is not None:
        lines.append(f"master_seed={master_seed}")
    for name, path in sorted((inputs or {}).items()):
        lines.append(f"input {name} sha256={sha256_file(path)}")
    return lines


def _comments(fh, header):
    for line in header or ():
        fh.write(f"# {line}\n")


def write_table(path, columns, rows, header=None) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        _comments(fh, header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_checkpoint(sched, path, header=None) -> None:
    """``tau=<int>`` followed by one ``t,eta,gamma`` line per step."""
    eta, gamma = np.asarray(sched.eta), np.asarray(sched.gamma)
    with open(Path(path), "w", encoding="utf-8") as fh:
        _comments(fh, header)
        fh.write(f"tau={eta.shape[0] - 1}\n")
        for t in range(eta.shape[0]):
            fh.write(f"{t},{fmt(eta[t])},{fmt(gamma[t])}\n")


def read_checkpoint(path) -> AnnealSchedule:
    tau = None
    eta, gamma = [], []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if tau is None:
                key, _, value = line.partition("=")
                if key.strip() != "tau":
                    raise ValueError
                tau = int(value)
                continue
            t, e, g = line.split(",")
            if int(t) != len(eta):
                raise ValueError
            eta.append(float(e))
            gamma.append(float(g))
        except ValueError:
            raise ContractError(f"{path}:{lineno}: malformed checkpoint line {raw!r}") from None
    if tau is None or len(eta) != tau + 1:
        raise ContractError(f"{path}: expected tau+1 = {None if tau is None else tau + 1} rows, got {len(eta)}")
    return AnnealSchedule(eta, gamma)


def write_loss_log(path, loss_log, header=None) -> None:
    write_table(path, ["stage", "epoch", "loss"], loss_log, header)


def read_kv(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment (units go there)."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ContractError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key in out:
            raise ContractError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def write_kv(path, values: dict, header=None) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        _comments(fh, header)
        for k, v in values.items():
            fh.write(f"{k} = {fmt(v)}\n")


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
