"""Print the headline numbers from a desk-suite output directory."""

import argparse
import json
from pathlib import Path

import numpy as np

from dulqa import io


def table(path):
    cols, rows = io.read_table(path)
    return [dict(zip(cols, r)) for r in rows]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("run_dir")
    root = Path(p.parse_args().run_dir)

    if (root / "bf").is_dir():
        bound = table(root / "bf" / "bound.csv")
        hits = table(root / "bf" / "success.csv")
        print(f"brute force: min gap {min(float(r['gap']) for r in bound):.3g} over {len(bound)} readouts")
        for solver in ("dulqa", "gd", "adam"):
            rate = np.mean([int(r["hit"]) for r in hits if r["solver"] == solver])
            print(f"  {solver:6s} ground-state rate on training instance {rate:.2f}")
    if (root / "traj").is_dir():
        rows = table(root / "traj" / "trajectory.csv")
        last = max(int(r["t"]) for r in rows)
        print("trajectory, final mean E_ising/N:")
        for r in rows:
            if int(r["t"]) == last:
                print(f"  {r['solver']:6s} {float(r['mean_e_ising']):.4f} +- {float(r['sd_e_ising']):.4f}")
    if (root / "gen").is_dir():
        rows = table(root / "gen" / "generalization.csv")
        last = max(int(r["t"]) for r in rows)
        print("generalization, final mean E_ising/N over instances:")
        for r in rows:
            if int(r["t"]) == last:
                print(f"  n={r['n']:4s} {r['solver']:6s} {float(r['mean_e_ising']):.4f} +- {float(r['sd_e_ising']):.4f}")
    if (root / "scale").is_dir():
        print("scaling:")
        for r in table(root / "scale" / "scaling.csv"):
            print(f"  n={r['n']:4s} residual {float(r['residual']):.4f} sd {float(r['sd_e_ising']):.4f}")
        summary = json.loads((root / "scale" / "manifest.json").read_text())["summary"]
        for key in ("residual_fit", "sd_fit"):
            fit = summary[key]
            if fit:
                print(f"  {key}: exponent {fit['exponent']:.3f}, R2 {fit['r2']:.3f}")


if __name__ == "__main__":
    main()
