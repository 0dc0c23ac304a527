"""Train the desk-scale checkpoints and run every benchmark into one directory."""

import argparse
import json
import logging

from dulqa.desk import DeskConfig, run_desk_suite


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", default="desk_run")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=DeskConfig.master_seed)
    p.add_argument("--smoke", action="store_true", help="tiny budgets, seconds instead of minutes")
    p.add_argument("--parts", nargs="+", default=["bf", "traj", "gen", "scale"], choices=["bf", "traj", "gen", "scale"])
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    cfg = DeskConfig(master_seed=args.seed)
    if args.smoke:
        cfg = cfg.smoke()
    print(json.dumps(run_desk_suite(args.out_dir, args.workers, cfg, tuple(args.parts)), indent=2))


if __name__ == "__main__":
    main()
