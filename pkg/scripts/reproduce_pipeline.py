"""End-to-end artifact reproduction through the command line interface.

Generates the per-type response datasets, meta-trains the population
utility, specializes it to every driver type, rolls demonstration episodes
(shared control with the adapted table, plus the unassisted type-5 case),
and aggregates everything into the evaluation table. All steps go through
the CLI so the emitted manifests pin the exact inputs.
"""
import argparse
import sys
from pathlib import Path

from codriver.cli import main
from codriver.gridworld import DRIVER_PRESETS

X0 = {1: "0,0,0", 2: "0,1,0", 3: "0,0,0", 4: "0,1,0", 5: "0,1,0"}


def run(argv):
    print("+ codrive " + " ".join(argv), flush=True)
    rc = main(argv)
    if rc != 0:
        print(f"step failed with exit code {rc}", file=sys.stderr)
        sys.exit(rc)


def cli():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="artifacts")
    ap.add_argument("--iters", type=int, default=200,
                    help="meta-training outer iterations")
    ap.add_argument("--samples", type=int, default=20,
                    help="trajectories per driver type")
    ap.add_argument("--episode-seeds", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    episodes = work / "episodes"
    for d in (work, data, episodes):
        d.mkdir(parents=True, exist_ok=True)

    run(["gen-data", "--out-dir", str(data), "--seed", str(args.seed),
         "--mode", "perturbed_dp", "--samples", str(args.samples)])
    run(["meta-train", "--data-dir", str(data),
         "--out", str(work / "meta.json"),
         "--loss-csv", str(work / "loss.csv"),
         "--iters", str(args.iters), "--seed", str(args.seed)])
    for th in sorted(DRIVER_PRESETS):
        run(["adapt", "--meta", str(work / "meta.json"),
             "--data-dir", str(data), "--type", str(th),
             "--out", str(work / f"type_{th}.json"),
             "--seed", str(args.seed)])
    for th in sorted(DRIVER_PRESETS):
        for s in range(args.episode_seeds):
            stem = episodes / f"type{th}_shared_s{s}"
            run(["drive", "--table", str(work / f"type_{th}.json"),
                 "--type", str(th), "--x0", X0[th],
                 "--seed", str(s), "--driver-seed", str(s),
                 "--out", f"{stem}.json", "--svg", f"{stem}.svg"])
    for s in range(args.episode_seeds):
        stem = episodes / f"type5_driver_only_s{s}"
        run(["drive", "--mode", "driver_only", "--type", "5", "--x0", X0[5],
             "--seed", str(s), "--driver-seed", str(s),
             "--out", f"{stem}.json", "--svg", f"{stem}.svg"])
    run(["eval", "--episodes", str(episodes), "--out", str(work / "eval.csv")])
    print(f"artifacts under {work}/", flush=True)


if __name__ == "__main__":
    cli()
