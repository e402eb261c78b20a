"""End-to-end phantom experiment: cohort -> models -> consistent/inconsistent report.

    python scripts/run_phantom_experiment.py --out runs/phantom
    python scripts/run_phantom_experiment.py --out runs/quick --n 300 --referee-epochs 30 --encoder-epochs 5
"""

import argparse
import sys
import time
from pathlib import Path

from gcmetrics.cli import main as cli

HERE = Path(__file__).resolve().parent


def stage(name, *args):
    start = time.perf_counter()
    code = cli([str(a) for a in args])
    print(f"== {name}: exit {code} ({time.perf_counter() - start:.0f}s)")
    if code:
        sys.exit(code)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/phantom")
    p.add_argument("--config", default=str(HERE / "phantom_run.json"))
    p.add_argument("--n", type=int)
    p.add_argument("--referee-epochs", type=int)
    p.add_argument("--encoder-epochs", type=int)
    args = p.parse_args()

    out = Path(args.out)
    cfg = ["--config", args.config]
    gen = ["--n", args.n] if args.n else []
    r_ep = ["--epochs", args.referee_epochs] if args.referee_epochs else []
    e_ep = ["--epochs", args.encoder_epochs] if args.encoder_epochs else []

    stage("generate", *cfg, "generate", *gen, "--out", out / "cohort")
    stage("build-eval", *cfg, "build-eval", "--cohort", out / "cohort", "--out", out / "eval")
    stage("train referees", *cfg, "train", "--target", "referee", "--attribute", "all", "--side", "all",
          *r_ep, "--cohort", out / "cohort", "--models", out / "models")
    stage("train encoder", *cfg, "train", "--target", "encoder", *e_ep,
          "--cohort", out / "cohort", "--models", out / "models")
    stage("evaluate", *cfg, "evaluate", "--cohort", out / "eval", "--models", out / "models",
          "--out", out / "report")


if __name__ == "__main__":
    main()
