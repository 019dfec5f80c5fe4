"""Run the Monte Carlo tables and write CSV/JSON summaries to results/.

Usage:
    python3 scripts/run_tables.py                    # every study at its default rep count
    python3 scripts/run_tables.py table1_dgp1_i --reps 200
Replications are cached under results/mc_cache, so interrupted runs resume.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from uqpe.experiments import all_studies
from uqpe.simulation import write_metrics_csv

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    studies = all_studies()
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help=f"subset of: {', '.join(studies)}")
    ap.add_argument("--reps", type=int, default=None)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=ROOT / "results")
    args = ap.parse_args(argv)
    names = args.names or list(studies)
    args.out.mkdir(parents=True, exist_ok=True)
    for name in names:
        study = studies[name]
        t0 = time.time()

        def progress(done, total):
            if done % 50 == 0 or done == total:
                print(f"  {name}: {done}/{total} ({time.time() - t0:.0f}s)", flush=True)

        metrics = study.run(args.reps, threads=args.threads, progress=progress)
        write_metrics_csv(list(metrics.values()), args.out / f"{name}.csv")
        (args.out / f"{name}.json").write_text(
            json.dumps({k: m.to_dict() for k, m in metrics.items()}, indent=2) + "\n")
        for est, m in metrics.items():
            cells = " ".join(f"{t:.1f}:{e:.3f}/{r:.3f}/{c:.3f}" for t, e, r, c in
                             zip(m.taus, m.mean_estimate, m.rmse, m.pointwise_coverage))
            print(f"{name} [{est}] reps={m.reps} fail={m.failures} unif={m.uniform_coverage:.3f} "
                  f"(tau:mean/rmse/point) {cells}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
