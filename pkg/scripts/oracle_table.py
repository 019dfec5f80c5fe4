"""True UQPE values for every design, as a CSV (DGP, sparsity, tau, true, mc_sd).

Usage:
    python3 scripts/oracle_table.py                  # N0 = 1e7, writes results/true_uqpe.csv
    python3 scripts/oracle_table.py --n0 1000000 --out /tmp/truth.csv
"""

import argparse
import csv
from pathlib import Path

from uqpe.simulation import DgpSpec, true_uqpe_oracle

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n0", type=int, default=10_000_000)
    ap.add_argument("--taus", default="0.2,0.4,0.6,0.8")
    ap.add_argument("--out", type=Path, default=ROOT / "results" / "true_uqpe.csv")
    args = ap.parse_args(argv)
    taus = [float(t) for t in args.taus.split(",")]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["DGP", "sparsity", "tau", "true", "mc_sd"])
        for dgp in (1, 2, 3):
            for sparsity in ("i", "ii", "iii", "iv"):
                vals, sds = true_uqpe_oracle(DgpSpec(dgp, sparsity), taus, args.n0, return_sd=True)
                for t, v, s in zip(taus, vals, sds):
                    w.writerow([dgp, sparsity, t, f"{v:.4f}", f"{s:.1e}"])
                print(f"DGP {dgp} ({sparsity}): " + " ".join(f"{v:.3f}" for v in vals), flush=True)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
