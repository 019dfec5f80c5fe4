"""Command-line interface: ``uqpe estimate``, ``uqpe simulate`` and ``uqpe true-uqpe``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
single JSON object ``{"error": {"stage", "message", "hint"}}`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .core import UqpeConfig, estimate_all, fit_nuisances
from .data import ingest_csv
from .errors import UqpeError

SCHEMA_VERSION = 1
ESTIMATOR_FLAGS = {"debiased": "debiased", "plugin-only": "plugin_only", "rif-logit": "rif_logit"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _default_threads():
    env = os.environ.get("UQPE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uqpe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"uqpe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="estimate the UQPE curve on a CSV dataset")
    est.add_argument("--data", required=True, type=Path)
    est.add_argument("--outcome", required=True)
    est.add_argument("--treatment", required=True)
    est.add_argument("--controls", type=lambda s: [c.strip() for c in s.split(",") if c.strip()])
    est.add_argument("--taus", type=_floats, default=(0.2, 0.4, 0.6, 0.8))
    est.add_argument("--upsilon", type=_floats, default=(0.2, 0.8))
    est.add_argument("--upsilon-step", type=float, default=None,
                     help="also evaluate the uniform band on this spacing over upsilon")
    est.add_argument("--grid", type=int, default=41, help="number of q-grid points")
    est.add_argument("--bootstrap", type=int, default=1000)
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--estimator", choices=sorted(ESTIMATOR_FLAGS), default="debiased")
    est.add_argument("--out", type=Path, default=Path("uqpe_out"))
    est.add_argument("--save-model", action="store_true")
    est.add_argument("--report-scale", type=float, default=1.0)
    est.add_argument("--threads", type=int, default=None)

    sim = sub.add_parser("simulate", help="Monte Carlo study on a simulated design")
    sim.add_argument("--dgp", type=int, choices=(1, 2, 3), required=True)
    sim.add_argument("--sparsity", choices=("i", "ii", "iii", "iv"), required=True)
    sim.add_argument("--n", type=int, default=500)
    sim.add_argument("--p", type=int, default=100)
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--estimator", choices=sorted(ESTIMATOR_FLAGS), default="debiased")
    sim.add_argument("--taus", type=_floats, default=(0.2, 0.4, 0.6, 0.8))
    sim.add_argument("--bootstrap", type=int, default=1000)
    sim.add_argument("--oracle-n", type=int, default=10_000_000)
    sim.add_argument("--out", type=Path, default=Path("uqpe_sim"))
    sim.add_argument("--cache-dir", type=Path, default=None)
    sim.add_argument("--threads", type=int, default=None)

    tru = sub.add_parser("true-uqpe", help="oracle UQPE values for a simulated design")
    tru.add_argument("--dgp", type=int, choices=(1, 2, 3), required=True)
    tru.add_argument("--sparsity", choices=("i", "ii", "iii", "iv"), required=True)
    tru.add_argument("--taus", type=_floats, default=(0.2, 0.4, 0.6, 0.8))
    tru.add_argument("--p", type=int, default=100)
    tru.add_argument("--oracle-n", type=int, default=10_000_000)
    return parser


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(command, config, seed, outputs, started, extra=None) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "seed": seed,
        "library_version": __version__,
        "started_at": started.isoformat(timespec="seconds"),
        "wall_clock_seconds": round(time.time() - started.timestamp(), 3),
        "outputs": outputs,
    }
    out.update(extra or {})
    return out


def cmd_estimate(args) -> int:
    started = datetime.now(timezone.utc)
    threads = args.threads or _default_threads()
    dataset = ingest_csv(args.data, args.outcome, args.treatment, args.controls)
    if len(args.upsilon) != 2:
        raise UsageError("--upsilon takes two comma-separated values")
    config = UqpeConfig(
        tau_set=args.taus, upsilon=args.upsilon, upsilon_step=args.upsilon_step, grid_size=args.grid, alpha=args.alpha,
        bootstrap_B=args.bootstrap, seed=args.seed, estimator=ESTIMATOR_FLAGS[args.estimator],
        threads=threads,
    )
    nuis = fit_nuisances(dataset, config)
    est = estimate_all(dataset, config, nuisances=nuis)

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cfg = config.to_dict()
    cfg.pop("threads")
    results = {
        "schema_version": SCHEMA_VERSION,
        "manifest": "manifest.json",
        "config": cfg,
        "data": {
            "n": dataset.n, "p": dataset.p, "n_dropped": dataset.n_dropped,
            "outcome": args.outcome, "treatment": args.treatment,
            "controls": list(dataset.column_names[1:]),
            "input_digest": _digest(args.data),
        },
        "debiased": config.debias,
        "report_scale": args.report_scale,
        "estimate": est.to_dict(),
    }
    _dump(results, out / "results.json")

    s = args.report_scale
    with (out / "bands.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "estimate", "pw_lo", "pw_hi", "unif_lo", "unif_hi", "reported"])
        for k, tau in enumerate(est.taus):
            w.writerow([
                f"{tau:.4f}", repr(float(s * est.uqpe_hat[k])),
                repr(float(s * est.uqpe_pointwise[k, 0])), repr(float(s * est.uqpe_pointwise[k, 1])),
                repr(float(s * est.uqpe_uniform[k, 0])), repr(float(s * est.uqpe_uniform[k, 1])),
                int(est.reported[k]),
            ])
    outputs = ["results.json", "bands.csv", "manifest.json"]
    if args.save_model:
        model = {
            "schema_version": SCHEMA_VERSION,
            "manifest": "manifest.json",
            "basis_b": nuis.basis_b.to_dict(),
            "basis_h": None if nuis.basis_h is None else nuis.basis_h.to_dict(),
            "q_grid_fits": nuis.qfits.to_dict(),
            "riesz": None if nuis.riesz is None else nuis.riesz.to_dict(),
        }
        _dump(model, out / "model.json")
        outputs.append("model.json")
    extra = {"input_digest": results["data"]["input_digest"], "debiasing": config.debias}
    if not config.debias:
        extra["note"] = "no debiasing"
    _dump(_manifest("estimate", config.to_dict(), config.seed, outputs, started, extra),
          out / "manifest.json")

    print(f"{'tau':>6} {'UQPE':>10} {'pointwise CI':>24} {'uniform band':>24}")
    for k, tau in enumerate(est.taus):
        if est.reported[k]:
            pw, un = s * est.uqpe_pointwise[k], s * est.uqpe_uniform[k]
            print(f"{tau:6.2f} {s * est.uqpe_hat[k]:10.4f} [{pw[0]:10.4f},{pw[1]:10.4f}] "
                  f"[{un[0]:10.4f},{un[1]:10.4f}]")
    print(f"test UQPE=0 on [{config.upsilon[0]}, {config.upsilon[1]}]: {est.zero_test}")
    return 0


def cmd_simulate(args) -> int:
    from .simulation import DgpSpec, RNG_ALGORITHM, run_mc_study, write_metrics_csv

    started = datetime.now(timezone.utc)
    threads = args.threads or _default_threads()
    spec = DgpSpec(args.dgp, args.sparsity, args.n, args.p, args.seed)
    config = UqpeConfig(tau_set=args.taus, bootstrap_B=args.bootstrap,
                        estimator=ESTIMATOR_FLAGS[args.estimator])
    metrics = run_mc_study(spec, args.reps, config, config.estimator, oracle_n=args.oracle_n,
                           threads=threads, cache_dir=args.cache_dir)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(metrics, out / "metrics.csv")
    body = metrics.to_dict()
    body.pop("runtime")
    _dump({"schema_version": SCHEMA_VERSION, "manifest": "manifest.json", "metrics": body},
          out / "metrics.json")
    _dump(_manifest("simulate", config.to_dict(), args.seed,
                    ["metrics.csv", "metrics.json", "manifest.json"], started,
                    {"dgp": asdict(spec),
                     "reps": args.reps, "oracle_n": args.oracle_n, "rng": RNG_ALGORITHM,
                     "threads": threads, "runtime_seconds": metrics.runtime}),
          out / "manifest.json")
    print(f"DGP {spec.label}  N={spec.n}  p={spec.p}  reps={args.reps}  estimator={config.estimator}")
    print(f"{'tau':>6} {'true':>7} {'mean':>7} {'bias':>7} {'rmse':>7} {'point':>7}")
    for row in metrics.table_rows():
        print(f"{row['tau']:6.2f} {row['true']:7.3f} {row['mean']:7.3f} {row['bias']:7.3f} "
              f"{row['rmse']:7.3f} {row['pointwise']:7.3f}")
    print(f"uniform coverage: {metrics.uniform_coverage:.3f}")
    return 0


def cmd_true_uqpe(args) -> int:
    from .simulation import DgpSpec, true_uqpe_oracle

    spec = DgpSpec(args.dgp, args.sparsity, p=args.p)
    values, sds = true_uqpe_oracle(spec, list(args.taus), args.oracle_n, return_sd=True)
    print(f"{'tau':>6} {'true_uqpe':>10} {'mc_sd':>10}")
    for tau, v, sd in zip(args.taus, values, sds):
        print(f"{tau:6.2f} {v:10.4f} {sd:10.2e}")
    return 0


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "true-uqpe": cmd_true_uqpe}


def _fail(stage, message, hint, code):
    print(json.dumps({"error": {"stage": stage, "message": message, "hint": hint}}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", str(exc), "run `uqpe --help` for the accepted flags", 2)
    except UqpeError as exc:
        d = exc.to_dict()
        code = 2 if d["stage"] == "config" else 1
        return _fail(d["stage"], d["message"], d["hint"], code)
    except (OSError, ValueError) as exc:
        return _fail("runtime", f"{type(exc).__name__}: {exc}", "check input paths and values", 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
