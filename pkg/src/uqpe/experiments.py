"""Named Monte Carlo studies behind the coverage tables.

The scripts in ``scripts/`` and the acceptance tests share these
definitions, so a study run once from a script fills the replication cache
that the tests then read back (the cache key ignores the rep count, so a
500-rep run also serves a 200-rep request).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .core import UqpeConfig
from .simulation import DgpSpec, run_mc_study

DEFAULT_CACHE = Path(__file__).resolve().parents[2] / "results" / "mc_cache"
FULL_REPS = 500
CI_REPS = 200
ORACLE_N = 10**6


@dataclass(frozen=True)
class Study:
    name: str
    spec: DgpSpec
    estimators: tuple
    reps: int = FULL_REPS
    config: UqpeConfig = field(default_factory=UqpeConfig)
    oracle_n: int = ORACLE_N

    def run(self, reps: int | None = None, *, cache_dir=None, threads: int = 1, progress=None):
        """Dict of :class:`McMetrics` keyed by estimator."""
        if cache_dir is None:
            cache_dir = os.environ.get("UQPE_CACHE_DIR", DEFAULT_CACHE)
        return run_mc_study(self.spec, reps or self.reps, self.config, self.estimators,
                            oracle_n=self.oracle_n, threads=threads, cache_dir=cache_dir,
                            progress=progress)


def _cells(sparsities, dgps=(1, 2, 3)):
    return [(d, s) for s in sparsities for d in dgps]


def table1_studies() -> list[Study]:
    """Designs (i)-(ii); the plug-in variant rides on the same datasets and multipliers."""
    return [Study(f"table1_dgp{d}_{s}", DgpSpec(d, s), ("debiased", "plugin_only"))
            for d, s in _cells(("i", "ii"))]


def table2_studies() -> list[Study]:
    return [Study(f"table2_dgp{d}_{s}", DgpSpec(d, s), ("debiased",), reps=CI_REPS)
            for d, s in _cells(("iii", "iv"))]


def table3_studies(dgps=(1,)) -> list[Study]:
    cfg = UqpeConfig(estimator="rif_logit")
    return [Study(f"table3_dgp{d}_p{p}", DgpSpec(d, "i", p=p), ("rif_logit",), reps=CI_REPS,
                  config=cfg)
            for d in dgps for p in (25, 50)]


def all_studies() -> dict[str, Study]:
    studies = table1_studies() + table2_studies() + table3_studies((1, 2, 3))
    return {s.name: s for s in studies}
