"""Brute-force LQR weight selection over a Latin-hypercube pool of candidates."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .linearizer import LtvSystem
from .lqr import LqrWeights, design_gain
from .numerics import DivergenceError
from .planner import write_csv
from .robust import (
    DEFAULT_OUTPUT_WEIGHTS,
    GainReport,
    ParameterFilter,
    evaluate_gain_schedule,
)

OPEN_LOWER = 1e-6


class SearchFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    n_candidates: int = 1350
    q_range: tuple = (OPEN_LOWER, 1e4)
    r_range: tuple = (OPEN_LOWER, 1.0)
    s_range: tuple = (OPEN_LOWER, 1e4)
    seed: int = 0
    log_space: bool = False

    def __post_init__(self):
        if int(self.n_candidates) != self.n_candidates or self.n_candidates < 1:
            raise ValueError("n_candidates must be a positive integer")
        for name in ("q_range", "r_range", "s_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not 0 < lo < hi or not math.isfinite(hi):
                raise ValueError(f"{name} must satisfy 0 < low < high < inf")
            object.__setattr__(self, name, (lo, hi))

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.q_range[0]] * 6 + [self.r_range[0]] * 4 + [self.s_range[0]] * 6)
        hi = np.array([self.q_range[1]] * 6 + [self.r_range[1]] * 4 + [self.s_range[1]] * 6)
        return lo, hi


def unit_latin_hypercube(n: int, dims: int, seed: int) -> np.ndarray:
    """``n`` points in ``[0, 1)^dims`` with one point per bin on every axis."""
    sampler = qmc.LatinHypercube(d=dims, seed=np.random.default_rng(seed))
    return sampler.random(n)


def latin_hypercube(space: SearchSpace) -> list:
    unit = unit_latin_hypercube(space.n_candidates, 16, space.seed)
    lo, hi = space.bounds
    if space.log_space:
        values = np.exp(np.log(lo) + unit * (np.log(hi) - np.log(lo)))
    else:
        values = lo + unit * (hi - lo)
    return [LqrWeights.from_vector(v) for v in values]


@dataclass
class CandidateRecord:
    index: int
    weights: LqrWeights
    gamma_tm: float
    gamma_tf: float
    J_RP: float


@dataclass
class SearchResult:
    best_index: int
    best_weights: LqrWeights
    best_metric: GainReport
    records: list = field(repr=False)
    seed: Optional[int] = None

    @property
    def all_metrics(self) -> list:
        return [(r.index, r.J_RP) for r in self.records]

    CSV_HEADER = (("index",) + tuple(f"q{i + 1}" for i in range(6)) + tuple(f"r{i + 1}" for i in range(4))
                  + tuple(f"s{i + 1}" for i in range(6)) + ("gamma_tm", "gamma_tf", "J_RP"))

    def to_csv(self, path) -> None:
        rows = [[r.index, *r.weights.to_vector(), r.gamma_tm, r.gamma_tf, r.J_RP] for r in self.records]
        write_csv(path, self.CSV_HEADER, rows)

    def winner_dict(self) -> dict:
        return {
            "index": self.best_index,
            "seed": self.seed,
            "candidates": len(self.records),
            "diverged": sum(1 for r in self.records if not math.isfinite(r.J_RP)),
            **self.best_metric.to_dict(),
        }

    def winner_json(self) -> str:
        return json.dumps(self.winner_dict(), indent=2, sort_keys=True) + "\n"


# Worker-side context so the LTV grids are shipped once per process.
_CONTEXT: dict = {}


def _init_worker(context):
    _CONTEXT.clear()
    _CONTEXT.update(context)


def _evaluate(item):
    index, weights = item
    ctx = _CONTEXT
    try:
        gains = design_gain(ctx["ltv"], weights)
        rep = evaluate_gain_schedule(ctx["ltv"], gains, ctx["filt"], ctx["W_e"], ctx["alpha"], ctx["t_m"])
    except DivergenceError:
        return CandidateRecord(index, weights, math.nan, math.nan, math.inf)
    return CandidateRecord(index, weights, rep.gamma_tm, rep.gamma_tf, rep.J_RP)


def evaluate_candidates(candidates: Sequence[LqrWeights], ltv: LtvSystem, filt: ParameterFilter,
                        W_e=DEFAULT_OUTPUT_WEIGHTS, alpha: float = 0.7, t_m: float = 2.0,
                        workers: int = 1) -> list:
    """J_RP of every candidate, in candidate order; divergent ones get ``inf``."""
    context = {"ltv": ltv, "filt": filt, "W_e": tuple(W_e), "alpha": alpha, "t_m": t_m}
    items = list(enumerate(candidates))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(context,)) as pool:
            return list(pool.map(_evaluate, items, chunksize=max(1, len(items) // (8 * workers))))
    _init_worker(context)
    try:
        return [_evaluate(item) for item in items]
    finally:
        _CONTEXT.clear()


def select_weights(candidates: Sequence[LqrWeights], ltv: LtvSystem, filt: ParameterFilter,
                   W_e=DEFAULT_OUTPUT_WEIGHTS, alpha: float = 0.7, t_m: float = 2.0,
                   workers: int = 1, seed: Optional[int] = None) -> SearchResult:
    """Pick the candidate with the smallest J_RP (lowest index on ties)."""
    if len(candidates) == 0:
        raise ValueError("no candidates to search")
    records = evaluate_candidates(candidates, ltv, filt, W_e, alpha, t_m, workers)
    J = np.array([r.J_RP for r in records])
    if not np.any(np.isfinite(J)):
        raise SearchFailed(f"all {len(records)} candidates diverged")
    best = int(np.argmin(J))
    rec = records[best]
    report = GainReport(rec.gamma_tm, rec.gamma_tf, alpha, t_m, float(ltv.times[-1]), rec.J_RP,
                        rec.weights)
    return SearchResult(best_index=best, best_weights=rec.weights, best_metric=report,
                        records=records, seed=seed)


def running_best(result: SearchResult) -> np.ndarray:
    """Best J_RP among the first ``k + 1`` candidates, for every ``k``."""
    return np.minimum.accumulate(np.array([r.J_RP for r in result.records]))
