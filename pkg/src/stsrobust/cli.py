"""Command-line front end: ``plan``, ``gains``, ``search``, ``simulate``, ``report``.

Every stage reads its inputs from the output directory and writes its own
artifacts there, so the expensive ``search`` stage can be cached between runs.
The configuration is JSON; angles are given in degrees.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .linearizer import FD_STEP, linearize
from .lqr import GainSchedule, LqrWeights, design_gain
from .model import OUTPUT_NAMES, STATE_NAMES, INPUT_NAMES, table_one_box, table_one_nominal
from .numerics import DivergenceError
from .planner import (
    STS1,
    STS2,
    AllocationSpec,
    ManeuverSpec,
    PlanningError,
    ReferenceTrajectory,
    build_reference,
    read_csv,
    write_csv,
)
from .robust import DEFAULT_BANDWIDTH, DEFAULT_OUTPUT_WEIGHTS, build_parameter_filter, evaluate_gain_schedule
from .search import SearchFailed, SearchSpace, latin_hypercube, select_weights
from .simulator import monte_carlo, output_deviation, simulate_closed_loop

STAGES = ("plan", "gains", "search", "simulate", "report")

# Weights reported for the two standard maneuvers; used by the ``gains`` stage
# when the config does not give its own.
REPORTED_WEIGHTS = {
    "STS1": LqrWeights(
        q=(3237, 5534, 6546, 7918, 4003, 8516),
        r=(0.3659, 0.0155, 0.1433, 0.1553),
        s=(1068, 5396, 1324, 9467, 3975, 5819),
    ),
    "STS2": LqrWeights(
        q=(3766, 9550, 2932, 8378, 9552, 9242),
        r=(0.1119, 0.0252, 0.3600, 0.3045),
        s=(9565, 820, 5316, 5779, 6083, 8877),
    ),
}
_PRESETS = {"STS1": STS1, "STS2": STS2}

# Artifact names and the stage that produces each one.
REFERENCE_CSV = "reference.csv"
GAINS_CSV = "gains.csv"
GAINS_JSON = "gains.json"
SEARCH_LOG_CSV = "search_log.csv"
SEARCH_WINNER_JSON = "search_winner.json"
MONTE_CARLO_CSV = "monte_carlo.csv"
SUMMARY_JSON = "monte_carlo_summary.json"
NOMINAL_CSV = "nominal.csv"
ENSEMBLE_CSV = "ensemble.csv"
PRODUCER = {
    REFERENCE_CSV: "plan",
    GAINS_CSV: "gains' or 'search",
    GAINS_JSON: "gains' or 'search",
    NOMINAL_CSV: "simulate",
    ENSEMBLE_CSV: "simulate",
    SUMMARY_JSON: "simulate",
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


class MissingArtifact(FileNotFoundError):
    pass


# --- configuration ----------------------------------------------------------


def _bound_list(values):
    # JSON has no infinity: ``null`` marks an unbounded side.
    return [None if not math.isfinite(v) else float(v) for v in values]


def _bound_tuple(values, default):
    return tuple(default if v is None else float(v) for v in values)


@dataclass(frozen=True)
class ManeuverConfig:
    name: str = "STS1"
    theta0_deg: Optional[tuple] = None
    theta2_final_deg: float = -5.0
    x_com_final: float = 0.0
    y_com_final: float = 0.974
    t_f: float = 3.5
    grid_points: int = 701

    def resolved(self) -> "ManeuverConfig":
        if self.theta0_deg is None:
            if self.name not in _PRESETS:
                raise ConfigError("maneuver.theta0_deg: required for custom maneuvers")
            theta0 = tuple(float(np.round(np.rad2deg(v), 10)) for v in _PRESETS[self.name].theta0)
            return replace(self, theta0_deg=theta0)
        return replace(self, theta0_deg=tuple(float(v) for v in self.theta0_deg))

    def spec(self) -> ManeuverSpec:
        m = self.resolved()
        return ManeuverSpec(
            theta0=tuple(np.deg2rad(m.theta0_deg)),
            z_final=(np.deg2rad(m.theta2_final_deg), m.x_com_final, m.y_com_final),
            t_f=m.t_f,
            grid_points=m.grid_points,
        )


@dataclass(frozen=True)
class AllocationConfig:
    weights: tuple = (1.0, 1.0, 10.0, 1.0)
    u_min: tuple = (None, None, None, 0.0)
    u_max: tuple = (None, None, None, None)

    def spec(self) -> AllocationSpec:
        return AllocationSpec(
            weights=tuple(self.weights),
            u_min=_bound_tuple(self.u_min, -np.inf),
            u_max=_bound_tuple(self.u_max, np.inf),
        )


@dataclass(frozen=True)
class RobustConfig:
    bandwidth: float = DEFAULT_BANDWIDTH
    output_weights: tuple = DEFAULT_OUTPUT_WEIGHTS
    alpha: float = 0.7
    t_m: float = 2.0


@dataclass(frozen=True)
class SearchConfig:
    n_candidates: int = 1350
    q_range: tuple = (1e-6, 1e4)
    r_range: tuple = (1e-6, 1.0)
    s_range: tuple = (1e-6, 1e4)
    seed: int = 0
    log_space: bool = False

    def space(self) -> SearchSpace:
        return SearchSpace(self.n_candidates, tuple(self.q_range), tuple(self.r_range),
                           tuple(self.s_range), self.seed, self.log_space)


@dataclass(frozen=True)
class MonteCarloConfig:
    n: int = 200
    seed: int = 1
    history_stride: int = 5


@dataclass(frozen=True)
class GainsConfig:
    Q: Optional[tuple] = None
    R: Optional[tuple] = None
    S: Optional[tuple] = None

    def weights(self, maneuver: str) -> LqrWeights:
        if self.Q is None and self.R is None and self.S is None:
            if maneuver not in REPORTED_WEIGHTS:
                raise ConfigError("gains: weights are required for custom maneuvers")
            return REPORTED_WEIGHTS[maneuver]
        if self.Q is None or self.R is None or self.S is None:
            raise ConfigError("gains: give all of Q, R and S or none of them")
        return LqrWeights(q=self.Q, r=self.R, s=self.S)


@dataclass(frozen=True)
class RunConfig:
    maneuver: ManeuverConfig = field(default_factory=ManeuverConfig)
    allocation: AllocationConfig = field(default_factory=AllocationConfig)
    robust: RobustConfig = field(default_factory=RobustConfig)
    gains: GainsConfig = field(default_factory=GainsConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    monte_carlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    fd_step: float = FD_STEP
    out_dir: str = "out"

    _SECTIONS = {
        "maneuver": ManeuverConfig,
        "allocation": AllocationConfig,
        "robust": RobustConfig,
        "gains": GainsConfig,
        "search": SearchConfig,
        "monte_carlo": MonteCarloConfig,
    }

    def to_dict(self) -> dict:
        d = asdict(self)
        for section in d.values():
            if isinstance(section, dict):
                for k, v in section.items():
                    if isinstance(v, tuple):
                        section[k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>: expected a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
        kwargs = {}
        for name, value in d.items():
            section_cls = cls._SECTIONS.get(name)
            if section_cls is None:
                kwargs[name] = value
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"{name}: expected an object")
            allowed = {f.name for f in fields(section_cls)}
            for key in value:
                if key not in allowed:
                    raise ConfigError(f"{name}.{key}: unknown key")
            kwargs[name] = section_cls(**{k: tuple(v) if isinstance(v, list) else v
                                          for k, v in value.items()})
        cfg = cls(**kwargs)
        cfg = replace(cfg, maneuver=cfg.maneuver.resolved())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"<root>: {path} is not valid JSON ({err})") from None
        return cls.from_dict(data)

    def validate(self) -> None:
        checks = [
            ("maneuver", lambda: self.maneuver.spec()),
            ("allocation", lambda: self.allocation.spec()),
            ("gains", lambda: self.gains.weights(self.maneuver.name)),
            ("search", lambda: self.search.space()),
        ]
        if self.maneuver.name not in (*_PRESETS, "custom"):
            raise ConfigError("maneuver.name: must be STS1, STS2 or custom")
        for path, check in checks:
            try:
                check()
            except ConfigError:
                raise
            except (ValueError, TypeError) as err:
                raise ConfigError(f"{path}: {err}") from None
        r = self.robust
        if not r.bandwidth > 0:
            raise ConfigError("robust.bandwidth: must be positive")
        if len(r.output_weights) != 6 or any(w <= 0 for w in r.output_weights):
            raise ConfigError("robust.output_weights: need 6 positive entries")
        if not 0.0 <= r.alpha <= 1.0:
            raise ConfigError("robust.alpha: must lie in [0, 1]")
        if not 0.0 < r.t_m <= self.maneuver.t_f:
            raise ConfigError("robust.t_m: must lie in (0, t_f]")
        mc = self.monte_carlo
        if int(mc.n) != mc.n or mc.n < 1:
            raise ConfigError("monte_carlo.n: must be a positive integer")
        if int(mc.history_stride) != mc.history_stride or mc.history_stride < 1:
            raise ConfigError("monte_carlo.history_stride: must be a positive integer")
        if not self.fd_step > 0:
            raise ConfigError("fd_step: must be positive")


# --- stages -----------------------------------------------------------------


def _require(out: Path, name: str) -> Path:
    path = out / name
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run the '{PRODUCER[name]}' stage first")
    return path


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _pipeline_context(cfg: RunConfig, out: Path):
    p = table_one_nominal().to_array()
    traj = ReferenceTrajectory.from_csv(_require(out, REFERENCE_CSV))
    ltv = linearize(traj, p, cfg.fd_step)
    filt = build_parameter_filter(table_one_box(), cfg.robust.bandwidth)
    return p, traj, ltv, filt


def stage_plan(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    p = table_one_nominal().to_array()
    traj = build_reference(cfg.maneuver.spec(), cfg.allocation.spec(), p)
    traj.to_csv(out / REFERENCE_CSV)
    _log(f"plan: {len(traj)} grid points, min F_y = {traj.u_bar[:, 3].min():.6g} N")


def _write_gains(out: Path, gains: GainSchedule, report) -> None:
    gains.to_csv(out / GAINS_CSV)
    _write_json(out / GAINS_JSON, report.to_dict())


def stage_gains(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    _, _, ltv, filt = _pipeline_context(cfg, out)
    w = cfg.gains.weights(cfg.maneuver.name)
    gains = design_gain(ltv, w)
    rep = evaluate_gain_schedule(ltv, gains, filt, cfg.robust.output_weights,
                                 cfg.robust.alpha, cfg.robust.t_m)
    _write_gains(out, gains, rep)
    _log(f"gains: J_RP = {rep.J_RP:.6g} (gamma_tm = {rep.gamma_tm:.6g}, gamma_tf = {rep.gamma_tf:.6g})")


def stage_search(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    _, _, ltv, filt = _pipeline_context(cfg, out)
    candidates = latin_hypercube(cfg.search.space())
    res = select_weights(candidates, ltv, filt, cfg.robust.output_weights, cfg.robust.alpha,
                         cfg.robust.t_m, workers=workers, seed=cfg.search.seed)
    res.to_csv(out / SEARCH_LOG_CSV)
    (out / SEARCH_WINNER_JSON).write_text(res.winner_json())
    gains = design_gain(ltv, res.best_weights)
    _write_gains(out, gains, res.best_metric)
    _log(f"search: candidate {res.best_index} of {len(candidates)} wins with J_RP = {res.best_metric.J_RP:.6g}")


def _history_rows(times, x, u, zeta, stride, draw=None):
    idx = np.unique(np.r_[np.arange(0, len(times), stride), len(times) - 1])
    lead = [] if draw is None else [np.full(len(idx), draw)]
    return np.column_stack(lead + [times[idx], x[idx], u[idx], zeta[idx]])


HISTORY_HEADER = ("t",) + STATE_NAMES + INPUT_NAMES + OUTPUT_NAMES


def stage_simulate(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    traj = ReferenceTrajectory.from_csv(_require(out, REFERENCE_CSV))
    gains_json = json.loads(_require(out, GAINS_JSON).read_text())
    weights = LqrWeights.from_dict(gains_json["weights"]) if "weights" in gains_json else None
    gains = GainSchedule.from_csv(_require(out, GAINS_CSV), weights)
    box = table_one_box()
    p_nom = box.nominal.to_array()
    W_e = cfg.robust.output_weights
    mc = cfg.monte_carlo

    nominal = simulate_closed_loop(traj.x_bar[0], p_nom, traj, gains)
    write_csv(out / NOMINAL_CSV, HISTORY_HEADER,
              np.column_stack([nominal.times, nominal.x, nominal.u, nominal.zeta]))

    closed = monte_carlo(traj, gains, box, mc.n, mc.seed, W_e, workers=workers, keep_histories=True)
    opened = monte_carlo(traj, GainSchedule.zeros(traj.times), box, mc.n, mc.seed, W_e,
                         workers=workers, draws=list(closed.params))
    closed.to_csv(out / MONTE_CARLO_CSV)

    rows = [_history_rows(h.times, h.x, h.u, h.zeta, mc.history_stride, i)
            for i, h in enumerate(closed.histories) if h is not None]
    table = np.vstack(rows) if rows else np.empty((0, 1 + len(HISTORY_HEADER)))
    write_csv(out / ENSEMBLE_CSV, ("draw",) + HISTORY_HEADER,
              [[int(r[0]), *r[1:]] for r in table])

    summary = closed.summary()
    summary["seed"] = mc.seed
    summary["nominal"] = {
        "max_tracking_error": float(np.max(np.abs(nominal.x - traj.x_bar))),
        "final_x_com": nominal.final_x_com,
        "final_com_speed": nominal.final_com_speed,
        "final_output_deviation": output_deviation(nominal, traj, p_nom, W_e),
    }
    with np.errstate(invalid="ignore"):
        not_worse = closed.final_output_deviation <= opened.final_output_deviation
    summary["feedback_not_worse_than_open_loop"] = int(np.sum(not_worse))
    summary["open_loop_diverged"] = int(opened.diverged.sum())
    _write_json(out / SUMMARY_JSON, summary)
    _log(f"simulate: {summary['both_pass']}/{summary['draws']} draws meet both end-state tolerances")


def stage_report(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    from .plots import render_report

    traj = ReferenceTrajectory.from_csv(_require(out, REFERENCE_CSV))
    _, nominal = read_csv(_require(out, NOMINAL_CSV))
    header, ensemble = read_csv(_require(out, ENSEMBLE_CSV))
    summary = json.loads(_require(out, SUMMARY_JSON).read_text())
    paths = render_report(out, traj, nominal, ensemble, summary)
    _log("report: wrote " + ", ".join(p.name for p in paths))


_RUNNERS = {
    "plan": stage_plan,
    "gains": stage_gains,
    "search": stage_search,
    "simulate": stage_simulate,
    "report": stage_report,
}


def run_pipeline(cfg: RunConfig, stage: str, workers: int = 1) -> Path:
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    _RUNNERS[stage](cfg, out, workers)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stsrobust", description=__doc__.splitlines()[0])
    parser.add_argument("stage", choices=STAGES)
    parser.add_argument("--config", type=Path, help="JSON run configuration (defaults if omitted)")
    parser.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, help="overrides both the search and Monte Carlo seeds")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for search and Monte Carlo")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.out is not None:
            cfg = replace(cfg, out_dir=str(args.out))
        if args.seed is not None:
            cfg = replace(cfg, search=replace(cfg.search, seed=args.seed),
                          monte_carlo=replace(cfg.monte_carlo, seed=args.seed))
        if args.workers < 1:
            raise ConfigError("--workers: must be at least 1")
        run_pipeline(cfg, args.stage, args.workers)
    except ConfigError as err:
        where = args.config if args.config else "<defaults>"
        print(f"error: invalid config {where}: {err}", file=sys.stderr)
        return 2
    except MissingArtifact as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (PlanningError, DivergenceError, SearchFailed) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
