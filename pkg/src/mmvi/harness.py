"""Experiment runner: configuration, problem setup, CSV output and studies."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .constraints import ConstraintSet
from .errors import MeshCrossing, NoConvergence, NumericalFailure, SingularJacobian, SingularMatrix
from .fieldtheory import (
    SolitonParams,
    find_bounce_time,
    nearly_exact_bounce,
    sine_gordon,
    soliton,
    soliton_dt,
    soliton_dX,
    two_soliton,
    two_soliton_dt,
    two_soliton_dX,
)
from .init import CT, LM, InitialProfile, initial_phase, solve_initial_positions, solve_initial_velocities
from .integrator_ct import ct_integrate
from .integrator_lm import LM_SCHEMES, lm_integrate
from .semidiscrete import MeshConfig
from .solver import NewtonOptions
from .tableaus import TABLEAU_NAMES, get_tableau
from .trajectory import StepRecord, Trajectory

log = logging.getLogger(__name__)

SINGLE_SOLITON = "SingleSolitonBounce"
TWO_SOLITON = "TwoSoliton"
VACUUM = "Vacuum"
PROBLEMS = (SINGLE_SOLITON, TWO_SOLITON, VACUUM)

UNIFORM_MESH = "UniformMesh"
STRATEGIES = (CT, LM, UNIFORM_MESH)

TERMINATIONS = ("completed", "mesh_crossing", "no_convergence", "singular")

# two-soliton initial data is the kink-antikink pair taken at this time
TWO_SOLITON_T0 = -5.0


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    problem: str = SINGLE_SOLITON
    strategy: str = LM
    scheme: str = "Lobatto3"
    N: int = 15
    dt: float = 0.01
    t_max: float = 50.0
    alpha: float = 2.5
    v: float = 0.9
    X0: float = 12.5
    Xmax: float = 25.0
    homotopy_d: int = 10
    output_dir: Optional[str] = None
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    monitor_kkt: bool = False

    def __post_init__(self):
        if isinstance(self.newton, dict):
            self.newton = NewtonOptions(**self.newton)
        self.validate()

    @property
    def nsteps(self):
        return int(round(self.t_max / self.dt))

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.strategy == LM:
            if self.scheme not in LM_SCHEMES:
                raise ConfigError(f"LM strategy supports schemes {LM_SCHEMES}")
        elif self.scheme not in TABLEAU_NAMES:
            raise ConfigError(f"{self.strategy} strategy supports schemes {TABLEAU_NAMES}")
        if not (self.dt > 0 and self.t_max > 0):
            raise ConfigError("dt and t_max must be positive")
        if self.N < 1 or self.homotopy_d < 1:
            raise ConfigError("N and homotopy_d must be at least 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if not abs(self.v) < 1:
            raise ConfigError("soliton speed must satisfy |v| < 1")
        if not 0 < self.X0 < self.Xmax:
            raise ConfigError("X0 must lie inside (0, Xmax)")

    def to_json(self):
        out = asdict(self)
        out["newton"] = asdict(self.newton)
        return out

    @classmethod
    def from_mapping(cls, data: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json_file(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a flat JSON object")
        return cls.from_mapping(data)


@dataclass
class Problem:
    mesh: MeshConfig
    profile: InitialProfile
    reference: Optional[Callable] = None


def build_problem(cfg: ExperimentConfig) -> Problem:
    if cfg.problem == SINGLE_SOLITON:
        sp_ = SolitonParams(cfg.X0, cfg.v, cfg.Xmax)
        mesh = MeshConfig(cfg.N, cfg.Xmax, 0.0, 2 * np.pi)
        profile = InitialProfile(
            lambda X: soliton(X, 0.0, sp_), lambda X: soliton_dX(X, 0.0, sp_), lambda X: soliton_dt(X, 0.0, sp_)
        )
        reference = None
        if math.isclose(cfg.X0, 0.5 * cfg.Xmax) and cfg.v > 0:
            T = find_bounce_time(cfg.Xmax, cfg.v)

            def reference(X, t, T=T):
                return nearly_exact_bounce(X, t, cfg.Xmax, cfg.v, T)

        return Problem(mesh, profile, reference)
    if cfg.problem == TWO_SOLITON:
        mesh = MeshConfig(cfg.N, cfg.Xmax, -2 * np.pi, 2 * np.pi)
        t0, v, X0 = TWO_SOLITON_T0, cfg.v, cfg.X0
        profile = InitialProfile(
            lambda X: two_soliton(X - X0, t0, v),
            lambda X: two_soliton_dX(X - X0, t0, v),
            lambda X: two_soliton_dt(X - X0, t0, v),
        )
        return Problem(mesh, profile)
    mesh = MeshConfig(cfg.N, cfg.Xmax, 0.0, 0.0)
    zero = lambda X: np.zeros_like(np.asarray(X, dtype=float))  # noqa: E731
    return Problem(mesh, InitialProfile(zero, zero, zero), lambda X, t: np.zeros_like(X))


def constraint_for(cfg: ExperimentConfig) -> ConstraintSet:
    if cfg.strategy == UNIFORM_MESH:
        return ConstraintSet.uniform(cfg.N)
    return ConstraintSet.arclength(cfg.N, cfg.alpha)


def initial_state(cfg: ExperimentConfig, problem: Problem | None = None):
    problem = problem or build_problem(cfg)
    c = constraint_for(cfg)
    q = solve_initial_positions(problem.profile, problem.mesh, c, cfg.homotopy_d, cfg.newton)
    vel = solve_initial_velocities(q, problem.profile, c)
    return initial_phase(q, vel, LM if cfg.strategy == LM else CT, c, sine_gordon), c


def termination_reason(exc: NumericalFailure) -> str:
    if isinstance(exc, MeshCrossing):
        return "mesh_crossing"
    if isinstance(exc, NoConvergence):
        return "no_convergence"
    if isinstance(exc, (SingularJacobian, SingularMatrix)):
        return "singular"
    return "no_convergence"


def _fmt(x):
    return format(float(x), ".17g")


class CsvSink:
    """Streams state.csv and diagnostics.csv rows as records arrive."""

    DIAG_COLUMNS = ("t", "E_N", "g_norm", "lambda_norm", "r_norm", "mu_norm", "kkt_sigma_min")

    def __init__(self, out_dir: Path, N: int):
        out_dir.mkdir(parents=True, exist_ok=True)
        self._state_f = open(out_dir / "state.csv", "w", newline="")
        self._diag_f = open(out_dir / "diagnostics.csv", "w", newline="")
        self._state = csv.writer(self._state_f)
        self._diag = csv.writer(self._diag_f)
        idx = range(N + 2)
        self._state.writerow(["t"] + [f"y_{i}" for i in idx] + [f"X_{i}" for i in idx])
        self._diag.writerow(self.DIAG_COLUMNS)

    def __call__(self, rec: StepRecord):
        self._state.writerow([_fmt(rec.t)] + [_fmt(v) for v in rec.y] + [_fmt(v) for v in rec.X])
        self._diag.writerow([_fmt(getattr(rec, c)) for c in self.DIAG_COLUMNS])

    def close(self):
        self._state_f.close()
        self._diag_f.close()


def read_state_csv(path):
    """(t, y, X) arrays from a state.csv file."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = (data.shape[1] - 1) // 2
    return data[:, 0], data[:, 1:1 + n], data[:, 1 + n:]


def run_experiment(cfg: ExperimentConfig, sink=None) -> Trajectory:
    """Build initial data, integrate, and write outputs when ``output_dir`` is set.

    Numerical failures do not raise: the partial trajectory comes back with
    ``termination`` and ``failed_step`` filled in.  ``traj.meta`` echoes what
    meta.json holds.
    """
    t_start = time.perf_counter()
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    csv_sink = CsvSink(out_dir, cfg.N) if out_dir else None

    def emit(rec):
        if csv_sink is not None:
            csv_sink(rec)
        if sink is not None:
            sink(rec)

    traj = Trajectory()
    try:
        state0, c = initial_state(cfg)
        if cfg.strategy == LM:
            traj = lm_integrate(state0, cfg.dt, cfg.nsteps, cfg.scheme, c, sine_gordon, emit,
                                cfg.newton, cfg.monitor_kkt)
        else:
            traj = ct_integrate(state0, cfg.dt, cfg.nsteps, get_tableau(cfg.scheme), c, sine_gordon,
                                emit, cfg.newton)
    except NumericalFailure as exc:
        traj = getattr(exc, "trajectory", traj)
        traj.termination = termination_reason(exc)
        traj.failed_step = exc.step if exc.step is not None else 0
        traj.message = str(exc)
        traj.failure_details = {k: v for k, v in exc.details.items() if np.isscalar(v)}
        log.warning("run stopped at step %s: %s", traj.failed_step, exc)
    finally:
        if csv_sink is not None:
            csv_sink.close()
    meta = {
        "config": cfg.to_json(),
        "termination": traj.termination,
        "failed_step": traj.failed_step,
        "message": traj.message,
        "steps_completed": max(len(traj) - 1, 0),
        "wall_time_s": time.perf_counter() - t_start,
    }
    if getattr(traj, "failure_details", None):
        meta["failure_details"] = {k: float(v) for k, v in traj.failure_details.items()}
    traj.meta = meta
    if out_dir is not None:
        (out_dir / "meta.json").write_text(json.dumps(meta, indent=2))
    return traj


def linf_error(traj: Trajectory, reference: Callable) -> float:
    """max over records and nodes of |y_i(t_n) - reference(X_i(t_n), t_n)|."""
    worst = 0.0
    for rec in traj.records:
        worst = max(worst, float(np.abs(rec.y - reference(rec.X, rec.t)).max()))
    return worst


def _error_run(cfg: ExperimentConfig):
    problem = build_problem(cfg)
    if problem.reference is None:
        raise ConfigError("convergence study needs a problem with a reference solution")
    worst = [0.0]

    def track(rec):
        worst[0] = max(worst[0], float(np.abs(rec.y - problem.reference(rec.X, rec.t)).max()))

    traj = run_experiment(cfg, sink=track)
    err = worst[0] if traj.termination == "completed" else float("nan")
    return {
        "N": cfg.N,
        "N_plus_1": cfg.N + 1,
        "linf_error": err,
        "termination": traj.termination,
        "failed_step": traj.failed_step,
        "wall_time_s": traj.meta["wall_time_s"],
    }


def _local_slopes(rows):
    for prev, row in zip([None] + rows[:-1], rows):
        if prev is None or not (row["linf_error"] > 0 and prev["linf_error"] > 0):
            row["slope"] = float("nan")
        else:
            row["slope"] = -math.log(row["linf_error"] / prev["linf_error"]) / math.log(
                row["N_plus_1"] / prev["N_plus_1"]
            )
    return rows


def fitted_slope(rows, last=3) -> float:
    """Least-squares slope of -log(error) against log(N+1) over the largest ``last`` N."""
    pts = [(r["N_plus_1"], r["linf_error"]) for r in rows if r["linf_error"] > 0][-last:]
    if len(pts) < 2:
        return float("nan")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(-np.polyfit(x, y, 1)[0])


STUDY_COLUMNS = ("N", "N_plus_1", "linf_error", "slope", "termination", "failed_step", "wall_time_s")


def convergence_study(base: ExperimentConfig, Ns, workers: int | None = 1):
    """L-infinity error against the reference for each N; rows sorted by N.

    Runs are independent; ``workers > 1`` fans them out to a process pool.
    A failed run shows up as a row with NaN error and its termination reason.
    """
    Ns = sorted(set(int(n) for n in Ns))
    cfgs = []
    for n in Ns:
        out = str(Path(base.output_dir) / f"N{n}") if base.output_dir else None
        cfgs.append(_replace(base, N=n, output_dir=out))
    if workers and workers > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_error_run, cfgs))
    else:
        rows = [_error_run(cf) for cf in cfgs]
    rows = _local_slopes(sorted(rows, key=lambda r: r["N"]))
    if base.output_dir:
        path = Path(base.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "study.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(STUDY_COLUMNS)
            for r in rows:
                w.writerow([r[k] if not isinstance(r[k], float) else _fmt(r[k]) for k in STUDY_COLUMNS])
    return rows


def _replace(cfg: ExperimentConfig, **changes):
    data = cfg.to_json()
    data.update(changes)
    return ExperimentConfig.from_mapping(data)


@dataclass
class EnergySummary:
    E0: float
    max_deviation: float
    amplitude: float
    drift_slope: float
    termination: str
    t_end: float


def energy_summary(traj: Trajectory) -> EnergySummary:
    t, E = traj.t, traj.energy
    dev = E - E[0]
    slope = float(np.polyfit(t, dev, 1)[0]) if len(t) > 1 else 0.0
    return EnergySummary(
        E0=float(E[0]),
        max_deviation=float(np.abs(dev).max()),
        amplitude=float(E.max() - E.min()),
        drift_slope=slope,
        termination=traj.termination,
        t_end=float(t[-1]),
    )


def energy_study(cfg: ExperimentConfig):
    """Run ``cfg`` and summarise the discrete energy series.

    Returns (rows of (t, E_N), EnergySummary); writes energy.csv and
    energy_summary.json next to the run outputs.
    """
    if cfg.problem != TWO_SOLITON:
        raise ConfigError("energy study expects the TwoSoliton problem")
    traj = run_experiment(cfg)
    summary = energy_summary(traj)
    rows = list(zip(traj.t.tolist(), traj.energy.tolist()))
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        with open(out / "energy.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "E_N"))
            w.writerows((_fmt(a), _fmt(b)) for a, b in rows)
        (out / "energy_summary.json").write_text(json.dumps(asdict(summary), indent=2))
    return rows, summary
