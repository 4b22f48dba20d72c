"""Monte-Carlo RMSE benchmark and solver convergence experiment."""
import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import constants as C
from .baselines import JointGrid, SmoothingConfig, music_2d, omp_2d
from .dictionary import uniform_grid
from .numerics import make_rng
from .recovery import EstimatorConfig, estimate_paths
from .signal_model import Scenario, paper_scenario, synthesize
from .solver import SolverConfig, bcd_solve, mu_max, stela_solve

CONFIG_SCHEMA = "chanest.experiment/v1"
RMSE_SCHEMA = "chanest.rmse/v1"
CONVERGENCE_SCHEMA = "chanest.convergence/v1"
PATH_REPORT_SCHEMA = "chanest.path_report/v1"

ESTIMATORS = ("nucnorm", "omp2d", "music2d")
WORKERS_ENV = "CHANEST_WORKERS"


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


@dataclass(frozen=True)
class ConvergenceConfig:
    snr_db: float = 5.0
    mu_fraction: float = 0.25
    stela_iters: int = 10000
    # BCD budget in block updates, as a multiple of the STELA sweep budget
    bcd_factor: int = 50
    reference_tol: float = C.REFERENCE_TOL
    reference_iters: int = 400000
    threshold: float = 1e-4


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = field(default_factory=lambda: paper_scenario(snr_reference="element"))
    estimators: Tuple[str, ...] = ESTIMATORS
    nucnorm: EstimatorConfig = field(default_factory=EstimatorConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    baseline_Q: int = 160
    baseline_aoa_step: float = C.AOA_GRID_STEP_DEG
    snr_db: Tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    runs: int = 100
    base_seed: int = 2017
    out_dir: str = "results"
    record_timing: bool = True
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if self.runs < 1:
            raise ConfigError("run count must be at least 1")
        if not self.snr_db:
            raise ConfigError("SNR list must not be empty")
        if not self.estimators:
            raise ConfigError("select at least one estimator")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
        if self.base_seed < 0:
            raise ConfigError("base seed must be non-negative")

    def to_dict(self):
        sc = self.scenario.to_dict()
        sc.pop("noise_variance")
        return {
            "schema": CONFIG_SCHEMA,
            "scenario": sc,
            "estimators": list(self.estimators),
            "nucnorm": asdict(self.nucnorm),
            "smoothing": asdict(self.smoothing),
            "baseline_grid": {"Q": self.baseline_Q, "aoa_step": self.baseline_aoa_step},
            "snr_db": list(self.snr_db),
            "runs": self.runs,
            "base_seed": self.base_seed,
            "out_dir": self.out_dir,
            "record_timing": self.record_timing,
            "convergence": asdict(self.convergence),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            schema = d.get("schema", CONFIG_SCHEMA)
            if schema != CONFIG_SCHEMA:
                raise ConfigError(f"unsupported config schema {schema!r}")
            extra = set(d) - _TOP_KEYS
            if extra:
                raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
            kw = {}
            if "scenario" in d:
                extra = set(d["scenario"]) - _SCENARIO_KEYS
                if extra:
                    raise ConfigError(f"unknown keys in [scenario]: {sorted(extra)}")
                kw["scenario"] = Scenario.from_dict(d["scenario"])
            if "estimators" in d:
                kw["estimators"] = tuple(d["estimators"])
            if "nucnorm" in d:
                kw["nucnorm"] = _build(EstimatorConfig, d["nucnorm"], "nucnorm")
            if "smoothing" in d:
                kw["smoothing"] = _build(SmoothingConfig, d["smoothing"], "smoothing")
            if "baseline_grid" in d:
                g = d["baseline_grid"]
                kw["baseline_Q"] = int(g.get("Q", 160))
                kw["baseline_aoa_step"] = float(g.get("aoa_step", C.AOA_GRID_STEP_DEG))
            if "convergence" in d:
                kw["convergence"] = _build(ConvergenceConfig, d["convergence"], "convergence")
            for key in ("snr_db", "runs", "base_seed", "out_dir", "record_timing"):
                if key in d:
                    kw[key] = d[key]
            return cls(**kw)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def replace(self, **changes):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return ExperimentConfig(**d)


_TOP_KEYS = {"schema", "scenario", "estimators", "nucnorm", "smoothing", "baseline_grid",
             "snr_db", "runs", "base_seed", "out_dir", "record_timing", "convergence"}
_SCENARIO_KEYS = {"positions", "M", "spacing", "N", "T_s", "T_cp", "paths", "L",
                  "noise_variance", "snr_reference"}


def _build(cls, values, section):
    known = {f.name for f in fields(cls)}
    extra = set(values) - known
    if extra:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
    return cls(**values)


def load_config(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return ExperimentConfig.from_dict(data)


def run_seed(base_seed, snr_index, run):
    """Independent stream per (SNR index, run), derived from the base seed."""
    return np.random.SeedSequence([base_seed, snr_index, run])


@dataclass
class Pairing:
    pairs: List[Tuple[int, int]]
    unmatched_estimates: List[int]
    unmatched_truths: List[int]
    cost: float

    @property
    def misses(self):
        return len(self.unmatched_estimates) + len(self.unmatched_truths)


def pairing_cost(est_taus, est_thetas, true_taus, true_thetas, T_s=1.0):
    dt = (np.asarray(est_taus)[:, None] - np.asarray(true_taus)[None, :]) / T_s
    da = (np.asarray(est_thetas)[:, None] - np.asarray(true_thetas)[None, :]) / 180.0
    return dt**2 + da**2


def match_paths(estimates, truth, T_s=1.0):
    """Minimum-cost assignment of estimates to true paths.

    Cost of a pair is ``(dtau / T_s)^2 + (dtheta / 180)^2``; whatever is
    left over on either side is unmatched.
    """
    et = [e.tau for e in estimates]
    ea = [e.theta for e in estimates]
    tt = [p.tau for p in truth]
    ta = [p.theta for p in truth]
    if not et or not tt:
        return Pairing([], list(range(len(et))), list(range(len(tt))), 0.0)
    cost = pairing_cost(et, ea, tt, ta, T_s)
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    return Pairing(
        pairs,
        sorted(set(range(len(et))) - set(rows.tolist())),
        sorted(set(range(len(tt))) - set(cols.tolist())),
        float(cost[rows, cols].sum()),
    )


@dataclass
class MetricsRow:
    estimator: str
    snr_db: float
    rmse_tau: float
    rmse_theta_deg: float
    detect_rate: float
    mean_iters: float
    mean_ms: float


@dataclass
class MetricsReport:
    rows: List[MetricsRow]

    def get(self, estimator, snr_db):
        for r in self.rows:
            if r.estimator == estimator and r.snr_db == snr_db:
                return r
        raise KeyError((estimator, snr_db))

    def series(self, estimator, attr="rmse_tau"):
        rows = sorted((r for r in self.rows if r.estimator == estimator), key=lambda r: r.snr_db)
        return np.array([r.snr_db for r in rows]), np.array([getattr(r, attr) for r in rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(f"# schema: {RMSE_SCHEMA}\n")
            w = csv.writer(f)
            w.writerow(["estimator", "snr_db", "rmse_tau", "rmse_theta_deg",
                        "detect_rate", "mean_iters", "mean_ms"])
            for r in self.rows:
                w.writerow([r.estimator, repr(r.snr_db), repr(r.rmse_tau),
                            repr(r.rmse_theta_deg), repr(r.detect_rate),
                            repr(r.mean_iters), repr(r.mean_ms)])


def make_estimator(config, name):
    """Callable ``Y -> PathEstimates`` for one of :data:`ESTIMATORS`."""
    sc = config.scenario
    P = sc.P
    if name == "nucnorm":
        return lambda Y: estimate_paths(Y, sc.geometry, sc.ofdm, P, config.nucnorm)
    grid = JointGrid.default(sc.geometry, sc.ofdm, config.baseline_Q, config.baseline_aoa_step)
    if name == "omp2d":
        return lambda Y: omp_2d(Y, grid, P)
    if name == "music2d":
        return lambda Y: music_2d(Y, config.smoothing, grid, P)
    raise ConfigError(f"unknown estimator {name!r}")


def _iterations(name, est):
    if name == "nucnorm":
        return est.info.get("iterations", 0)
    if name == "omp2d":
        return len(est.info.get("cells", ()))
    return 0


def _one_run(args):
    # One Monte-Carlo draw, evaluated by every selected estimator.
    config, snr_index, run = args
    sc = config.scenario.with_snr_db(config.snr_db[snr_index])
    data, _ = synthesize(sc, make_rng(run_seed(config.base_seed, snr_index, run)))
    out = []
    for name in config.estimators:
        t0 = time.perf_counter()
        try:
            est = make_estimator(config, name)(data.Y)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError):
            est = None
        ms = 1e3 * (time.perf_counter() - t0)
        if est is None:
            out.append((name, [], [], False, 0, ms))
            continue
        pairing = match_paths(est, sc.paths, sc.ofdm.T_s)
        dt = [(est.entries[i].tau - sc.paths[j].tau) / sc.ofdm.T_s for i, j in pairing.pairs]
        da = [est.entries[i].theta - sc.paths[j].theta for i, j in pairing.pairs]
        out.append((name, dt, da, est.P_hat == sc.P, _iterations(name, est), ms))
    return out


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")


def run_benchmark(config, out_dir=None, progress=None):
    """RMSE, detection rate and cost per (estimator, SNR).

    Runs are independent and may go to a process pool (``CHANEST_WORKERS``);
    results are always accumulated in run order so the output is a pure
    function of the configuration. Writes ``rmse.csv`` when ``out_dir`` is
    given.
    """
    jobs = [(config, s, r) for s in range(len(config.snr_db)) for r in range(config.runs)]
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_run, jobs, chunksize=4))
    else:
        results = []
        for job in jobs:
            results.append(_one_run(job))
            if progress:
                progress(len(results), len(jobs))
    rows = []
    for s, snr in enumerate(config.snr_db):
        block = results[s * config.runs:(s + 1) * config.runs]
        for k, name in enumerate(config.estimators):
            dt = [e for run in block for e in run[k][1]]
            da = [e for run in block for e in run[k][2]]
            rows.append(MetricsRow(
                name, snr,
                float(np.sqrt(np.mean(np.square(dt)))) if dt else float("nan"),
                float(np.sqrt(np.mean(np.square(da)))) if da else float("nan"),
                float(np.mean([run[k][3] for run in block])),
                float(np.mean([run[k][4] for run in block])),
                float(np.mean([run[k][5] for run in block])) if config.record_timing
                else float("nan"),
            ))
    report = MetricsReport(rows)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        report.to_csv(Path(out_dir) / "rmse.csv")
    return report


@dataclass
class ConvergenceResult:
    reference_norm: float
    reference_iterations: int
    reference_converged: bool
    stela_error: np.ndarray
    bcd_error: np.ndarray
    mu: float

    def first_below(self, method, level):
        """First counted iteration whose error is at most ``level * ||G_hat||``.

        Returns ``None`` if the trace never gets there.
        """
        err = self.stela_error if method == "stela" else self.bcd_error
        hit = np.flatnonzero(err <= level * self.reference_norm)
        return int(hit[0]) if hit.size else None

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(f"# schema: {CONVERGENCE_SCHEMA}\n")
            w = csv.writer(f)
            w.writerow(["method", "iter", "error"])
            for name, err in (("stela", self.stela_error), ("bcd", self.bcd_error)):
                for t, e in enumerate(err):
                    w.writerow([name, t, repr(float(e))])


def convergence_data(config):
    cc = config.convergence
    sc = config.scenario.with_snr_db(cc.snr_db)
    data, _ = synthesize(sc, make_rng(run_seed(config.base_seed, 0, 0)))
    return sc, data.Y


def run_convergence(config, out_dir=None, stela_iters=None, bcd_updates=None):
    """Distance to the reference solution per counted iteration.

    The reference is a STELA solve at ``reference_tol``, or until the line
    search stalls at the rounding floor, whichever comes first. STELA counts one
    parallel sweep as an iteration, BCD one block update. Writes
    ``convergence.csv`` when ``out_dir`` is given.
    """
    cc = config.convergence
    sc, Y = convergence_data(config)
    dictionary = uniform_grid(config.nucnorm.Q, sc.ofdm, sc.M)
    mu = cc.mu_fraction * mu_max(Y, dictionary)
    G_hat, ref_trace = stela_solve(
        Y, dictionary, SolverConfig(mu, cc.reference_iters, cc.reference_tol)
    )
    n_stela = stela_iters or cc.stela_iters
    n_bcd = bcd_updates or cc.bcd_factor * n_stela
    # tol below rounding: run the budget (or until the line search stalls)
    _, st = stela_solve(Y, dictionary, SolverConfig(mu, n_stela, 1e-300), reference=G_hat)
    _, bt = bcd_solve(Y, dictionary, SolverConfig(mu, n_bcd, 1e-300), reference=G_hat)
    result = ConvergenceResult(
        float(np.linalg.norm(G_hat)), ref_trace.iterations,
        ref_trace.converged or ref_trace.stalled,
        np.asarray(st.ref_error), np.asarray(bt.ref_error), mu,
    )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        result.to_csv(Path(out_dir) / "convergence.csv")
    return result


def write_path_report(rows, path):
    """One line per solved ``mu``; ``rows`` holds ``(mu, support_size, objective)``."""
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {PATH_REPORT_SCHEMA}\n")
        w = csv.writer(f)
        w.writerow(["kappa", "mu", "support_size", "objective"])
        for k, (mu, size, obj) in enumerate(rows):
            w.writerow([k + 1, repr(float(mu)), int(size), repr(float(obj))])
