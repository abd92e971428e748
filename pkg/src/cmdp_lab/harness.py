"""Experiment configuration, execution, sweeps and scaling fits.

A run configuration names an environment, a parameter schedule and a seed
count.  Each seed writes a step CSV and an epoch CSV; a summary JSON collects
the per-seed scalars and their means.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import envs
from .diagnostics import condition_report
from .errors import ConfigurationError, DegenerateFit
from .model import CmdpModel, FeatureMap, SoftmaxPolicy
from .pdnac import AlgoConfig, default_config, run
from .trace import EPOCH_COLUMNS, STEP_COLUMNS

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

THREADS_ENV = "CMDP_LAB_THREADS"

# keyword arguments of default_config that may appear in the [algo] table
SCHEDULE_KEYS = frozenset({
    "t_max", "inner_iters", "burn_in", "kappa_alpha", "kappa_beta", "kappa_xi", "kappa_omega",
    "gamma_xi_max", "gamma_omega_max", "eps_reg",
})
ALGO_KEYS = frozenset(f.name for f in dataclasses.fields(AlgoConfig)) - {"seed"}


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce an experiment.

    ``algo`` mixes schedule knobs (see ``SCHEDULE_KEYS``) with explicit
    ``AlgoConfig`` fields; explicit fields win over the schedule.  It must
    contain ``total_steps``.
    """

    env: str
    algo: dict
    env_params: dict = field(default_factory=dict)
    n_seeds: int = 1
    seed: int = 0
    out_dir: Optional[str] = None
    debug_exact: bool = False
    track_burn_in: bool = True
    record_steps: bool = True
    theta0: Optional[list] = None

    def __post_init__(self):
        envs.get_spec(self.env)
        unknown = set(self.algo) - SCHEDULE_KEYS - ALGO_KEYS
        if unknown:
            raise ConfigurationError(f"unknown [algo] keys: {sorted(unknown)}")
        if "total_steps" not in self.algo:
            raise ConfigurationError("[algo] must set total_steps")
        if int(self.n_seeds) < 1:
            raise ConfigurationError("n_seeds must be at least 1")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        for key in ("env", "algo"):
            if key not in data:
                raise ConfigurationError(f"config is missing {key!r}")
        if not isinstance(data["algo"], dict) or not isinstance(data.get("env_params", {}), dict):
            raise ConfigurationError("'algo' and 'env_params' must be tables")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_total_steps(self, total_steps: int) -> "RunConfig":
        return self.replace(algo={**self.algo, "total_steps": int(total_steps)})

    def build_model(self) -> CmdpModel:
        return envs.build(self.env, **self.env_params)

    def algo_config(self, model: CmdpModel, seed_index: int = 0) -> AlgoConfig:
        schedule = {k: v for k, v in self.algo.items() if k in SCHEDULE_KEYS}
        explicit = {k: v for k, v in self.algo.items() if k in ALGO_KEYS and k != "total_steps"}
        base = default_config(model, int(self.algo["total_steps"]), seed=self.seed + seed_index,
                              theta0=self.theta0, **schedule)
        return base.replace(**explicit) if explicit else base


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".toml":
        data = tomllib.loads(text.decode())
    elif path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        raise ConfigurationError(f"config must be .toml or .json, got {path.name}")
    return RunConfig.from_dict(data)


# ------------------------------------------------------------------- running

def _pool_size() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be positive")
    return n


def _map(fn, items):
    items = list(items)
    workers = min(_pool_size(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _run_seed(args) -> dict:
    config, index, out_dir = args
    model = config.build_model()
    algo = config.algo_config(model, index)
    result = run(model, None, None, algo, config.theta0, exact=config.debug_exact,
                 record_steps=config.record_steps)
    trace = result.trace
    summary = {"seed": algo.seed, **trace.summary(), "final_lambda": result.lam,
               "lagrangian_drops": list(result.lagrangian_drops)}
    if config.track_burn_in and trace.burn_in_failures():
        log.warning("seed %d: burn-in missed the recurrent class in %d epochs", algo.seed,
                    trace.burn_in_failures())
    if out_dir is not None:
        out = Path(out_dir)
        if config.record_steps:
            _write_csv(out / f"seed_{index}_steps.csv", STEP_COLUMNS, trace.step_rows())
        _write_csv(out / f"seed_{index}_epochs.csv", EPOCH_COLUMNS, trace.epoch_rows())
    return {"summary": summary, "algo": algo.to_dict()}


@dataclass
class ExperimentResult:
    config: RunConfig
    seeds: list
    algo: list

    def mean(self, key: str) -> float:
        values = [s[key] for s in self.seeds if s[key] is not None]
        return float(np.mean(values)) if values else float("nan")

    def stderr(self, key: str) -> float:
        values = [s[key] for s in self.seeds if s[key] is not None]
        if len(values) < 2:
            return 0.0
        return float(np.std(values, ddof=1) / math.sqrt(len(values)))

    def summary(self) -> dict:
        keys = ("regret", "violation_signed", "violation_clipped", "empirical_violation",
                "final_j_r", "final_j_c", "burn_in_failures", "T", "K")
        return {
            "env": self.config.env,
            "env_params": self.config.env_params,
            "n_seeds": len(self.seeds),
            "algo": self.algo[0] if self.algo else None,
            "mean": {k: self.mean(k) for k in keys},
            "stderr": {k: self.stderr(k) for k in keys},
            "seeds": self.seeds,
        }


def run_experiment(config: RunConfig, out_dir=None) -> ExperimentResult:
    """Run every seed (in a pool capped by ``CMDP_LAB_THREADS``) and write outputs."""
    out_dir = out_dir if out_dir is not None else config.out_dir
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(config, i, out_dir) for i in range(config.n_seeds)]
    outputs = _map(_run_seed, jobs)
    result = ExperimentResult(config, [o["summary"] for o in outputs], [o["algo"] for o in outputs])
    if out_dir is not None:
        (Path(out_dir) / "summary.json").write_text(
            json.dumps(_jsonable(result.summary()), indent=2, sort_keys=True) + "\n")
    return result


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# -------------------------------------------------------------------- sweeps

SWEEP_COLUMNS = ("T", "regret", "regret_se", "violation_clipped", "violation_clipped_se",
                 "violation_signed", "final_j_r", "final_j_c", "n_seeds")


@dataclass
class SweepTable:
    rows: list

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def fit(self, name: str = "regret") -> "ExponentFit":
        return fit_exponent(self.column("T"), self.column(name))


def _check_powers(ts) -> list:
    ts = [int(t) for t in ts]
    if not ts:
        raise ConfigurationError("T list is empty")
    if any(t < 2 or t & (t - 1) for t in ts):
        raise ConfigurationError(f"every T must be a power of two >= 2, got {ts}")
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigurationError("T list must be strictly ascending")
    return ts


def sweep(config: RunConfig, totals: Sequence[int], out_dir=None) -> SweepTable:
    """One experiment per horizon; returns seed-averaged regret and violation per T."""
    totals = _check_powers(totals)
    out_dir = out_dir if out_dir is not None else config.out_dir
    rows = []
    for T in totals:
        sub = None if out_dir is None else Path(out_dir) / f"T_{T}"
        res = run_experiment(config.with_total_steps(T), sub)
        rows.append({
            "T": T,
            "regret": res.mean("regret"),
            "regret_se": res.stderr("regret"),
            "violation_clipped": res.mean("violation_clipped"),
            "violation_clipped_se": res.stderr("violation_clipped"),
            "violation_signed": res.mean("violation_signed"),
            "final_j_r": res.mean("final_j_r"),
            "final_j_c": res.mean("final_j_c"),
            "n_seeds": len(res.seeds),
        })
        log.info("T=%d regret=%.4g violation=%.4g", T, rows[-1]["regret"],
                 rows[-1]["violation_clipped"])
    table = SweepTable(rows)
    if out_dir is not None:
        _write_csv(Path(out_dir) / "sweep.csv", SWEEP_COLUMNS,
                   ([row[c] for c in SWEEP_COLUMNS] for row in rows))
        fits = {}
        for name in ("regret", "violation_clipped"):
            try:
                fits[name] = table.fit(name).to_dict()
            except DegenerateFit as exc:
                fits[name] = {"error": str(exc)}
        (Path(out_dir) / "fits.json").write_text(json.dumps(_jsonable(fits), indent=2) + "\n")
    return table


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    n: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def fit_exponent(x, y, confidence: float = 0.95) -> ExponentFit:
    """OLS slope of ``log y`` on ``log x`` with a t-based confidence interval."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigurationError("x and y must be 1-d arrays of equal length")
    if x.size < 4:
        raise DegenerateFit(f"need at least 4 points, got {x.size}")
    if np.any(y <= 0) or np.any(x <= 0) or not np.all(np.isfinite(y)):
        raise DegenerateFit("log-log fit needs strictly positive finite values")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise DegenerateFit("x values are all equal")
    fit = stats.linregress(lx, ly)
    half = stats.t.ppf(0.5 + confidence / 2, x.size - 2) * fit.stderr
    return ExponentFit(float(fit.slope), float(fit.intercept), float(fit.stderr),
                       float(fit.slope - half), float(fit.slope + half), int(x.size))


# --------------------------------------------------------------- diagnostics

def diagnostics_report(model: CmdpModel, thetas, features: Optional[FeatureMap] = None,
                       eps_reg: float = 1e-3, n_pd_samples: int = 1000, horizon: int = 100,
                       seed: int = 0) -> list:
    """Condition checks for each parameter vector; JSON-ready."""
    rng = np.random.default_rng(seed)
    reports = []
    for theta in thetas:
        policy = SoftmaxPolicy.for_model(model, theta)
        rep = condition_report(model, policy, features, rng, eps_reg, n_pd_samples, horizon)
        reports.append(_jsonable({"theta": np.asarray(theta, float), **rep}))
    return reports


def random_thetas(model: CmdpModel, n: int, seed: int = 0, scale: float = 1.0) -> list:
    rng = np.random.default_rng(seed)
    return [rng.normal(scale=scale, size=model.n_states * model.n_actions) for _ in range(n)]


__all__ = [
    "RunConfig", "load_config", "run_experiment", "ExperimentResult", "sweep", "SweepTable",
    "fit_exponent", "ExponentFit", "diagnostics_report", "random_thetas", "THREADS_ENV",
]
