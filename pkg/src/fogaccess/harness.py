"""Seeded Monte-Carlo experiments over cloud, fog and per-cell baseline processing."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .amp import AmpConfig, run_mmv_amp
from .cloud import cloud_detect, concatenate
from .detect import (DetectionResult, DetectorConfig, bi_ad_rows, error_probability, nmse_active_db,
                     nmse_db)
from .fog import associate_faps, run_fog
from .scenario import ConfigError, Observation, Scenario, ScenarioConfig, build_scenario

log = logging.getLogger(__name__)

CSV_COLUMNS = ["sweep_var", "value", "deployment", "trials", "Pe_mean", "Pe_stderr", "NMSE_mean_dB",
               "NMSE_stderr_dB", "iters_mean", "fronthaul_scalars"]
TRIAL_COLUMNS = ["sweep_var", "value", "trial", "deployment", "scenario", "Pe", "miss", "false_alarm",
                 "NMSE_dB", "NMSE_active_dB", "iters", "fronthaul_scalars"]


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class Deployment:
    kind: str  # cloud | fog | baseline
    n_co: int = 0

    @property
    def tag(self) -> str:
        return f"fog_nco{self.n_co}" if self.kind == "fog" else self.kind

    @classmethod
    def parse(cls, tag: str) -> "Deployment":
        if tag in ("cloud", "baseline"):
            return cls(tag)
        if tag.startswith("fog_nco"):
            return cls("fog", int(tag[len("fog_nco"):]))
        raise ConfigError(f"unknown deployment {tag!r}")


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    solver: AmpConfig = field(default_factory=AmpConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    deployments: tuple = ("cloud", "fog", "baseline")
    n_co: tuple = (1, 2, 3)
    trials: int = 200
    base_seed: int = 2024
    sweep_var: str = "antennas"
    sweep_values: tuple = (1, 2, 4, 8)
    fail_policy: str = "abort"  # abort | skip
    fog_stop: str = "epsilon"  # epsilon | tmax
    frame_length: int = 0  # recorded only; the data phase is not simulated

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.fail_policy not in ("abort", "skip"):
            raise ConfigError(f"unknown fail_policy {self.fail_policy!r}")
        for d in self.deployments:
            if d not in ("cloud", "fog", "baseline"):
                raise ConfigError(f"unknown deployment {d!r}")
        if self.sweep_var != "n_co" and self.sweep_var not in {f.name for f in dataclasses.fields(ScenarioConfig)}:
            raise ConfigError(f"cannot sweep {self.sweep_var!r}")
        if not self.sweep_values:
            raise ConfigError("sweep_values is empty")

    def expanded_deployments(self, n_co=None) -> list:
        out = []
        for d in self.deployments:
            if d == "fog":
                out.extend(Deployment("fog", n) for n in ((n_co,) if n_co is not None else self.n_co))
            else:
                out.append(Deployment(d))
        return out

    def points(self):
        """(value, scenario config, deployments) for every sweep point."""
        for value in self.sweep_values:
            if self.sweep_var == "n_co":
                yield value, self.scenario, self.expanded_deployments(int(value))
            else:
                scn = dataclasses.replace(self.scenario, **{self.sweep_var: _like(getattr(self.scenario, self.sweep_var), value)})
                yield value, scn, self.expanded_deployments()


def _like(default, value):
    if isinstance(default, bool):
        return value if isinstance(value, bool) else str(value).strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _parse_value(default, text: str):
    text = text.strip()
    if isinstance(default, tuple) and not (default and isinstance(default[0], tuple)):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        proto = default[0] if default else ""
        return tuple(_parse_value(proto, p) for p in parts)
    if default is None or isinstance(default, tuple):
        return None if text.lower() in ("", "none") else tuple(tuple(p) for p in json.loads(text))
    if isinstance(default, str):
        return text
    if isinstance(default, (int, float)) and text.lower() in ("inf", "infinity"):
        return math.inf
    return _like(default, text)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return json.dumps([list(p) for p in value])
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_SECTIONS = {"scenario": ScenarioConfig, "solver": AmpConfig, "detector": DetectorConfig}


def config_to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    for sec in _SECTIONS:
        cp[sec] = {k: _format_value(v) for k, v in asdict(getattr(cfg, sec)).items()}
    cp["experiment"] = {f.name: _format_value(getattr(cfg, f.name))
                        for f in dataclasses.fields(cfg) if f.name not in _SECTIONS}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_from_ini(text: str, overrides=()) -> ExperimentConfig:
    """Parse an INI config; ``overrides`` are ``section.key=value`` strings."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override {ov!r} is not section.key=value")
        key, val = ov.split("=", 1)
        sec, name = key.strip().split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp[sec][name] = val
    return _build_config(cp)


def _build_config(cp) -> ExperimentConfig:
    defaults = ExperimentConfig()
    parts = {}
    try:
        for sec, cls in _SECTIONS.items():
            base = getattr(defaults, sec)
            kw = {}
            fields = {f.name for f in dataclasses.fields(cls)}
            for name, text in (cp[sec].items() if cp.has_section(sec) else []):
                if name not in fields:
                    raise ConfigError(f"unknown key {sec}.{name}")
                kw[name] = _parse_value(getattr(base, name), text)
            parts[sec] = dataclasses.replace(base, **kw)
        exp_fields = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(_SECTIONS)
        for name, text in (cp["experiment"].items() if cp.has_section("experiment") else []):
            if name not in exp_fields:
                raise ConfigError(f"unknown key experiment.{name}")
            default = getattr(defaults, name)
            if name == "sweep_values":
                parts[name] = tuple(float(v) if "." in v or "e" in v.lower() else int(v)
                                    for v in (p.strip() for p in text.split(",")) if v)
            else:
                parts[name] = _parse_value(default, text)
        for sec in cp.sections():
            if sec not in _SECTIONS and sec != "experiment":
                raise ConfigError(f"unknown section [{sec}]")
        return ExperimentConfig(**parts)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=()) -> ExperimentConfig:
    return config_from_ini(Path(path).read_text(encoding="utf-8"), overrides)


def full_preset() -> ExperimentConfig:
    """Full-size setup: 7 cells x 500 users, 3000 runs."""
    return ExperimentConfig(
        scenario=ScenarioConfig(n_cells=7, users_per_cell=500, pilot_length=300, antennas=8),
        solver=AmpConfig(t_max=200, epsilon=1e-5),
        trials=3000,
    )


def desk_preset() -> ExperimentConfig:
    """Reduced setup: 7 cells x 50 users, G = 60, 200 paired trials."""
    return ExperimentConfig(
        scenario=ScenarioConfig(n_cells=7, users_per_cell=50, pilot_length=60, antennas=8),
        solver=AmpConfig(t_max=200, epsilon=1e-5),
        trials=200,
    )


PRESETS = {"full": full_preset, "desk": desk_preset}


# --------------------------------------------------------------------------
# deployments

def run_baseline(observation: Observation, S, home_cell, amp_cfg: AmpConfig | None = None,
                 det_cfg: DetectorConfig = DetectorConfig()) -> DetectionResult:
    """Per-cell MMV-AMP using only own-cell pilots; other cells' users act as noise."""
    S = np.asarray(S)
    home_cell = np.asarray(home_cell)
    K = S.shape[1]
    B = observation.n_aps
    M_c = observation.per_ap[0].shape[1]
    alpha = np.zeros(K, dtype=np.int8)
    X_hat = np.zeros((K, B * M_c), dtype=complex)
    belief = np.zeros(K)
    iters = []
    for b, R in enumerate(observation.per_ap):
        users = np.flatnonzero(home_cell == b)
        # contiguous copy so BLAS sums in the same order as the joint solve
        res = run_mmv_amp(R, np.ascontiguousarray(S[:, users]), amp_cfg, refine="row")
        a = bi_ad_rows(res.pi, det_cfg)
        alpha[users] = a
        X_hat[users, b * M_c:(b + 1) * M_c] = np.where(a[:, None] == 1, res.x_hat, 0)
        belief[users] = res.pi.mean(axis=1)
        iters.append(res.iters)
    out = DetectionResult(alpha, X_hat, max(iters), belief)
    out.extra.update(fronthaul_scalars=0, iters_per_cell=iters)
    return out


def run_deployment(dep: Deployment, scn: Scenario, cfg: ExperimentConfig, **kw) -> DetectionResult:
    home = scn.population.home_cell
    if dep.kind == "cloud":
        return cloud_detect(concatenate(scn.observation, scn.S), home, cfg.solver, cfg.detector, **kw)
    if dep.kind == "fog":
        assoc = associate_faps(scn.population, scn.layout, dep.n_co)
        return run_fog(scn.observation, scn.S, assoc, home, cfg.solver, cfg.detector, stop=cfg.fog_stop, **kw)
    if dep.kind == "baseline":
        return run_baseline(scn.observation, scn.S, home, cfg.solver, cfg.detector)
    raise ConfigError(f"unknown deployment {dep.kind!r}")


# --------------------------------------------------------------------------
# trials

@dataclass
class TrialMetrics:
    deployment: str
    pe: float
    miss: float
    false_alarm: float
    nmse_db: float
    nmse_active_db: float
    iters: int
    wall_time: float
    fronthaul_scalars: int
    scenario: str  # content hash of the shared scenario
    value: object = None
    trial: int = -1
    error: str | None = None


def trial_seed(base_seed: int, trial: int) -> np.random.SeedSequence:
    """Independent, worker-count-agnostic stream for one trial index."""
    return np.random.SeedSequence(base_seed, spawn_key=(trial,))


def evaluate(dep: Deployment, scn: Scenario, cfg: ExperimentConfig) -> TrialMetrics:
    t0 = time.perf_counter()
    res = run_deployment(dep, scn, cfg)
    dt = time.perf_counter() - t0
    alpha = scn.population.activity
    er = error_probability(res.alpha_hat, alpha)
    return TrialMetrics(dep.tag, er.pe, er.miss, er.false_alarm, nmse_db(res.X_hat, scn.X),
                        nmse_active_db(res.X_hat, scn.X, alpha) if alpha.any() else float("nan"),
                        res.iters, dt, int(res.extra.get("fronthaul_scalars", 0)), scn.digest())


def run_trial(task) -> list:
    """Build one scenario and run every deployment on it."""
    value, trial, scn_cfg, deps, cfg = task
    with threadpool_limits(1):
        scn = build_scenario(scn_cfg, trial_seed(cfg.base_seed, trial))
        out = []
        for dep in deps:
            try:
                m = evaluate(dep, scn, cfg)
            except Exception as exc:  # noqa: BLE001 - recorded per fail_policy
                if cfg.fail_policy == "abort":
                    raise
                log.warning("trial %d (%s=%s) %s failed: %s", trial, cfg.sweep_var, value, dep.tag, exc)
                m = TrialMetrics(dep.tag, *[math.nan] * 5, 0, 0.0, 0, scn.digest(), error=repr(exc))
            m.value, m.trial = value, trial
            out.append(m)
    return out


@dataclass
class AggregateRow:
    sweep_var: str
    value: object
    deployment: str
    trials: int
    pe_mean: float
    pe_stderr: float
    nmse_mean_db: float
    nmse_stderr_db: float
    iters_mean: float
    fronthaul_scalars: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    trials: list
    failures: list


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else math.nan
    return float(np.mean(x)), se


def aggregate(cfg: ExperimentConfig, trials: list) -> list:
    rows = []
    order = []
    groups = {}
    for m in trials:
        key = (m.value, m.deployment)
        if key not in groups:
            order.append(key)
            groups[key] = []
        if m.error is None:
            groups[key].append(m)
    for key in order:
        ms = sorted(groups[key], key=lambda m: m.trial)
        pe = _mean_se([m.pe for m in ms])
        nm = _mean_se([m.nmse_db for m in ms])
        rows.append(AggregateRow(cfg.sweep_var, key[0], key[1], len(ms), pe[0], pe[1], nm[0], nm[1],
                                 _mean_se([m.iters for m in ms])[0],
                                 _mean_se([m.fronthaul_scalars for m in ms])[0]))
    return rows


def run_experiment(cfg: ExperimentConfig, workers: int = 1, progress=None) -> ExperimentResult:
    """Run every (sweep point, trial) and aggregate per deployment.

    Output is independent of ``workers``: each trial has its own seed stream
    and results are reduced in (sweep point, trial, deployment) order.
    """
    tasks = [(value, t, scn_cfg, deps, cfg)
             for value, scn_cfg, deps in cfg.points() for t in range(cfg.trials)]
    results = []
    if workers <= 1:
        for i, task in enumerate(tasks):
            results.append(run_trial(task))
            if progress:
                progress(i + 1, len(tasks))
    else:
        with ProcessPoolExecutor(workers) as ex:
            for i, r in enumerate(ex.map(run_trial, tasks, chunksize=max(1, len(tasks) // (8 * workers)))):
                results.append(r)
                if progress:
                    progress(i + 1, len(tasks))
    flat = [m for r in results for m in r]
    failures = [m for m in flat if m.error is not None]
    return ExperimentResult(cfg, aggregate(cfg, flat), flat, failures)


# --------------------------------------------------------------------------
# output

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_results(result: ExperimentResult, out_dir, name="results") -> dict:
    """Write the aggregate CSV, a per-trial CSV and the reproduction JSON."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out_dir / f"{name}.csv", "trials": out_dir / f"{name}_trials.csv",
                 "json": out_dir / f"{name}.json"}
        write_csv(paths["csv"], CSV_COLUMNS, [
            [r.sweep_var, _fmt(r.value), r.deployment, r.trials, _fmt(r.pe_mean), _fmt(r.pe_stderr),
             _fmt(r.nmse_mean_db), _fmt(r.nmse_stderr_db), _fmt(r.iters_mean), _fmt(r.fronthaul_scalars)]
            for r in result.rows])
        write_csv(paths["trials"], TRIAL_COLUMNS, [
            [result.config.sweep_var, _fmt(m.value), m.trial, m.deployment, m.scenario, _fmt(m.pe), _fmt(m.miss),
             _fmt(m.false_alarm), _fmt(m.nmse_db), _fmt(m.nmse_active_db), m.iters, m.fronthaul_scalars]
            for m in result.trials])
        meta = {
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "config_ini": config_to_ini(result.config),
            "base_seed": result.config.base_seed,
            "trial_seeds": {"scheme": "SeedSequence(base_seed, spawn_key=(trial,))",
                            "trials": list(range(result.config.trials))},
            "failures": [{"value": m.value, "trial": m.trial, "deployment": m.deployment, "error": m.error}
                         for m in result.failures],
        }
        paths["json"].write_text(json.dumps(meta, indent=2, default=str) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write results to {out_dir}: {exc}") from exc
    return paths


def config_from_json(path) -> ExperimentConfig:
    """Recover the exact configuration from a results JSON file."""
    meta = json.loads(Path(path).read_text(encoding="utf-8"))
    return config_from_ini(meta["config_ini"])
