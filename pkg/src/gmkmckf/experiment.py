"""Monte Carlo harness: closed-loop manipulator runs, pooled RMSE, sweeps and bound reports.

Seeding: run ``r`` draws its plant and sensor noise from
``SeedSequence(seed, spawn_key=(r, 0))`` and observer ``i`` (the PF) from
``SeedSequence(seed, spawn_key=(r, 1, i))``, so any single run can be replayed
from ``(seed, r)`` alone and results do not depend on the worker count.
All observers of a run see the same noise draws.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .baselines import EsoConfig, EsoObserver, MckfObserver, ParticleFilterObserver, PfConfig
from .config import NOISE_CHANNELS, ExperimentConfig, ObserverSpec
from .convergence import ConvergenceQuery, certify
from .filters import (FilterState, GmkmckfConfig, GmkmckfObserver, KalmanObserver,
                      build_regression)
from .noise import Gaussian, Zero, noise_from_dict
from .plant import controller_step, discretize, disturbance_signal, plant_step

RMSE_KEYS = ("x1", "x2", "x3", "tracking")
CSV_COLUMNS = ("observer", "step", "time_s", "d", "theta_dot", "theta", "theta_ref",
               "d_hat", "theta_dot_hat", "theta_hat", "err_d", "err_theta_dot", "err_theta",
               "tracking_error", "iterations")


class RunFailure(RuntimeError):
    """A Monte Carlo run raised or produced a non-finite estimate."""

    def __init__(self, observer: str, run: int, seed: int, cause: str):
        super().__init__(f"observer {observer!r} failed in run {run} (base seed {seed}; "
                         f"replay with SeedSequence({seed}, spawn_key=({run}, 0))): {cause}")
        self.observer, self.run, self.seed, self.cause = observer, run, seed, cause


def rmse(errors) -> float:
    """Root mean square of a nonempty error sequence (any shape, all entries pooled)."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("rmse of an empty sequence")
    return float(np.sqrt(np.mean(e ** 2)))


def observer_model(cfg: ExperimentConfig):
    f = cfg.filter
    _, aug = discretize(cfg.plant, Q_x=np.diag(f.Q_x), R=np.atleast_2d(f.R), Q_d=f.Q_d)
    return aug.linear()


def _pf_specs(spec: ObserverSpec, cfg: ExperimentConfig):
    p = spec.params
    f = cfg.filter
    nominal = [Gaussian(0.0, f.Q_d), Gaussian(0.0, f.Q_x[0]), Gaussian(0.0, f.Q_x[1])]
    if "process" in p:
        process = [noise_from_dict(d) for d in p["process"]]
    else:
        # a silent channel falls back to the filter's nominal Gaussian
        process = [nominal[i] if isinstance(cfg.noise[k], Zero) else cfg.noise[k]
                   for i, k in enumerate(NOISE_CHANNELS[:3])]
    if "measurement" in p:
        measurement = [noise_from_dict(d) for d in p["measurement"]]
    else:
        v = cfg.noise["v"]
        measurement = [Gaussian(0.0, f.R) if isinstance(v, Zero) else v]
    return process, measurement


def build_observer(spec: ObserverSpec, cfg: ExperimentConfig, model, rng: np.random.Generator):
    """Instantiate the observer described by ``spec`` on the augmented observer model."""
    p = spec.params
    x0 = np.asarray(cfg.filter.x0, dtype=float)
    P0 = cfg.filter.P0_matrix
    if spec.type == "kf":
        return KalmanObserver(model, x0, P0)
    if spec.type == "eso":
        gain = p.get("gain")
        eso = EsoConfig(float(p.get("omega0", 30.0)), None if gain is None else np.asarray(gain))
        return EsoObserver(model, x0, cfg.plant.T, eso)
    if spec.type == "mckf":
        return MckfObserver(model, x0, P0, float(p.get("sigma", 30.0)), int(p.get("m_iter", 5)),
                            float(p.get("eps_stop", 1e-6)))
    if spec.type == "gmkmckf":
        gcfg = GmkmckfConfig(spec.kernel(), int(p.get("m_iter", 5)), float(p.get("eps_stop", 1e-6)))
        return GmkmckfObserver(model, x0, P0, gcfg)
    if spec.type == "pf":
        process, measurement = _pf_specs(spec, cfg)
        pcfg = PfConfig(int(p.get("particles", 1000)), tuple(process), tuple(measurement))
        return ParticleFilterObserver(model, x0, P0, pcfg, rng)
    raise ValueError(f"unknown observer type {spec.type!r}")


def draw_noise(cfg: ExperimentConfig, run: int):
    """``(W, V)``: process noise (steps, 3) ordered ``[w_d, w_theta_dot, w_theta]`` and sensor noise (steps,)."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(run, 0)))
    cols = [np.asarray(cfg.noise[k].sample(rng, cfg.steps), dtype=float) for k in NOISE_CHANNELS]
    return np.column_stack(cols[:3]), cols[3]


def _observer_rng(cfg: ExperimentConfig, run: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(run, 1, index)))


@dataclass
class Trace:
    """Per-step record of one observer in one run."""

    truth: np.ndarray
    estimate: np.ndarray
    reference: np.ndarray
    iterations: np.ndarray
    wall_time: float = 0.0

    @property
    def errors(self) -> np.ndarray:
        return self.truth - self.estimate

    @property
    def tracking(self) -> np.ndarray:
        return self.reference - self.truth[:, 2]


def _initial_truth(cfg, W):
    return np.array([disturbance_signal(0, cfg.disturbance, W[0, 0]), 0.0, 0.0])


def simulate_closed_loop(cfg: ExperimentConfig, obs, W, V, model=None, capture_step=None):
    """Run one observer in its own control loop; returns a :class:`Trace`.

    With ``capture_step = k`` the a-priori observer state and the measurement
    at sample k are also returned, as ``(trace, (prior, y))``.
    """
    model = observer_model(cfg) if model is None else model
    steps, plant, ctrl = cfg.steps, cfg.plant, cfg.controller
    truth = np.empty((steps, 3))
    est = np.empty((steps, 3))
    ref = np.empty(steps)
    iters = np.empty(steps, dtype=int)
    captured = None
    x = _initial_truth(cfg, W)
    c = model.C[0]
    spent = 0.0
    for k in range(steps):
        y = np.array([c @ x + V[k]])
        if capture_step == k:
            captured = (obs.state.copy(), y.copy())
        t0 = time.perf_counter()
        obs.update(y)
        spent += time.perf_counter() - t0
        xh = np.array(obs.estimate, dtype=float)
        if not np.all(np.isfinite(xh)):
            raise FloatingPointError(f"non-finite estimate at step {k}")
        truth[k], est[k], iters[k] = x, xh, obs.iterations
        ref[k] = ctrl.reference(k * plant.T)[0]
        tau, u = controller_step(xh, k, plant, ctrl)
        t0 = time.perf_counter()
        obs.predict([u])
        spent += time.perf_counter() - t0
        if k + 1 < steps:
            x = plant_step(x, k, plant, cfg.disturbance, tau, W[k + 1], model)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite plant state at step {k + 1}")
    trace = Trace(truth, est, ref, iters, spent)
    return trace if capture_step is None else (trace, captured)


def simulate_truth(cfg: ExperimentConfig, W, V, model=None):
    """Shared truth for open-loop mode: the controller is fed the true state.

    Returns:
        ``(truth, measurements, inputs, reference)``.
    """
    model = observer_model(cfg) if model is None else model
    steps, plant, ctrl = cfg.steps, cfg.plant, cfg.controller
    truth = np.empty((steps, 3))
    ys = np.empty(steps)
    us = np.empty(steps)
    ref = np.empty(steps)
    x = _initial_truth(cfg, W)
    for k in range(steps):
        truth[k] = x
        ys[k] = model.C[0] @ x + V[k]
        ref[k] = ctrl.reference(k * plant.T)[0]
        tau, us[k] = controller_step(x, k, plant, ctrl)
        if k + 1 < steps:
            x = plant_step(x, k, plant, cfg.disturbance, tau, W[k + 1], model)
    return truth, ys, us, ref


def simulate_open_loop(obs, truth, ys, us, ref) -> Trace:
    steps = len(ys)
    est = np.empty((steps, 3))
    iters = np.empty(steps, dtype=int)
    spent = 0.0
    for k in range(steps):
        t0 = time.perf_counter()
        obs.update([ys[k]])
        xh = np.array(obs.estimate, dtype=float)
        obs.predict([us[k]])
        spent += time.perf_counter() - t0
        if not np.all(np.isfinite(xh)):
            raise FloatingPointError(f"non-finite estimate at step {k}")
        est[k], iters[k] = xh, obs.iterations
    return Trace(truth, est, ref, iters, spent)


@dataclass
class RunSummary:
    """Reduction of one (run, observer) pair."""

    sq: np.ndarray
    iter_sum: int
    iter_max: int
    diverged: bool
    failed: bool
    wall_time: float


def _summarize(trace: Trace, threshold: float) -> RunSummary:
    e = trace.errors
    sq = np.concatenate([np.sum(e ** 2, axis=0), [np.sum(trace.tracking ** 2)]])
    diverged = math.sqrt(sq[2] / len(e)) > threshold
    return RunSummary(sq, int(trace.iterations.sum()), int(trace.iterations.max()), diverged,
                      False, trace.wall_time)


def write_run_csv(path, cfg: ExperimentConfig, traces: dict):
    """Long-format per-run table, one row per (observer, step); angles in deg, torques in N*m."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for name, tr in traces.items():
            err = tr.errors
            for k in range(len(tr.reference)):
                w.writerow([name, k, _num(round(k * cfg.plant.T, 12)), *map(_num, tr.truth[k]),
                            _num(tr.reference[k]), *map(_num, tr.estimate[k]), *map(_num, err[k]),
                            _num(tr.tracking[k]), int(tr.iterations[k])])


def _num(v) -> str:
    return repr(float(v))


def run_single(cfg: ExperimentConfig, run: int, on_failure: str = "raise", csv_dir=None):
    """Simulate every observer of ``cfg`` for Monte Carlo run ``run``.

    Returns:
        ``{observer name: RunSummary}``. With ``on_failure="record"`` a failing
        observer is marked ``failed`` instead of raising :class:`RunFailure`.
    """
    model = observer_model(cfg)
    W, V = draw_noise(cfg, run)
    shared = simulate_truth(cfg, W, V, model) if cfg.mode == "open_loop" else None
    out, traces = {}, {}
    for i, spec in enumerate(cfg.observers):
        try:
            obs = build_observer(spec, cfg, model, _observer_rng(cfg, run, i))
            if shared is None:
                trace = simulate_closed_loop(cfg, obs, W, V, model)
            else:
                trace = simulate_open_loop(obs, *shared)
        except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
            if on_failure != "record":
                raise RunFailure(spec.name, run, cfg.seed, f"{type(exc).__name__}: {exc}") from exc
            out[spec.name] = RunSummary(np.zeros(4), 0, 0, True, True, 0.0)
            continue
        out[spec.name] = _summarize(trace, cfg.divergence_threshold)
        traces[spec.name] = trace
    if csv_dir is not None:
        write_run_csv(os.path.join(csv_dir, f"run_{run:04d}.csv"), cfg, traces)
    return out


def _worker(args):
    return run_single(*args)


@dataclass
class ObserverResult:
    """Aggregate of one observer across ``runs`` Monte Carlo runs."""

    rmse: dict
    iterations_mean: float
    iterations_max: int
    diverged_runs: int
    failed_runs: int

    def to_dict(self) -> dict:
        return {"rmse": {k: _json_float(self.rmse[k]) for k in RMSE_KEYS},
                "iterations": {"mean": _json_float(self.iterations_mean), "max": self.iterations_max},
                "diverged_runs": self.diverged_runs, "failed_runs": self.failed_runs}

    @classmethod
    def from_dict(cls, d: dict) -> "ObserverResult":
        r = {k: _from_json_float(d["rmse"][k]) for k in RMSE_KEYS}
        return cls(r, _from_json_float(d["iterations"]["mean"]), d["iterations"]["max"],
                   d["diverged_runs"], d["failed_runs"])


def _json_float(v):
    return None if v is None or not math.isfinite(v) else float(v)


def _from_json_float(v):
    return math.nan if v is None else float(v)


@dataclass
class RunReport:
    """Aggregate Monte Carlo result.

    ``to_json`` is a pure function of the configuration and seed; wall times
    live in ``timing`` and are written to a separate file.
    """

    config: dict
    seed: int
    runs: int
    steps: int
    mode: str
    observers: dict
    timing: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "runs": self.runs, "steps": self.steps, "mode": self.mode,
                "pooling": "sqrt of mean over all steps of all runs",
                "observers": {k: v.to_dict() for k, v in self.observers.items()},
                "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        obs = {k: ObserverResult.from_dict(v) for k, v in d["observers"].items()}
        return cls(d["config"], d["seed"], d["runs"], d["steps"], d["mode"], obs)

    def rmse(self, observer: str, key: str = "x1") -> float:
        return self.observers[observer].rmse[key]


def aggregate(summaries: Sequence[dict], names: Sequence[str], steps: int) -> dict:
    """Pool per-run sums of squares in run order; failed runs are left out."""
    out = {}
    for name in names:
        rows = [s[name] for s in summaries]
        ok = [r for r in rows if not r.failed]
        n = len(ok) * steps
        if ok:
            sq = np.zeros(4)
            for r in ok:
                sq = sq + r.sq
            vals = np.sqrt(sq / n)
            it_mean = sum(r.iter_sum for r in ok) / n
            it_max = max(r.iter_max for r in ok)
        else:
            vals, it_mean, it_max = [math.nan] * 4, math.nan, 0
        out[name] = ObserverResult(dict(zip(RMSE_KEYS, map(float, vals))), float(it_mean), it_max,
                                   sum(r.diverged for r in rows), sum(r.failed for r in rows))
    return out


def run_monte_carlo(cfg: ExperimentConfig, on_failure: str = "raise", csv_dir=None) -> RunReport:
    """Simulate ``cfg.runs`` independent runs and pool the squared errors.

    Args:
        cfg: validated experiment configuration.
        on_failure: ``"raise"`` aborts on the first failing run with its index
            and seed, ``"record"`` counts it as failed and continues.
        csv_dir: directory for ``run_XXXX.csv`` files, or ``None``.
    """
    if on_failure not in ("raise", "record"):
        raise ValueError("on_failure must be 'raise' or 'record'")
    t0 = time.perf_counter()
    args = [(cfg, r, on_failure, csv_dir) for r in range(cfg.runs)]
    if cfg.workers > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            summaries = list(pool.map(_worker, args))
    else:
        summaries = [run_single(*a) for a in args]
    names = [o.name for o in cfg.observers]
    report = RunReport(cfg.to_dict(), cfg.seed, cfg.runs, cfg.steps, cfg.mode,
                       aggregate(summaries, names, cfg.steps))
    report.timing = {
        "total_s": time.perf_counter() - t0,
        "estimation_s_per_run": {n: sum(s[n].wall_time for s in summaries) / cfg.runs for n in names},
    }
    return report


def write_report(report: RunReport, out_dir) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out_dir, "timing.json"), "w", encoding="utf-8") as fh:
        json.dump(report.timing, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ------------------------------------------------------------------ sweep

SWEEP_COLUMNS = ("alpha", "beta1", "rmse_x1", "divergence_rate")


@dataclass
class SweepResult:
    """Long-format sweep table plus the KF-DOB reference RMSE on the same seeds.

    ``rmse_x1`` pools only the non-divergent runs of a cell (NaN if none).
    """

    rows: list
    baseline_rmse_x1: float
    runs: int

    def grid(self, alphas, betas) -> np.ndarray:
        lookup = {(r["alpha"], r["beta1"]): r["rmse_x1"] for r in self.rows}
        return np.array([[lookup[(a, b)] for b in betas] for a in alphas])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([_num(r[c]) for c in SWEEP_COLUMNS])


def parse_range(text: str) -> list:
    """Inclusive grid from ``start:stop:step``, or a single number."""
    parts = text.split(":")
    try:
        nums = [float(p) for p in parts]
    except ValueError as exc:
        raise ValueError(f"bad range {text!r}; expected start:stop:step") from exc
    if len(nums) == 1:
        return nums
    if len(nums) != 3:
        raise ValueError(f"bad range {text!r}; expected start:stop:step")
    a, b, d = nums
    if not d > 0 or b < a:
        raise ValueError(f"bad range {text!r}; need step > 0 and stop >= start")
    count = int(math.floor((b - a) / d + 1e-9)) + 1
    return [round(a + i * d, 12) for i in range(count)]


def _sweep_template(cfg: ExperimentConfig) -> ObserverSpec:
    if cfg.sweep_observer is not None:
        return cfg.observer(cfg.sweep_observer)
    for o in cfg.observers:
        if o.type == "gmkmckf":
            return o
    return ObserverSpec("GMKMCKF", "gmkmckf", {"alpha": 2.0, "betas": [1.0, 1e8, 1e8, 1e8],
                                               "m_iter": 5})


def _pooled_x1(summaries, name, steps):
    good = [s[name] for s in summaries if not (s[name].failed or s[name].diverged)]
    if not good:
        return math.nan
    return float(math.sqrt(sum(r.sq[0] for r in good) / (len(good) * steps)))


def parameter_sweep(cfg: ExperimentConfig, alpha_grid, beta1_grid, runs: Optional[int] = None):
    """Disturbance RMSE over an ``(alpha, beta1)`` grid for the sweep observer.

    Each cell reuses the same run seeds; per-run failures count as divergence.
    """
    alpha_grid, beta1_grid = list(alpha_grid), list(beta1_grid)
    if not alpha_grid or not beta1_grid:
        raise ValueError("sweep grids must be nonempty")
    runs = runs or cfg.sweep_runs or cfg.runs
    template = _sweep_template(cfg)
    base = cfg.replace(runs=runs, observers=[ObserverSpec("KF-DOB", "kf")])
    kf_sums = [run_single(base, r, "record") for r in range(runs)]
    baseline = _pooled_x1(kf_sums, "KF-DOB", cfg.steps)
    rows = []
    for a in alpha_grid:
        for b in beta1_grid:
            spec = template.with_kernel(float(a), float(b), name="cell")
            cell = cfg.replace(runs=runs, observers=[spec])
            sums = [run_single(cell, r, "record") for r in range(runs)]
            bad = sum(s["cell"].failed or s["cell"].diverged for s in sums)
            rows.append({"alpha": float(a), "beta1": float(b),
                         "rmse_x1": _pooled_x1(sums, "cell", cfg.steps),
                         "divergence_rate": bad / runs})
    return SweepResult(rows, baseline, runs)


# ------------------------------------------------------------------ bounds


def bounds_report(cfg: ExperimentConfig) -> list:
    """Convergence certificate for each kernel observer at a nominal step.

    The regression comes from the a-priori state and measurement at sample
    ``cfg.bounds_step`` of run 0, simulated in closed loop with that observer.

    Returns:
        One dict per kernel observer with the certificate fields, the smallest
        configured bandwidth and whether it meets ``recommended_min_beta``.
    """
    model = observer_model(cfg)
    W, V = draw_noise(cfg, 0)
    rows = []
    for i, spec in enumerate(cfg.observers):
        if spec.type not in ("gmkmckf", "mckf"):
            continue
        obs = build_observer(spec, cfg, model, _observer_rng(cfg, 0, i))
        _, (prior, y) = simulate_closed_loop(cfg, obs, W, V, model, capture_step=cfg.bounds_step)
        form = build_regression(FilterState(prior.x, prior.P), model, y)
        kernel = obs.cfg.kernel
        q = ConvergenceQuery.from_regression(form, cfg.bounds_gamma, cfg.bounds_eta, kernel.alpha)
        cert = certify(q)
        row = {"observer": spec.name, "alpha": kernel.alpha, "step": cfg.bounds_step,
               "min_beta": float(min(kernel.betas)), **cert.to_dict()}
        rec = cert.recommended_min_beta
        row["satisfied"] = None if rec is None else bool(min(kernel.betas) >= rec)
        rows.append(row)
    return rows
