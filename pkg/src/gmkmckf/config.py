"""JSON experiment configuration for the manipulator Monte Carlo harness.

Every section is optional and falls back to the defaults below; unknown keys
raise ``ConfigError``. Bandwidths accept the string ``"inf"`` for an
unbounded channel since JSON has no infinity literal.

Schema (defaults shown)::

    {
      "name": "experiment",
      "steps": 1000,                  # samples per run (T = 0.01 s -> 10 s)
      "runs": 100,                    # Monte Carlo count M
      "seed": 2024,                   # run r draws noise from SeedSequence(seed, spawn_key=(r, 0))
      "mode": "closed_loop",          # or "open_loop" (shared truth, oracle-state controller)
      "workers": 1,                   # process pool size
      "divergence_threshold": 1.0,    # angle-estimate RMSE (deg) above which a run is divergent
      "plant": {"I_m": 0.1, "b_m": 1.0, "k_m": 0.1, "mass": 1.0, "gravity": 1.0,
                "length": 1.0, "T": 0.01},
      "controller": {"kp": 100.0, "kd": 10.0, "amplitude": 15.0, "omega": 1.2566...},
      "disturbance": {"amplitude": 50.0, "on_step": 400, "off_step": 600},
      "noise": {"process": [w_d, w_theta_dot, w_theta], "measurement": v},
      "filter": {"Q_d": 0.01, "Q_x": [1e-4, 1e-4], "R": 1e-4, "P0": [1, 1, 1],
                 "x0": [0, 0, 0]},
      "observers": [{"name": "KF-DOB", "type": "kf"}, ...],
      "sweep": {"observer": null, "runs": null},
      "bounds": {"step": 100, "gamma": null, "eta": 0.5},
      "output": {"dir": null, "per_run_csv": true}
    }

Observer entries by ``type``:

* ``kf``: no parameters.
* ``eso``: ``omega0`` (rad/s) or ``gain`` (3 numbers).
* ``mckf``: ``sigma``, ``m_iter``, ``eps_stop``.
* ``gmkmckf``: ``alpha``, ``betas`` (4 values, process channels first),
  ``m_iter``, ``eps_stop``.
* ``pf``: ``particles``, optional ``process`` (3 noise specs) and
  ``measurement`` (1 spec); both default to the ``noise`` section.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .correntropy import KernelConfig
from .noise import Gaussian, Laplace, Zero, noise_from_dict
from .plant import ControllerConfig, DisturbanceProfile, PlantConfig


class ConfigError(ValueError):
    pass


NOISE_CHANNELS = ("w_d", "w_theta_dot", "w_theta", "v")
OBSERVER_TYPES = ("kf", "eso", "mckf", "gmkmckf", "pf")
MODES = ("closed_loop", "open_loop")

_OBSERVER_KEYS = {
    "kf": set(),
    "eso": {"omega0", "gain"},
    "mckf": {"sigma", "m_iter", "eps_stop"},
    "gmkmckf": {"alpha", "betas", "m_iter", "eps_stop"},
    "pf": {"particles", "process", "measurement"},
}

_TOP_KEYS = {"name", "steps", "runs", "seed", "mode", "workers", "divergence_threshold",
             "plant", "controller", "disturbance", "noise", "filter", "observers",
             "sweep", "bounds", "output"}


def _check_keys(d: dict, allowed, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _beta_value(b) -> float:
    if isinstance(b, str):
        if b.lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"bandwidth must be a number or 'inf', got {b!r}")
    return float(b)


def _beta_json(b: float):
    return "inf" if math.isinf(b) else b


@dataclass(frozen=True)
class ObserverSpec:
    """One observer entry: a unique display ``name``, a ``type`` tag and its parameters."""

    name: str
    type: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ObserverSpec":
        d = dict(d)
        name, kind = d.pop("name", None), d.pop("type", None)
        if not isinstance(name, str) or not name:
            raise ConfigError("every observer needs a non-empty name")
        if kind not in OBSERVER_TYPES:
            raise ConfigError(f"observer {name!r}: unknown type {kind!r}")
        _check_keys(d, _OBSERVER_KEYS[kind], f"observer {name!r}")
        spec = cls(name, kind, d)
        spec.validate()
        return spec

    def validate(self):
        p = self.params
        if self.type == "gmkmckf":
            betas = tuple(_beta_value(b) for b in p.get("betas", (1.0, 1e8, 1e8, 1e8)))
            if len(betas) != 4:
                raise ConfigError(f"observer {self.name!r}: need 4 bandwidths, got {len(betas)}")
            KernelConfig(float(p.get("alpha", 2.0)), betas)
        if self.type == "mckf" and not float(p.get("sigma", 30.0)) > 0:
            raise ConfigError(f"observer {self.name!r}: sigma must be positive")
        if self.type in ("gmkmckf", "mckf"):
            m_iter = p.get("m_iter", 5)
            if int(m_iter) != m_iter or m_iter < 1:
                raise ConfigError(f"observer {self.name!r}: m_iter must be a positive integer")
        if self.type == "pf" and int(p.get("particles", 1000)) < 1:
            raise ConfigError(f"observer {self.name!r}: need at least one particle")

    def kernel(self) -> KernelConfig:
        p = self.params
        betas = tuple(_beta_value(b) for b in p.get("betas", (1.0, 1e8, 1e8, 1e8)))
        return KernelConfig(float(p.get("alpha", 2.0)), betas)

    def with_kernel(self, alpha: float, beta1: float, name: Optional[str] = None) -> "ObserverSpec":
        """Copy of a ``gmkmckf`` entry with ``alpha`` and the first bandwidth replaced."""
        if self.type != "gmkmckf":
            raise ConfigError("only gmkmckf observers have a kernel to vary")
        params = copy.deepcopy(self.params)
        betas = list(params.get("betas", (1.0, 1e8, 1e8, 1e8)))
        betas[0] = beta1
        params["alpha"], params["betas"] = alpha, betas
        return ObserverSpec(name or self.name, "gmkmckf", params)

    def to_dict(self) -> dict:
        out = {"name": self.name, "type": self.type}
        for k, v in sorted(self.params.items()):
            if k == "betas":
                v = [_beta_json(_beta_value(b)) for b in v]
            out[k] = v
        return out


@dataclass(frozen=True)
class FilterSettings:
    """Shared filter noise model and initialization for the model-based observers."""

    Q_d: float = 0.01
    Q_x: tuple = (1e-4, 1e-4)
    R: float = 1e-4
    P0: tuple = (1.0, 1.0, 1.0)
    x0: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.Q_d >= 0 and self.R > 0):
            raise ConfigError("filter Q_d must be nonnegative and R positive")
        if len(self.Q_x) != 2 or min(self.Q_x) < 0:
            raise ConfigError("filter Q_x needs two nonnegative entries")
        if len(self.P0) != 3 or min(self.P0) <= 0:
            raise ConfigError("filter P0 needs three positive entries")
        if len(self.x0) != 3:
            raise ConfigError("filter x0 needs three entries")

    @property
    def P0_matrix(self) -> np.ndarray:
        return np.diag(np.asarray(self.P0, dtype=float))


def default_observers() -> list:
    return [
        ObserverSpec("KF-DOB", "kf"),
        ObserverSpec("ESO", "eso", {"omega0": 30.0}),
        ObserverSpec("MCKF", "mckf", {"sigma": 30.0, "m_iter": 5}),
        ObserverSpec("GMKMCKF1", "gmkmckf", {"alpha": 1.6, "betas": [1.0, 1e8, 1e8, 1e8], "m_iter": 5}),
        ObserverSpec("GMKMCKF2", "gmkmckf", {"alpha": 2.0, "betas": [1.0, 1e8, 1e8, 1e8], "m_iter": 5}),
        ObserverSpec("PF", "pf", {"particles": 1000}),
    ]


def laplace_noise() -> dict:
    s = math.sqrt(2) / 2
    return {"w_d": Laplace(0.0, 0.1 * s), "w_theta_dot": Laplace(0.0, 0.01 * s),
            "w_theta": Laplace(0.0, 0.01 * s), "v": Laplace(0.0, 0.01 * s)}


def gaussian_noise() -> dict:
    return {"w_d": Gaussian(0.0, 0.01), "w_theta_dot": Gaussian(0.0, 1e-4),
            "w_theta": Gaussian(0.0, 1e-4), "v": Gaussian(0.0, 1e-4)}


@dataclass
class ExperimentConfig:
    """Validated experiment description; build with :meth:`from_dict` or :func:`load_config`."""

    name: str = "experiment"
    steps: int = 1000
    runs: int = 100
    seed: int = 2024
    mode: str = "closed_loop"
    workers: int = 1
    divergence_threshold: float = 1.0
    plant: PlantConfig = field(default_factory=PlantConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    disturbance: DisturbanceProfile = field(default_factory=DisturbanceProfile)
    noise: dict = field(default_factory=laplace_noise)
    filter: FilterSettings = field(default_factory=FilterSettings)
    observers: list = field(default_factory=default_observers)
    sweep_observer: Optional[str] = None
    sweep_runs: Optional[int] = None
    bounds_step: int = 100
    bounds_gamma: Optional[float] = None
    bounds_eta: float = 0.5
    out_dir: Optional[str] = None
    per_run_csv: bool = True

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigError("steps must be a positive integer")
        if int(self.runs) != self.runs or self.runs < 1:
            raise ConfigError("runs must be a positive integer")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if int(self.workers) < 1:
            raise ConfigError("workers must be at least 1")
        if not self.divergence_threshold > 0:
            raise ConfigError("divergence_threshold must be positive")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if set(self.noise) != set(NOISE_CHANNELS):
            raise ConfigError(f"noise needs exactly the channels {NOISE_CHANNELS}")
        if not self.observers:
            raise ConfigError("at least one observer is required")
        names = [o.name for o in self.observers]
        if len(set(names)) != len(names):
            raise ConfigError("observer names must be unique")
        if self.bounds_step < 0 or self.bounds_step >= self.steps:
            raise ConfigError("bounds step must lie inside the run")
        if not 0 < self.bounds_eta < 1:
            raise ConfigError("bounds eta must lie in (0, 1)")
        self.steps, self.runs, self.seed = int(self.steps), int(self.runs), int(self.seed)
        self.workers = int(self.workers)

    def observer(self, name: str) -> ObserverSpec:
        for o in self.observers:
            if o.name == name:
                return o
        raise ConfigError(f"no observer named {name!r}")

    def replace(self, **changes) -> "ExperimentConfig":
        new = copy.copy(self)
        for k, v in changes.items():
            if not hasattr(new, k):
                raise ConfigError(f"unknown field {k!r}")
            setattr(new, k, v)
        new.__post_init__()
        return new

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys(d, _TOP_KEYS, "config")
        kw: dict[str, Any] = {}
        for key in ("name", "steps", "runs", "seed", "mode", "workers", "divergence_threshold"):
            if key in d:
                kw[key] = d[key]
        sections = {"plant": PlantConfig, "controller": ControllerConfig,
                    "disturbance": DisturbanceProfile}
        for key, kind in sections.items():
            if key in d:
                allowed = kind.__dataclass_fields__
                _check_keys(d[key], allowed, key)
                try:
                    kw[key] = kind(**d[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{key}: {exc}") from exc
        if "noise" in d:
            _check_keys(d["noise"], {"process", "measurement"}, "noise")
            noise = laplace_noise()
            try:
                if "process" in d["noise"]:
                    proc = d["noise"]["process"]
                    if not isinstance(proc, list) or len(proc) != 3:
                        raise ConfigError("noise.process needs 3 specs [w_d, w_theta_dot, w_theta]")
                    noise.update({k: noise_from_dict(v) for k, v in zip(NOISE_CHANNELS[:3], proc)})
                if "measurement" in d["noise"]:
                    noise["v"] = noise_from_dict(d["noise"]["measurement"])
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"noise: {exc}") from exc
            kw["noise"] = noise
        if "filter" in d:
            f = d["filter"]
            _check_keys(f, FilterSettings.__dataclass_fields__, "filter")
            f = {k: tuple(float(x) for x in v) if isinstance(v, list) else float(v)
                 for k, v in f.items()}
            kw["filter"] = FilterSettings(**f)
        if "observers" in d:
            if not isinstance(d["observers"], list):
                raise ConfigError("observers must be a list")
            kw["observers"] = [ObserverSpec.from_dict(o) for o in d["observers"]]
        if "sweep" in d:
            _check_keys(d["sweep"], {"observer", "runs"}, "sweep")
            kw["sweep_observer"] = d["sweep"].get("observer")
            kw["sweep_runs"] = d["sweep"].get("runs")
        if "bounds" in d:
            _check_keys(d["bounds"], {"step", "gamma", "eta"}, "bounds")
            b = d["bounds"]
            kw["bounds_step"] = int(b.get("step", 100))
            kw["bounds_gamma"] = b.get("gamma")
            kw["bounds_eta"] = float(b.get("eta", 0.5))
        if "output" in d:
            _check_keys(d["output"], {"dir", "per_run_csv"}, "output")
            kw["out_dir"] = d["output"].get("dir")
            kw["per_run_csv"] = bool(d["output"].get("per_run_csv", True))
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        """JSON-ready echo; ``from_dict(to_dict())`` rebuilds an equal config."""
        f = self.filter
        return {
            "name": self.name, "steps": self.steps, "runs": self.runs, "seed": self.seed,
            "mode": self.mode, "workers": self.workers,
            "divergence_threshold": self.divergence_threshold,
            "plant": dict(self.plant.__dict__),
            "controller": dict(self.controller.__dict__),
            "disturbance": dict(self.disturbance.__dict__),
            "noise": {"process": [self.noise[k].to_dict() for k in NOISE_CHANNELS[:3]],
                      "measurement": self.noise["v"].to_dict()},
            "filter": {"Q_d": f.Q_d, "Q_x": list(f.Q_x), "R": f.R, "P0": list(f.P0),
                       "x0": list(f.x0)},
            "observers": [o.to_dict() for o in self.observers],
            "sweep": {"observer": self.sweep_observer, "runs": self.sweep_runs},
            "bounds": {"step": self.bounds_step, "gamma": self.bounds_gamma,
                       "eta": self.bounds_eta},
            "output": {"dir": self.out_dir, "per_run_csv": self.per_run_csv},
        }


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)


def laplace_preset(**changes) -> ExperimentConfig:
    """Heavy-tailed regime: Laplace nominal noise, five fixed-point iterations."""
    return ExperimentConfig(name="laplace", noise=laplace_noise()).replace(**changes)


def gaussian_preset(**changes) -> ExperimentConfig:
    """Gaussian regime: matched Gaussian nominal noise, three fixed-point iterations."""
    obs = []
    for o in default_observers():
        if o.type in ("gmkmckf", "mckf"):
            o = ObserverSpec(o.name, o.type, {**o.params, "m_iter": 3})
        obs.append(o)
    return ExperimentConfig(name="gaussian", noise=gaussian_noise(), observers=obs).replace(**changes)


def silent_noise() -> dict:
    return {k: Zero() for k in NOISE_CHANNELS}
