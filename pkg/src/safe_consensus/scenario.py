"""Scenario description and its YAML document form."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .consensus import PlatoonReference, ReferenceSignal, SpeedupConfig, reference_from_dict
from .graph import Topology, path_graph
from .model import BicycleParams
from .predictor import PredictorConfig
from .safety import SafetyConfig

SCHEMA_VERSION = 1
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    """Malformed scenario document; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class Follower:
    params: BicycleParams
    state: tuple[float, float, float, float]
    input: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class Scenario:
    followers: tuple[Follower, ...]
    topology: Topology
    reference: ReferenceSignal
    speedups: SpeedupConfig
    predictor: PredictorConfig = PredictorConfig()
    safety: SafetyConfig = SafetyConfig()
    safety_enabled: bool = True
    dt: float = 0.01
    t_end: float = 680.0
    unfiltered: tuple[int, ...] = ()  # followers whose safety filter is switched off
    name: str = "scenario"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= self.dt:
            raise ValueError(f"t_end={self.t_end} must be at least dt={self.dt}")
        if len(self.followers) != self.topology.agent_count - 1:
            raise ValueError(
                f"{len(self.followers)} followers but topology has {self.topology.agent_count - 1}"
            )
        if len(self.speedups.alpha) != len(self.followers):
            raise ValueError("need one speedup factor per follower")
        for f in self.followers:
            if not all(math.isfinite(v) for v in (*f.state, *f.input)):
                raise ValueError(f"non-finite initial condition {f}")

    @property
    def K(self) -> int:
        return len(self.followers)

    @property
    def n_steps(self) -> int:
        # guard against 680/0.01 landing a hair above an integer
        return int(math.ceil(self.t_end / self.dt - 1e-9))

    def with_overrides(self, t_end=None, dt=None, alpha=None, safety=None) -> Scenario:
        changes = {}
        if t_end is not None:
            changes["t_end"] = float(t_end)
        if dt is not None:
            changes["dt"] = float(dt)
        if alpha is not None:
            changes["speedups"] = SpeedupConfig.uniform(alpha, self.K)
        if safety is not None:
            changes["safety_enabled"] = bool(safety)
        return replace(self, **changes)

    def fingerprint(self) -> str:
        blob = json.dumps(scenario_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# -- document schema --------------------------------------------------------
# units: positions m, speeds m/s, accelerations m/s^2, angles rad, times s

_TOP_REQUIRED = {"schema_version", "followers", "reference", "time"}
_TOP_OPTIONAL = {"name", "notes", "topology", "predictor", "safety"}
_FOLLOWER_REQUIRED = {"Lf", "Lr", "state"}
_FOLLOWER_OPTIONAL = {"a_min", "a_max", "gamma_min", "gamma_max", "input", "alpha"}
_TIME_KEYS = {"dt", "t_end"}
_PREDICTOR_KEYS = {"horizon", "rk_rel_tol", "rk_abs_tol", "fd_step"}
_SAFETY_KEYS = {"enabled", "k_v", "q1", "q2", "cbf_gain", "unfiltered"}
_REFERENCE_KEYS = {
    "platoon": {"start", "velocity", "t_switch", "amplitude", "frequency"},
    "constant": {"point"},
    "linear": {"start", "velocity"},
}


def _check_keys(section: dict, where: str, required: set, optional: set = frozenset()):
    if not isinstance(section, dict):
        raise ScenarioError(where, f"expected a mapping, got {type(section).__name__}")
    for k in section:
        if k not in required and k not in optional:
            raise ScenarioError(f"{where}.{k}" if where else k, "unknown key")
    for k in sorted(required):
        if k not in section:
            raise ScenarioError(f"{where}.{k}" if where else k, "missing required key")


def _number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(key, f"expected a number, got {value!r}")
    return float(value)


def _vector(value, n, key):
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ScenarioError(key, f"expected a list of {n} numbers, got {value!r}")
    return tuple(_number(v, f"{key}[{i}]") for i, v in enumerate(value))


def scenario_from_dict(doc: dict) -> Scenario:
    _check_keys(doc, "", _TOP_REQUIRED, _TOP_OPTIONAL)
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {doc['schema_version']!r}")

    if not isinstance(doc["followers"], list) or not doc["followers"]:
        raise ScenarioError("followers", "expected a non-empty list")
    followers, alphas = [], []
    for n, fd in enumerate(doc["followers"]):
        where = f"followers[{n}]"
        _check_keys(fd, where, _FOLLOWER_REQUIRED, _FOLLOWER_OPTIONAL)
        bounds = {k: _number(fd[k], f"{where}.{k}") for k in ("a_min", "a_max", "gamma_min", "gamma_max") if k in fd}
        try:
            params = BicycleParams(_number(fd["Lf"], f"{where}.Lf"), _number(fd["Lr"], f"{where}.Lr"), **bounds)
        except ValueError as exc:
            raise ScenarioError(where, str(exc)) from None
        state = _vector(fd["state"], 4, f"{where}.state")
        u0 = _vector(fd.get("input", [0.0, 0.0]), 2, f"{where}.input")
        followers.append(Follower(params, state, u0))
        alphas.append(_number(fd.get("alpha", 10.0), f"{where}.alpha"))
    K = len(followers)

    topo = doc.get("topology", "path")
    if topo == "path":
        topology = path_graph(K)
    elif isinstance(topo, dict):
        _check_keys(topo, "topology", {"neighbors"})
        try:
            topology = Topology.from_lists(topo["neighbors"])
        except (TypeError, ValueError) as exc:
            raise ScenarioError("topology.neighbors", str(exc)) from None
    else:
        raise ScenarioError("topology", f"expected 'path' or a mapping with neighbors, got {topo!r}")

    ref = doc["reference"]
    if not isinstance(ref, dict) or ref.get("kind") not in _REFERENCE_KEYS:
        raise ScenarioError("reference.kind", f"expected one of {sorted(_REFERENCE_KEYS)}")
    _check_keys(ref, "reference", {"kind"}, _REFERENCE_KEYS[ref["kind"]])
    reference = reference_from_dict(ref)

    time = doc["time"]
    _check_keys(time, "time", _TIME_KEYS)
    pred = doc.get("predictor", {})
    _check_keys(pred, "predictor", set(), _PREDICTOR_KEYS)
    safe = doc.get("safety", {})
    _check_keys(safe, "safety", set(), _SAFETY_KEYS)
    enabled = safe.get("enabled", True)
    if not isinstance(enabled, bool):
        raise ScenarioError("safety.enabled", f"expected true/false, got {enabled!r}")

    try:
        return Scenario(
            followers=tuple(followers),
            topology=topology,
            reference=reference,
            speedups=SpeedupConfig(tuple(alphas)),
            predictor=PredictorConfig(**{k: _number(v, f"predictor.{k}") for k, v in pred.items()}),
            safety=SafetyConfig(**{k: _number(v, f"safety.{k}") for k, v in safe.items()
                                   if k not in ("enabled", "unfiltered")}),
            safety_enabled=enabled,
            dt=_number(time["dt"], "time.dt"),
            t_end=_number(time["t_end"], "time.t_end"),
            unfiltered=tuple(int(i) for i in safe.get("unfiltered", [])),
            name=str(doc.get("name", "scenario")),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("scenario", str(exc)) from None


def scenario_to_dict(sc: Scenario) -> dict:
    followers = []
    for f, alpha in zip(sc.followers, sc.speedups.alpha):
        p = f.params
        followers.append({
            "Lf": p.Lf, "Lr": p.Lr, "a_min": p.a_min, "a_max": p.a_max,
            "gamma_min": p.gamma_min, "gamma_max": p.gamma_max,
            "state": list(f.state), "input": list(f.input), "alpha": alpha,
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "time": {"dt": sc.dt, "t_end": sc.t_end},
        "reference": sc.reference.to_dict(),
        "topology": {"neighbors": [list(n) for n in sc.topology.neighbors]},
        "predictor": {"horizon": sc.predictor.horizon, "rk_rel_tol": sc.predictor.rk_rel_tol,
                      "rk_abs_tol": sc.predictor.rk_abs_tol, "fd_step": sc.predictor.fd_step},
        "safety": {"enabled": sc.safety_enabled, "k_v": sc.safety.k_v, "q1": sc.safety.q1,
                   "q2": sc.safety.q2, "cbf_gain": sc.safety.cbf_gain, "unfiltered": list(sc.unfiltered)},
        "followers": followers,
    }


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists() and (SCENARIO_DIR / f"{path}.yaml").exists():
        path = SCENARIO_DIR / f"{path}.yaml"
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError("document", f"not valid YAML: {exc}") from None
    return scenario_from_dict(doc)


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(sc), encoding="utf-8")


# -- built-in scenarios -----------------------------------------------------

PLATOON_AXLES = ((1.105, 1.738), (1.2, 1.7), (1.5, 1.3), (1.2, 1.4), (1.3, 1.3))
PLATOON_STARTS = ((-50.0, -60.0), (-60.0, -72.0), (-70.0, -84.0), (-80.0, -96.0), (-90.0, -108.0))
# initial speed is a free choice; 3 m/s is the start that keeps the whole
# chain moving at alpha 5 and 10 (faster starts stall the first follower)
PLATOON_SPEED = 3.0


def platoon_scenario(alpha: float = 10.0, t_end: float = 680.0, dt: float = 0.01,
                   safety_enabled: bool = True, speed: float | None = None,
                   heading: float | None = None) -> Scenario:
    """Five-bicycle platoon behind the straight-then-Lissajous reference.

    Initial speed and heading are not given for the platoon; every vehicle
    starts at ``PLATOON_SPEED`` pointing along the reference's first leg.
    """
    ref = PlatoonReference()
    if heading is None:
        heading = math.atan2(ref.velocity[1], ref.velocity[0])
    if speed is None:
        speed = PLATOON_SPEED
    followers = tuple(
        Follower(BicycleParams(Lf, Lr), (z[0], z[1], speed, heading), (0.0, 0.0))
        for (Lf, Lr), z in zip(PLATOON_AXLES, PLATOON_STARTS)
    )
    K = len(followers)
    return Scenario(
        followers=followers,
        topology=path_graph(K),
        reference=ref,
        speedups=SpeedupConfig.uniform(alpha, K),
        predictor=PredictorConfig(horizon=0.3),
        safety=SafetyConfig(k_v=2.0, q1=1.0, q2=999.0, cbf_gain=1.0),
        safety_enabled=safety_enabled,
        dt=dt,
        t_end=t_end,
        name="paper_platoon",
    )
