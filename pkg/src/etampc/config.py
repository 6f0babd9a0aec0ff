"""YAML configuration for simulations and sweeps.

A config file has the sections ``shared``, ``planner``, ``tracker``,
``prediction``, ``idm`` and ``sim``, plus an optional ``lead`` section that
describes a synthetic lead trace. Omitted keys take the packaged defaults.
Validation errors carry the file line of the offending key when known.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .baselines import IdmParams
from .envelope import HeadwayParams
from .planner import PlannerParams
from .prediction import NoiseModel
from .qp import ContractError
from .sim import SimConfig
from .tracker import TrackerParams

SECTIONS = {
    "shared": ("v_min", "v_max", "a_min", "a_max", "ds_minus", "ds_plus", "dt_minus", "dt_plus"),
    "planner": ("alpha", "beta", "gamma", "dt_p", "m"),
    "tracker": ("lam", "mu", "dt_c", "n"),
    "prediction": ("spacing", "spatial_horizon", "sigma", "seed"),
    "idm": ("a_idm", "b_idm", "delta", "s0", "veh_len", "v0", "T"),
    "sim": ("initial_gap", "initial_speed", "plant_a_min", "plant_a_max", "prediction", "verify_candidates"),
    "lead": ("kind", "duration", "seed", "params"),
}


class ConfigError(ContractError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


def default_config_text() -> str:
    return resources.files("etampc").joinpath("data/default.yaml").read_text()


def config_hash(text: str) -> str:
    """Hash of the parsed config, insensitive to comments and formatting."""
    data = yaml.safe_load(text) or {}
    canon = yaml.safe_dump(data, sort_keys=True, default_flow_style=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _key_lines(text: str) -> dict:
    """Map ``section.key`` (and ``section``) to 1-based line numbers."""
    lines = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if not isinstance(root, yaml.MappingNode):
        return lines
    for knode, vnode in root.value:
        lines[knode.value] = knode.start_mark.line + 1
        if isinstance(vnode, yaml.MappingNode):
            for k2, _ in vnode.value:
                lines[f"{knode.value}.{k2.value}"] = k2.start_mark.line + 1
    return lines


def _parse(text: str, path=None) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, path) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, path)
    return data


@dataclass
class LoadedConfig:
    sim: SimConfig
    lead: dict | None
    hash: str
    raw: dict = field(repr=False, default_factory=dict)


def _merged(text: str, path=None):
    base = _parse(default_config_text())
    user = _parse(text, path)
    lines = _key_lines(text)
    for sec, body in user.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section {sec!r}", lines.get(sec), path)
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"section {sec!r} must be a mapping", lines.get(sec), path)
        for key in body:
            if key not in SECTIONS[sec]:
                raise ConfigError(f"unknown key {sec}.{key}", lines.get(f"{sec}.{key}"), path)
        base.setdefault(sec, {})
        if sec == "lead":
            base[sec] = dict(body)
        else:
            base[sec].update(body)
    return base, lines


def _num(data, sec, key, lines, path, kind=float, optional=False):
    val = data.get(sec, {}).get(key)
    if val is None:
        if optional:
            return None
        raise ConfigError(f"missing value {sec}.{key}", lines.get(f"{sec}.{key}"), path)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{sec}.{key} must be a number, got {val!r}", lines.get(f"{sec}.{key}"), path)
    if kind is int:
        if int(val) != val:
            raise ConfigError(f"{sec}.{key} must be an integer", lines.get(f"{sec}.{key}"), path)
        return int(val)
    if not math.isfinite(val):
        raise ConfigError(f"{sec}.{key} must be finite", lines.get(f"{sec}.{key}"), path)
    return float(val)


def _build(section: str, fields: tuple, ctor, lines, path):
    """Construct a params object, attributing its validation error to the section."""
    try:
        return ctor()
    except ConfigError:
        raise
    except ContractError as exc:
        msg = str(exc)
        hit = next((f for f in fields if f in msg), None)
        line = lines.get(f"{section}.{hit}") if hit else lines.get(section)
        named = msg if hit else f"{section}: {msg}"
        raise ConfigError(f"invalid {section} parameters: {named}", line, path) from None


def config_from_text(text: str, path=None) -> LoadedConfig:
    data, lines = _merged(text, path)
    n = lambda sec, key, **kw: _num(data, sec, key, lines, path, **kw)  # noqa: E731
    shared = {k: n("shared", k) for k in ("v_min", "v_max", "a_min", "a_max")}
    headway = _build("shared", SECTIONS["shared"], lambda: HeadwayParams(
        n("shared", "ds_minus"), n("shared", "ds_plus"), n("shared", "dt_minus"), n("shared", "dt_plus")),
        lines, path)
    planner = _build("planner", SECTIONS["planner"] + SECTIONS["shared"], lambda: PlannerParams(
        n("planner", "alpha"), n("planner", "beta"), n("planner", "gamma"), **shared,
        dt_p=n("planner", "dt_p"), m=n("planner", "m", kind=int)), lines, path)
    tracker = _build("tracker", SECTIONS["tracker"] + SECTIONS["shared"], lambda: TrackerParams(
        n("tracker", "lam"), n("tracker", "mu"), **shared,
        dt_c=n("tracker", "dt_c"), n=n("tracker", "n", kind=int)), lines, path)
    noise = _build("prediction", ("sigma", "seed"), lambda: NoiseModel(
        n("prediction", "sigma"), n("prediction", "seed", kind=int)), lines, path)
    v0 = n("idm", "v0", optional=True)
    idm = _build("idm", SECTIONS["idm"], lambda: IdmParams(
        n("idm", "a_idm"), n("idm", "b_idm"), n("idm", "delta"), n("idm", "s0"), n("idm", "veh_len"),
        shared["v_max"] if v0 is None else v0, n("idm", "T")), lines, path)
    sim = data.get("sim", {})
    mode = sim.get("prediction", "eta")
    plant_hi = n("sim", "plant_a_max", optional=True)
    cfg = _build("sim", SECTIONS["sim"] + SECTIONS["prediction"], lambda: SimConfig(
        planner=planner, tracker=tracker, headway=headway, noise=noise, idm=idm,
        spacing=n("prediction", "spacing"), spatial_horizon=n("prediction", "spatial_horizon"),
        plan_period=planner.dt_p, track_period=tracker.dt_c,
        initial_gap=n("sim", "initial_gap"), initial_speed=n("sim", "initial_speed", optional=True),
        vehicle_length=idm.veh_len, plant_a_min=n("sim", "plant_a_min"),
        plant_a_max=shared["a_max"] if plant_hi is None else plant_hi,
        prediction=mode, verify_candidates=bool(sim.get("verify_candidates", False))), lines, path)
    lead = data.get("lead")
    if lead is not None:
        lead = _lead_spec(lead, lines, path)
    return LoadedConfig(cfg, lead, config_hash(text), data)


def _lead_spec(lead: dict, lines, path) -> dict:
    kind = lead.get("kind")
    if kind not in ("constant", "sawtooth", "stop_and_go"):
        raise ConfigError(f"lead.kind must be constant, sawtooth or stop_and_go, got {kind!r}",
                          lines.get("lead.kind"), path)
    params = lead.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("lead.params must be a mapping", lines.get("lead.params"), path)
    return {"kind": kind, "duration": float(lead.get("duration", 700.0)),
            "seed": int(lead.get("seed", 0)), "params": dict(params)}


def load_config(path) -> LoadedConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config not found: {p}")
    return config_from_text(p.read_text(), p)


def default_config() -> LoadedConfig:
    return config_from_text(default_config_text(), "<default>")


# ---------------------------------------------------------------- sweep specs

DEFAULT_DS = (10.0, 100.0, 200.0, 300.0, 400.0, 500.0)
DEFAULT_SIGMA = (0.01, 0.05, 0.1, 0.15, 0.2, 0.25)


@dataclass(frozen=True)
class SweepSpec:
    ds_values: tuple
    sigma_values: tuple
    seeds: tuple
    config: LoadedConfig = field(repr=False, default=None)
    trace: str | None = None

    @property
    def cells(self):
        return [(ds, sg) for ds in self.ds_values for sg in self.sigma_values]


def sweep_from_text(text: str, path=None) -> SweepSpec:
    data = _parse(text, path)
    lines = _key_lines(text)
    known = {"config", "trace", "lead", "ds_values", "sigma_values", "seeds", "allow_out_of_range"}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown sweep key {key!r}", lines.get(key), path)
    base_dir = Path(path).parent if path else Path(".")
    cfg_ref = data.get("config")
    if cfg_ref is None:
        loaded = default_config()
    else:
        loaded = load_config(base_dir / cfg_ref)
    if "lead" in data:
        loaded.lead = _lead_spec(data["lead"], {f"lead.{k}": v for k, v in lines.items()}, path)
    trace = data.get("trace")
    if trace is not None:
        trace = str(base_dir / trace)
    if trace is None and loaded.lead is None:
        raise ConfigError("sweep needs a trace file or a lead section", None, path)
    ds = tuple(float(x) for x in data.get("ds_values", DEFAULT_DS))
    sigma = tuple(float(x) for x in data.get("sigma_values", DEFAULT_SIGMA))
    seeds = data.get("seeds", 5)
    seeds = tuple(range(int(seeds))) if isinstance(seeds, int) else tuple(int(s) for s in seeds)
    if not ds or not sigma or not seeds:
        raise ConfigError("ds_values, sigma_values and seeds must be nonempty", None, path)
    if not data.get("allow_out_of_range", False):
        if any(not 10 <= d <= 500 for d in ds):
            raise ConfigError("ds_values must lie in [10, 500]", lines.get("ds_values"), path)
        if any(not 0.01 <= s <= 0.25 for s in sigma):
            raise ConfigError("sigma_values must lie in [0.01, 0.25]", lines.get("sigma_values"), path)
    return SweepSpec(ds, sigma, seeds, loaded, trace)


def load_sweep(path) -> SweepSpec:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"sweep spec not found: {p}")
    return sweep_from_text(p.read_text(), p)
