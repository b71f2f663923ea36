"""Run configuration files.

Config files are YAML documents (``.cfg`` by convention).  The accepted keys
are frozen in ``SCHEMA`` below and described in ``docs/config-schema.md``;
anything else is an error.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .imperfections import CAUSE_KEYS, ImperfectionParams
from .optics import CavityParams
from .protocol import ModuleConfig, ProtocolConfig

SCHEMA_VERSION = 1
EXPERIMENTS = ("truth-table", "bell", "budget", "phase-audit", "sweep")
FORMATS = ("json", "csv")

_MODULE_KEYS = ("g_mhz", "kappa_mhz", "kappa_r_mhz", "gamma_mhz", "delta_c_mhz",
                "delta_a_mhz", "reflectivity")
_PROTOCOL_KEYS = ("source", "mean_n", "fock_cutoff", "eta_pre", "eta_link", "eta_det",
                  "detection_basis", "feedback_enabled", "gate_duration_us",
                  "feedback_wait_us", "module_a", "module_b")
_IMP_KEYS = ("enabled", "spam_error", "pol_misalign_theta", "mode_match_a", "mode_match_b",
             "delta_lock_sigma_mhz", "t2_a_us", "t2_b_us", "dephase_window_a_us",
             "dephase_window_b_us", "dephasing_law", "dark_click_prob")
_RUN_KEYS = ("shots", "heralds", "draws", "bootstrap")
_SWEEP_KEYS = ("parameter", "grid")
_OUTPUT_KEYS = ("dir", "format")
_TOP_KEYS = ("schema_version", "experiment", "seed", "analytic", "output", "run",
             "protocol", "imperfections", "sweep")

SCHEMA = {
    "": _TOP_KEYS, "output": _OUTPUT_KEYS, "run": _RUN_KEYS, "protocol": _PROTOCOL_KEYS,
    "protocol.module_a": _MODULE_KEYS, "protocol.module_b": _MODULE_KEYS,
    "imperfections": _IMP_KEYS, "sweep": _SWEEP_KEYS,
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunSettings:
    shots: int = 500        # truth-table shots per input
    heralds: int = 3000     # heralded events per Bell state
    draws: int = 400        # lock-jitter draws per runner / budget cell
    bootstrap: int = 200


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "truth-table"
    seed: int = 0
    analytic: bool = False
    out_dir: str = "out"
    fmt: str = "json"
    run: RunSettings = field(default_factory=RunSettings)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    imperfections: ImperfectionParams = field(default_factory=ImperfectionParams)
    sweep_parameter: str | None = None
    sweep_grid: tuple = ()

    def to_dict(self) -> dict:
        return config_to_dict(self)

    def hash(self) -> str:
        """sha256 of the canonical JSON form; output location is excluded."""
        d = self.to_dict()
        d.pop("output")
        text = json.dumps(d, sort_keys=True, default=_json_default)
        return hashlib.sha256(text.encode()).hexdigest()


def _json_default(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    raise TypeError(type(x))


def _check_keys(d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'top level'}: expected a mapping, got {type(d).__name__}")
    allowed = SCHEMA[where]
    for k in d:
        if k not in allowed:
            path = f"{where}.{k}" if where else k
            raise ConfigError(f"unknown key {path!r}")


def _get(d: dict, key: str, kind, where: str, default):
    if key not in d or d[key] is None and default is None:
        return default
    v = d[key]
    path = f"{where}.{key}" if where else key
    try:
        if kind is bool:
            if not isinstance(v, bool):
                raise TypeError
            return v
        if kind is int:
            if isinstance(v, bool) or int(v) != v:
                raise TypeError
            return int(v)
        if kind is float:
            if isinstance(v, bool):
                raise TypeError
            return float(v)
        if kind is str:
            if not isinstance(v, str):
                raise TypeError
            return v
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {v!r}") from None
    raise AssertionError(kind)


def _module(d, where: str, default: ModuleConfig) -> ModuleConfig:
    if d is None:
        return default
    _check_keys(d, where)
    c = default.cavity
    kw = {}
    for key, attr in (("g_mhz", "g"), ("kappa_mhz", "kappa"), ("kappa_r_mhz", "kappa_r"),
                      ("gamma_mhz", "gamma"), ("delta_c_mhz", "delta_c"),
                      ("delta_a_mhz", "delta_a")):
        kw[attr] = _get(d, key, float, where, getattr(c, attr))
    try:
        cav = CavityParams(**kw)
        return ModuleConfig(cav, _get(d, "reflectivity", float, where, default.reflectivity))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _protocol(d) -> ProtocolConfig:
    base = ProtocolConfig()
    if d is None:
        return base
    _check_keys(d, "protocol")
    w = "protocol"
    kw = dict(
        source=_get(d, "source", str, w, base.source),
        mean_n=_get(d, "mean_n", float, w, base.mean_n),
        fock_cutoff=_get(d, "fock_cutoff", int, w, None),
        eta_pre=_get(d, "eta_pre", float, w, base.eta_pre),
        eta_link=_get(d, "eta_link", float, w, base.eta_link),
        eta_det=_get(d, "eta_det", float, w, base.eta_det),
        detection_basis=_get(d, "detection_basis", str, w, base.detection_basis),
        feedback_enabled=_get(d, "feedback_enabled", bool, w, base.feedback_enabled),
        gate_duration_us=_get(d, "gate_duration_us", float, w, base.gate_duration_us),
        feedback_wait_us=_get(d, "feedback_wait_us", float, w, base.feedback_wait_us),
        module_a=_module(d.get("module_a"), "protocol.module_a", base.module_a),
        module_b=_module(d.get("module_b"), "protocol.module_b", base.module_b),
    )
    try:
        return ProtocolConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"protocol: {exc}") from None


def _imperfections(d) -> ImperfectionParams:
    base = ImperfectionParams()
    if d is None:
        return base
    _check_keys(d, "imperfections")
    w = "imperfections"
    enabled = d.get("enabled", [])
    if enabled == "all":
        enabled = list(CAUSE_KEYS)
    if not isinstance(enabled, list):
        raise ConfigError(f"{w}.enabled: expected a list of causes or 'all'")
    for c in enabled:
        if c not in CAUSE_KEYS:
            raise ConfigError(f"{w}.enabled: unknown cause {c!r}; choose from {list(CAUSE_KEYS)}")
    kw = {k: _get(d, k, float, w, getattr(base, k)) for k in _IMP_KEYS
          if k not in ("enabled", "dephasing_law", "dephase_window_a_us", "dephase_window_b_us")}
    kw["dephase_window_a_us"] = _get(d, "dephase_window_a_us", float, w, None)
    kw["dephase_window_b_us"] = _get(d, "dephase_window_b_us", float, w, None)
    kw["dephasing_law"] = _get(d, "dephasing_law", str, w, base.dephasing_law)
    try:
        return ImperfectionParams(enabled=frozenset(enabled), **kw)
    except ValueError as exc:
        raise ConfigError(f"{w}: {exc}") from None


def parse_config(d: dict) -> RunConfig:
    d = {} if d is None else d
    _check_keys(d, "")
    ver = _get(d, "schema_version", int, "", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {ver}")
    exp = _get(d, "experiment", str, "", "truth-table")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown {exp!r}; choose from {list(EXPERIMENTS)}")
    seed = _get(d, "seed", int, "", 0)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed: must fit in 64 unsigned bits")
    out = d.get("output") or {}
    _check_keys(out, "output")
    fmt = _get(out, "format", str, "output", "json")
    if fmt not in FORMATS:
        raise ConfigError(f"output.format: unknown {fmt!r}; choose from {list(FORMATS)}")
    rs = d.get("run") or {}
    _check_keys(rs, "run")
    base = RunSettings()
    run = RunSettings(**{k: _get(rs, k, int, "run", getattr(base, k)) for k in _RUN_KEYS})
    for k in _RUN_KEYS:
        if getattr(run, k) < 1:
            raise ConfigError(f"run.{k}: must be >= 1")
    sw = d.get("sweep") or {}
    _check_keys(sw, "sweep")
    param = _get(sw, "parameter", str, "sweep", None)
    grid = sw.get("grid", [])
    if not isinstance(grid, list):
        raise ConfigError("sweep.grid: expected a list of numbers")
    try:
        grid = tuple(float(g) for g in grid)
    except (TypeError, ValueError):
        raise ConfigError("sweep.grid: expected a list of numbers") from None
    if param is not None:
        resolve_parameter(param)
    return RunConfig(
        experiment=exp, seed=seed, analytic=_get(d, "analytic", bool, "", False),
        out_dir=_get(out, "dir", str, "output", "out"), fmt=fmt, run=run,
        protocol=_protocol(d.get("protocol")),
        imperfections=_imperfections(d.get("imperfections")),
        sweep_parameter=param, sweep_grid=grid,
    )


def _module_dict(m: ModuleConfig) -> dict:
    d = m.cavity.to_mhz()
    d["reflectivity"] = m.reflectivity
    return d


def config_to_dict(rc: RunConfig) -> dict:
    p, imp = rc.protocol, rc.imperfections
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": rc.experiment,
        "seed": rc.seed,
        "analytic": rc.analytic,
        "output": {"dir": rc.out_dir, "format": rc.fmt},
        "run": {k: getattr(rc.run, k) for k in _RUN_KEYS},
        "protocol": {
            "source": p.source, "mean_n": p.mean_n, "fock_cutoff": p.fock_cutoff,
            "eta_pre": p.eta_pre, "eta_link": p.eta_link, "eta_det": p.eta_det,
            "detection_basis": p.detection_basis, "feedback_enabled": p.feedback_enabled,
            "gate_duration_us": p.gate_duration_us, "feedback_wait_us": p.feedback_wait_us,
            "module_a": _module_dict(p.module_a), "module_b": _module_dict(p.module_b),
        },
        "imperfections": imp.to_dict(),
        "sweep": {"parameter": rc.sweep_parameter, "grid": list(rc.sweep_grid)},
    }


def dumps(rc: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(rc), sort_keys=False)


def loads(text: str) -> RunConfig:
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from None
    return parse_config(d)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package ('ideal' or 'paper-nominal')."""
    p = Path(__file__).parent / "configs" / f"{name.removesuffix('.cfg')}.cfg"
    if not p.exists():
        raise ConfigError(f"no bundled config {name!r}")
    return p


# --------------------------------------------------------------------------
# parameter paths for sweeps

def _numeric_paths() -> list[str]:
    paths = [f"protocol.{k}" for k in ("mean_n", "eta_pre", "eta_link", "eta_det",
                                       "gate_duration_us", "feedback_wait_us")]
    for m in ("module_a", "module_b"):
        paths += [f"protocol.{m}.{k}" for k in _MODULE_KEYS]
    paths += [f"imperfections.{k}" for k in _IMP_KEYS if k not in ("enabled", "dephasing_law")]
    return paths


NUMERIC_PATHS = tuple(_numeric_paths())


def resolve_parameter(name: str) -> str:
    """Full dotted path for ``name``; bare names must be unambiguous."""
    if name in NUMERIC_PATHS:
        return name
    hits = [p for p in NUMERIC_PATHS if p.rsplit(".", 1)[-1] == name]
    if len(hits) == 1:
        return hits[0]
    if not hits:
        raise ConfigError(f"sweep.parameter: unknown parameter {name!r}")
    raise ConfigError(f"sweep.parameter: {name!r} is ambiguous, use one of {hits}")


def with_parameter(rc: RunConfig, name: str, value: float) -> RunConfig:
    """Copy of ``rc`` with one numeric parameter replaced (re-validated)."""
    path = resolve_parameter(name).split(".")
    d = copy.deepcopy(config_to_dict(rc))
    node = d
    for k in path[:-1]:
        node = node[k]
    node[path[-1]] = value
    return parse_config(d)


def with_overrides(rc: RunConfig, **kw) -> RunConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    run_kw = {k: kw.pop(k) for k in list(kw) if k in _RUN_KEYS}
    if run_kw:
        kw["run"] = replace(rc.run, **run_kw)
    return replace(rc, **kw)
