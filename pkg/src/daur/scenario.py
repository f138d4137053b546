"""Seeded scenario generation and experiment-config loading.

Random streams are split per entity with ``numpy.random.SeedSequence``
spawn keys ``(stream, index...)``, so adding users never changes the draws of
servers or of the other users. 1 KB = 1e3 bytes, 1 MB = 1e6 bytes.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ScenarioParams

_USER_POS, _SERVER_POS, _FADING, _TASK, _PREF = range(5)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def path_loss_db(distance_m):
    """Large-scale path loss in dB; distance in metres, model in kilometres."""
    return 128.1 + 37.6 * np.log10(np.asarray(distance_m, dtype=float) / 1000.0)


def channel_gain(distance_m, fading=1.0):
    return 10.0 ** (-path_loss_db(distance_m) / 10.0) * fading


# Physical defaults of the reference experiment. Keys double as config keys.
DEFAULTS = {
    "radius_m": 1000.0,
    "users": 10,
    "servers": 2,
    "bandwidth_hz": 10e6,
    "user_power_w": 0.2,
    "user_freq_hz": 1e9,
    "server_freq_hz": 20e9,
    "cycles_per_bit_user": 279.62,
    "cycles_per_bit_server": 279.62,
    "cycles_per_bit_blockgen": None,
    "verify_cycles": 1e6,
    "kappa_user": 1e-27,
    "kappa_server": 1e-27,
    "noise_dbm_per_hz": -134.0,
    "block_size_bytes": 8e6,
    "wired_rate_bps": 15e6,
    "task_bytes_min": 500e3,
    "task_bytes_max": 2000e3,
    "omega_b": 1.0,
    "omega_t": 0.5,
    "omega_e": 0.5,
    "preference": 1.0 / 5e5,
    "preference_mode": "uniform",
}

# Keys that must be > 0 when given; weights may be 0 individually.
_NONNEGATIVE = {"omega_t", "omega_e"}
_STRINGS = {"preference_mode"}
_INTEGERS = {"users", "servers"}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is set when the location is known."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TopologySpec:
    radius: float = 1000.0
    n_users: int = 10
    n_servers: int = 2
    seed: int = 0
    placement: str = "uniform-disk"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.n_users < 1 or self.n_servers < 1:
            raise ValueError("n_users and n_servers must be >= 1")
        if self.placement != "uniform-disk":
            raise ValueError(f"unsupported placement {self.placement!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def _disk_point(rng: np.random.Generator, radius: float) -> np.ndarray:
    r = radius * math.sqrt(rng.random())
    theta = 2.0 * math.pi * rng.random()
    return np.array([r * math.cos(theta), r * math.sin(theta)])


def positions(spec: TopologySpec) -> tuple[np.ndarray, np.ndarray]:
    """User and server coordinates (metres), uniform in the disk."""
    servers = np.array([_disk_point(_rng(spec.seed, _SERVER_POS, m), spec.radius)
                        for m in range(spec.n_servers)])
    users = np.empty((spec.n_users, 2))
    for n in range(spec.n_users):
        rng = _rng(spec.seed, _USER_POS, n)
        while True:
            pt = _disk_point(rng, spec.radius)
            # a user exactly on a server has undefined path loss
            if np.all(np.hypot(*(servers - pt).T) > 0):
                break
        users[n] = pt
    return users, servers


def _check_overrides(overrides: dict) -> dict:
    unknown = set(overrides) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown override keys: {sorted(unknown)}")
    merged = dict(DEFAULTS)
    merged.update(overrides)
    for key, val in overrides.items():
        if key in _STRINGS:
            if key == "preference_mode" and val not in ("uniform", "mixed"):
                raise ValueError("preference_mode must be 'uniform' or 'mixed'")
            continue
        if val is None and DEFAULTS[key] is None:
            continue
        if key == "noise_dbm_per_hz":
            if not np.isfinite(val):
                raise ValueError(f"{key} must be finite")
            continue
        if not np.isfinite(val) or (val < 0 if key in _NONNEGATIVE else val <= 0):
            raise ValueError(f"override {key} must be positive, got {val!r}")
    if merged["task_bytes_min"] > merged["task_bytes_max"]:
        raise ValueError("task_bytes_min exceeds task_bytes_max")
    return merged


def generate_scenario(spec: TopologySpec, overrides: dict | None = None) -> ScenarioParams:
    """Draw a scenario: placement, Rayleigh-faded gains and task sizes.

    ``overrides`` uses the config keys of ``DEFAULTS`` (``users``, ``servers``
    and ``radius_m`` come from ``spec`` instead).
    """
    overrides = dict(overrides or {})
    for key in ("users", "servers", "radius_m"):
        overrides.pop(key, None)
    cfg = _check_overrides(overrides)
    n, m = spec.n_users, spec.n_servers

    users, servers = positions(spec)
    dist = np.hypot(users[:, None, 0] - servers[None, :, 0], users[:, None, 1] - servers[None, :, 1])
    fading = np.array([[_rng(spec.seed, _FADING, i, j).exponential(1.0) for j in range(m)]
                       for i in range(n)])
    gain = channel_gain(dist, fading)

    lo, hi = cfg["task_bytes_min"], cfg["task_bytes_max"]
    task_bytes = np.array([lo + (hi - lo) * _rng(spec.seed, _TASK, i).random() for i in range(n)])

    c = cfg["preference"]
    if cfg["preference_mode"] == "mixed":
        scale = np.array([_rng(spec.seed, _PREF, i).random() for i in range(n)])
        # a zero draw would make the preference non-positive
        scale = np.maximum(scale, 1e-12)
        c_u = c * scale
        c_us = np.repeat(c_u[:, None], m, axis=1)
    else:
        c_u, c_us = c, c

    return ScenarioParams(
        n_users=n,
        n_servers=m,
        d=8.0 * task_bytes,
        eta_u=cfg["cycles_per_bit_user"],
        eta_s=cfg["cycles_per_bit_server"],
        eta_bgen=cfg["cycles_per_bit_blockgen"],
        eta_v=cfg["verify_cycles"],
        f_u=cfg["user_freq_hz"],
        f_s=cfg["server_freq_hz"],
        p_u=cfg["user_power_w"],
        b_s=cfg["bandwidth_hz"],
        kappa_u=cfg["kappa_user"],
        kappa_s=cfg["kappa_server"],
        gain=gain,
        noise_psd=dbm_to_watts(cfg["noise_dbm_per_hz"]),
        block_size=8.0 * cfg["block_size_bytes"],
        r_wired=cfg["wired_rate_bps"],
        omega_b=cfg["omega_b"],
        omega_t=cfg["omega_t"],
        omega_e=cfg["omega_e"],
        c_u=c_u,
        c_us=c_us,
    )


# --------------------------------------------------------------------------
# configuration files

SOLVER_DEFAULTS = {
    "tol_outer": 1e-3,
    "tol_fp": 1e-3,
    "tol_qcqp": 1e-3,
    "max_outer": 20,
    "max_fp": 100,
    "max_qcqp": 60,
    "max_minutes": 10.0,
    "rounding": "hungarian",
    "phi_max": 1.0 - 1e-3,
}

SWEEP_PARAMS = ("bandwidth", "server_freq", "user_freq", "user_power", "weight_ratio", "preference")

SWEEP_DEFAULTS = {
    "param": None,
    "values": None,
    "seeds": 5,
}

# bare names that need a unit suffix, mapped to the accepted key
_UNIT_HINTS = {
    "radius": "radius_m",
    "bandwidth": "bandwidth_hz",
    "user_power": "user_power_w",
    "power": "user_power_w",
    "user_freq": "user_freq_hz",
    "server_freq": "server_freq_hz",
    "noise": "noise_dbm_per_hz",
    "block_size": "block_size_bytes",
    "wired_rate": "wired_rate_bps",
    "task_min": "task_bytes_min",
    "task_max": "task_bytes_max",
    "task_size": "task_bytes_min/task_bytes_max",
}


@dataclass
class SolverSettings:
    tol_outer: float = 1e-3
    tol_fp: float = 1e-3
    tol_qcqp: float = 1e-3
    max_outer: int = 20
    max_fp: int = 100
    max_qcqp: int = 60
    max_minutes: float = 10.0
    rounding: str = "hungarian"
    phi_max: float = 1.0 - 1e-3


@dataclass
class SweepPlan:
    param: str | None = None
    values: list = field(default_factory=list)
    seeds: int = 5


@dataclass
class ExperimentConfig:
    spec: TopologySpec
    overrides: dict
    solver: SolverSettings
    sweep: SweepPlan

    def scenario(self, seed: int | None = None) -> ScenarioParams:
        spec = self.spec if seed is None else dataclasses.replace(self.spec, seed=seed)
        return generate_scenario(spec, self.overrides)


def _key_lines(text: str) -> dict:
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif s and s[0] not in "#;":
            mt = re.match(r"([^=:]+?)\s*[=:]", s)
            if mt:
                lines[(section, mt.group(1).strip().lower())] = i
    return lines


def _parse_number(raw: str, key: str, line, integer=False):
    try:
        val = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}", line, key) from None
    if integer:
        if val != int(val):
            raise ConfigError(f"{key}: expected an integer, got {raw!r}", line, key)
        return int(val)
    return val


def _parse_values(raw: str, key: str, line) -> list:
    out = []
    for tok in (t.strip() for t in raw.split(",")):
        if not tok:
            continue
        if tok == "mixed":
            out.append(tok)
            continue
        mt = re.fullmatch(r"(\S+)\s*:\s*(\S+)\s*:\s*(\d+)", tok)
        if mt:
            a = _parse_number(mt.group(1), key, line)
            b = _parse_number(mt.group(2), key, line)
            out.extend(np.linspace(a, b, int(mt.group(3))).tolist())
        else:
            out.append(_parse_number(tok, key, line))
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate the INI-style experiment schema documented in the README."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(f"parse error: {exc.message.splitlines()[0]}", line) from None
    lines = _key_lines(text)

    extra = set(cp.sections()) - {"scenario", "solver", "sweep"}
    if extra:
        name = sorted(extra)[0]
        raise ConfigError(f"unknown section [{name}]", lines.get((None, None)))
    if not cp.has_section("scenario"):
        raise ConfigError("missing required key 'seed' in [scenario]", key="seed")

    sc = cp["scenario"]
    overrides = {}
    seed = None
    for key, raw in sc.items():
        line = lines.get(("scenario", key))
        if key == "seed":
            seed = _parse_number(raw, key, line, integer=True)
            if seed < 0:
                raise ConfigError("seed must be non-negative", line, key)
            continue
        if key not in DEFAULTS:
            if key in _UNIT_HINTS:
                raise ConfigError(f"{key}: missing unit suffix, use {_UNIT_HINTS[key]}", line, key)
            raise ConfigError(f"unknown key {key!r} in [scenario]", line, key)
        if key in _STRINGS:
            overrides[key] = raw.strip()
        elif key == "cycles_per_bit_blockgen" and raw.strip().lower() in ("none", ""):
            overrides[key] = None
        else:
            overrides[key] = _parse_number(raw, key, line, integer=key in _INTEGERS)
        try:
            _check_overrides({k: v for k, v in [(key, overrides[key])] if k not in _INTEGERS | {"radius_m"}})
        except ValueError as exc:
            raise ConfigError(f"range error: {exc}", line, key) from None
        if key in _INTEGERS | {"radius_m"} and overrides[key] <= 0:
            raise ConfigError(f"range error: {key} must be positive", line, key)
    if seed is None:
        raise ConfigError("missing required key 'seed' in [scenario]", key="seed")
    try:
        _check_overrides({k: v for k, v in overrides.items() if k not in _INTEGERS | {"radius_m"}})
    except ValueError as exc:
        raise ConfigError(f"range error: {exc}") from None

    spec = TopologySpec(
        radius=float(overrides.pop("radius_m", DEFAULTS["radius_m"])),
        n_users=int(overrides.pop("users", DEFAULTS["users"])),
        n_servers=int(overrides.pop("servers", DEFAULTS["servers"])),
        seed=seed,
    )

    solver = {}
    if cp.has_section("solver"):
        for key, raw in cp["solver"].items():
            line = lines.get(("solver", key))
            if key not in SOLVER_DEFAULTS:
                raise ConfigError(f"unknown key {key!r} in [solver]", line, key)
            if key == "rounding":
                if raw.strip() not in ("hungarian", "argmax"):
                    raise ConfigError("rounding must be 'hungarian' or 'argmax'", line, key)
                solver[key] = raw.strip()
                continue
            val = _parse_number(raw, key, line, integer=key.startswith("max_") and key != "max_minutes")
            if val <= 0 or (key == "phi_max" and val > 1):
                raise ConfigError(f"range error: {key} out of range", line, key)
            solver[key] = val

    sweep = {}
    if cp.has_section("sweep"):
        for key, raw in cp["sweep"].items():
            line = lines.get(("sweep", key))
            if key not in SWEEP_DEFAULTS:
                raise ConfigError(f"unknown key {key!r} in [sweep]", line, key)
            if key == "param":
                if raw.strip() not in SWEEP_PARAMS:
                    raise ConfigError(f"param must be one of {SWEEP_PARAMS}", line, key)
                sweep[key] = raw.strip()
            elif key == "values":
                sweep[key] = _parse_values(raw, key, line)
            else:
                sweep[key] = _parse_number(raw, key, line, integer=True)
                if sweep[key] < 1:
                    raise ConfigError("range error: seeds must be >= 1", line, key)

    return ExperimentConfig(spec=spec, overrides=overrides, solver=SolverSettings(**solver),
                            sweep=SweepPlan(**sweep))


def load_config(path) -> tuple[TopologySpec, SolverSettings, SweepPlan]:
    """Read a config file; returns ``(spec, solver settings, sweep plan)``.

    The scenario overrides are available through :func:`read_config`.
    """
    cfg = read_config(path)
    return cfg.spec, cfg.solver, cfg.sweep


def read_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def sweep_overrides(param: str, value, base: dict) -> dict:
    """Scenario overrides for one sweep grid point."""
    out = dict(base)
    if param == "bandwidth":
        out["bandwidth_hz"] = float(value)
    elif param == "server_freq":
        out["server_freq_hz"] = float(value)
    elif param == "user_freq":
        out["user_freq_hz"] = float(value)
    elif param == "user_power":
        out["user_power_w"] = float(value)
    elif param == "weight_ratio":
        if not 0 < float(value) < 1:
            raise ValueError("weight_ratio value is omega_t and must lie in (0, 1)")
        out["omega_t"] = float(value)
        out["omega_e"] = 1.0 - float(value)
    elif param == "preference":
        base_c = base.get("preference", DEFAULTS["preference"])
        if value == "mixed":
            out["preference_mode"] = "mixed"
            out["preference"] = base_c
        else:
            if float(value) <= 0:
                raise ValueError("preference multiplier must be positive")
            out["preference"] = base_c * float(value)
    else:
        raise ValueError(f"unknown sweep parameter {param!r}")
    return out
