"""Plain-text experiment configs, CSV export/import and run manifests.

Config files are flat ``key = value`` lines; ``#`` starts a comment.
Frequencies are given in cycles per second and converted to angular rates.
Floats are written with ``repr`` so every value round-trips exactly.
"""

from __future__ import annotations

import hashlib
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .core import PhysicalParams
from .errors import ConfigError, MonitoredQubitError
from .trajectory import Ensemble, SimulationConfig

__all__ = [
    "CONFIG_KEYS",
    "DEFAULT_CONFIG",
    "parse_config",
    "load_config",
    "config_to_dict",
    "format_config",
    "build_config",
    "git_blob_hash",
    "records_csv",
    "trajectories_csv",
    "write_text",
    "read_ensemble",
    "write_table",
    "write_manifest",
]

RECORDS_COLUMNS = ("traj_id", "bin", "v")
TRAJECTORIES_COLUMNS = ("traj_id", "time_ns", "rho00", "re_rho01", "im_rho01", "herald", "final_outcome")
AVERAGES_COLUMNS = ("time_ns", "v_pre", "v_post", "v_wp", "analytic", "ci_lo", "ci_hi", "n_eff")
CORRGRID_COLUMNS = ("t_ns", "tprime_ns", "value", "weight_sum", "estimator")

DEFAULT_CONFIG = {
    "rabi_frequency_hz": 1.16e6,
    "measurement_rate_hz": 95e3,
    "efficiency": 0.35,
    "t2_star_us": 16.0,
    "dt_ns": 20.0,
    "total_time_us": 2.0,
    "n_trajectories": 1000,
    "seed": 20160817,
    "prep_fidelity": 0.95,
    "herald": "plus",
    "integrator": "bayesian",
    "oracle_mode": False,
}
CONFIG_KEYS = tuple(DEFAULT_CONFIG)

_HERALD_NAMES = {"plus": "herald-plus", "minus": "herald-minus", "mixed": "unheralded-mixed"}
_HERALD_SHORT = {v: k for k, v in _HERALD_NAMES.items()}
_BOOL = {"true": True, "yes": True, "1": True, "on": True, "false": False, "no": False, "0": False, "off": False}


def _parse_value(key, raw):
    if key in ("n_trajectories", "seed"):
        v = int(raw, 0) if raw.lower().startswith("0x") else int(raw)
        return v
    if key == "herald":
        if raw not in _HERALD_NAMES:
            raise ValueError(f"herald must be one of {sorted(_HERALD_NAMES)}")
        return raw
    if key == "integrator":
        if raw not in ("bayesian", "euler-sme"):
            raise ValueError("integrator must be 'bayesian' or 'euler-sme'")
        return raw
    if key == "oracle_mode":
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ValueError("oracle_mode must be true or false") from None
    v = float(raw)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def parse_config(text: str, path=None) -> dict:
    """Parse config text into a dict of canonical keys (defaults filled in).

    Raises :class:`ConfigError` anchored at the offending line.
    """
    values = dict(DEFAULT_CONFIG)
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno, path)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown key {key!r}; known keys: {', '.join(CONFIG_KEYS)}", lineno, path)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno, path)
        if not raw:
            raise ConfigError(f"missing value for {key!r}", lineno, path)
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value {raw!r} for {key!r}: {exc}", lineno, path) from None
        seen[key] = lineno
    values["_lines"] = seen
    return values


def build_config(values: dict, path=None) -> SimulationConfig:
    """Turn parsed values into a :class:`SimulationConfig`, reporting errors by line."""
    lines = values.get("_lines", {})

    def fail(key, msg):
        raise ConfigError(msg, lines.get(key), path)

    if values["efficiency"] <= 0:
        fail("efficiency", f"efficiency must be > 0 (got {values['efficiency']}); the voltage variance 1/(4 k eta dt) diverges at eta = 0")
    if values["t2_star_us"] <= 0:
        fail("t2_star_us", "t2_star_us must be > 0 (use 'inf' for no extra dephasing)")
    if values["dt_ns"] <= 0:
        fail("dt_ns", "dt_ns must be > 0")
    try:
        params = PhysicalParams.from_cycles(
            values["rabi_frequency_hz"],
            values["measurement_rate_hz"],
            values["efficiency"],
            values["t2_star_us"] * 1e-6,
            values["dt_ns"] * 1e-9,
        )
    except MonitoredQubitError as exc:
        raise ConfigError(str(exc), None, path) from None
    ratio = values["total_time_us"] * 1e3 / values["dt_ns"]
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
        fail("total_time_us", f"total_time_us / dt_ns = {ratio!r} is not a positive integer number of bins")
    try:
        return SimulationConfig(
            params=params,
            total_time=round(ratio) * params.bin_duration,
            n_trajectories=values["n_trajectories"],
            seed=values["seed"],
            prep_fidelity=values["prep_fidelity"],
            herald_policy=_HERALD_NAMES[values["herald"]],
            integrator=values["integrator"],
            oracle_mode=values["oracle_mode"],
        )
    except MonitoredQubitError as exc:
        raise ConfigError(str(exc), None, path) from None


def load_config(path) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, path) from None
    return build_config(parse_config(text, path), path)


def config_to_dict(config: SimulationConfig) -> dict:
    p = config.params
    t2 = math.inf if p.dephasing_rate == 0 else 1e6 / p.dephasing_rate
    return {
        "rabi_frequency_hz": p.rabi_angular_frequency / (2 * math.pi),
        "measurement_rate_hz": p.measurement_rate / (2 * math.pi),
        "efficiency": p.efficiency,
        "t2_star_us": t2,
        "dt_ns": p.bin_duration * 1e9,
        "total_time_us": config.total_time * 1e6,
        "n_trajectories": config.n_trajectories,
        "seed": config.seed,
        "prep_fidelity": config.prep_fidelity,
        "herald": _HERALD_SHORT[config.herald_policy],
        "integrator": config.integrator,
        "oracle_mode": config.oracle_mode,
    }


def format_config(values: dict) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return "inf" if math.isinf(v) else repr(v)
        return str(v)

    return "".join(f"{k} = {fmt(values[k])}\n" for k in CONFIG_KEYS)


# -- CSV ------------------------------------------------------------------------


def _f(x) -> str:
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def _times_ns(config: SimulationConfig) -> list[str]:
    dt_ns = config.params.bin_duration * 1e9
    return [_f(round(m * dt_ns, 9)) for m in range(config.n_bins + 1)]


def records_csv(ensemble: Ensemble) -> str:
    out = _io.StringIO()
    out.write(",".join(RECORDS_COLUMNS) + "\n")
    m = ensemble.n_bins
    bins = [str(b) for b in range(m)]
    for i in range(len(ensemble)):
        tid = str(int(ensemble.ids[i]))
        v = ensemble.voltages[i].tolist()
        out.write("".join(f"{tid},{bins[b]},{v[b]!r}\n" for b in range(m)))
    return out.getvalue()


def _herald_name(h: int) -> str:
    return "+z" if h == 1 else "-z" if h == -1 else "none"


def trajectories_csv(ensemble: Ensemble) -> str:
    out = _io.StringIO()
    out.write(",".join(TRAJECTORIES_COLUMNS) + "\n")
    times = _times_ns(ensemble.config)
    for i in range(len(ensemble)):
        tid = str(int(ensemble.ids[i]))
        tail = f"{_herald_name(int(ensemble.herald[i]))},{int(ensemble.final_outcome[i])}"
        p, re, im = ensemble.rho00[i].tolist(), ensemble.re01[i].tolist(), ensemble.im01[i].tolist()
        out.write("".join(f"{tid},{times[m]},{p[m]!r},{re[m]!r},{im[m]!r},{tail}\n" for m in range(len(times))))
    return out.getvalue()


def git_blob_hash(data) -> str:
    """SHA-1 of ``data`` the way git hashes a blob."""
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_text(path, text: str) -> str:
    """Write ``text`` with LF line endings and return its git blob hash."""
    Path(path).write_bytes(text.encode())
    return git_blob_hash(text)


def write_table(path, columns, rows) -> str:
    """Write rows (sequences) under ``columns``; floats use round-trip repr."""
    out = _io.StringIO()
    out.write(",".join(columns) + "\n")
    for row in rows:
        cells = []
        for v in row:
            if v is None:
                cells.append("")
            elif isinstance(v, (bool, np.bool_)):
                cells.append("pass" if v else "fail")
            elif isinstance(v, (float, np.floating)):
                cells.append(_f(v))
            else:
                cells.append(str(v))
        out.write(",".join(cells) + "\n")
    return write_text(path, out.getvalue())


def read_ensemble(records_path, trajectories_path, config: SimulationConfig) -> Ensemble:
    """Rebuild an :class:`Ensemble` from the two CSV exports."""
    rec = np.genfromtxt(records_path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    trj = np.genfromtxt(trajectories_path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    m = config.n_bins
    rec = np.atleast_1d(rec)
    trj = np.atleast_1d(trj)
    order = np.lexsort((rec["bin"], rec["traj_id"]))
    ids = np.unique(rec["traj_id"])
    n = len(ids)
    if len(rec) != n * m or len(trj) != n * (m + 1):
        raise ValueError("CSV row counts do not match the config's number of bins")
    voltages = rec["v"][order].astype(float).reshape(n, m)
    torder = np.lexsort((trj["time_ns"], trj["traj_id"]))
    trj = trj[torder]
    rho00 = trj["rho00"].astype(float).reshape(n, m + 1)
    re01 = trj["re_rho01"].astype(float).reshape(n, m + 1)
    im01 = trj["im_rho01"].astype(float).reshape(n, m + 1)
    first = trj[:: m + 1]
    herald = np.array([{"+z": 1, "-z": -1}.get(str(h), 0) for h in first["herald"]], dtype=np.int8)
    final = first["final_outcome"].astype(np.int8)
    return Ensemble(
        config=config.replace(n_trajectories=n),
        ids=ids.astype(np.int64),
        herald=herald,
        voltages=voltages,
        rho00=rho00,
        re01=re01,
        im01=im01,
        final_outcome=final,
    )


def write_manifest(path, manifest: dict) -> None:
    def default(o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, Path):
            return str(o)
        raise TypeError(type(o))

    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=default) + "\n")
