"""Run configuration, versioned CSV/JSON emission and reproducibility manifests.

Configuration is an INI file (``key = value`` inside ``[section]``) read with
:mod:`configparser`; command-line ``--set section.key=value`` pairs override
it.  Every output directory gets ``manifest.json`` echoing the resolved
configuration, package version and a SHA-256 of each emitted file.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from .lattice import HoppingKernel, nearest_neighbor, validate_hopping
from .spectral.basis import Truncation

__all__ = [
    "SCHEMA_VERSION",
    "CSV_SCHEMAS",
    "ConfigError",
    "RunConfig",
    "load_config",
    "parse_kernel",
    "write_csv",
    "read_csv",
    "write_json",
    "write_manifest",
    "overrides_from_manifest",
    "param_hash",
    "package_version",
    "PLOT_SCRIPT",
]

SCHEMA_VERSION = "1"

CSV_SCHEMAS = {
    "field": ["t", "site", "x", "mean", "stderr"],
    "cf": ["t", "k", "k_snapped", "re", "im", "se_re", "se_im"],
    "m2": ["t", "m2", "stderr", "valid"],
    "dispersion": ["k", "re_E", "im_E"],
    "gap_scan": ["lam", "delta_lambda", "gap", "gap_doubled", "drift", "index", "re", "im"],
    "oracle": ["site", "x", "oracle", "mc_mean", "mc_stderr", "z"],
}

DEFAULTS = {
    "model": {"d": "1", "L": "512", "kernel": "nn", "lam": "1.0", "rate": "1.0"},
    "ensemble": {"n_traj": "400", "seed": "20240601", "t_max": "50.0", "n_times": "25", "fit_start": "20.0"},
    "spectral": {"pos_radius": "12", "set_size": "2", "set_radius": "2", "k_max": "0.3", "n_k": "7",
                 "tol": "1e-10", "gap": "yes"},
    "oracle": {"L": "5", "lam": "0.5", "t": "2.0", "n_traj": "20000"},
    "output": {"dir": "tbflip_out"},
}


class ConfigError(ValueError):
    """Invalid configuration value; the message names the file line when known."""


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def parse_kernel(text: str, d: int) -> HoppingKernel:
    """``nn`` or ``nn:<t>`` for nearest neighbours, else ``z1,z2,...:amp; ...`` entries.

    Amplitudes may be complex (``0.5+0.1j``).
    """
    text = text.strip()
    if text == "nn" or text.startswith("nn:"):
        return nearest_neighbor(d, float(text[3:]) if ":" in text else 1.0)
    entries = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        disp, _, amp = part.partition(":")
        z = tuple(int(v) for v in disp.split(","))
        if len(z) != d:
            raise ValueError(f"displacement {z} is not {d}-dimensional")
        entries[z] = complex(amp.replace(" ", ""))
    return HoppingKernel(entries)


@dataclass
class RunConfig:
    command: str
    d: int
    L: int
    kernel: str
    lam: float
    rate: float
    n_traj: int
    seed: int
    t_max: float
    n_times: int
    fit_start: float
    truncation: Truncation
    k_max: float
    n_k: int
    tol: float
    gap: bool
    oracle_L: int
    oracle_lam: float
    oracle_t: float
    oracle_n_traj: int
    out_dir: str
    source: str = ""
    raw: dict = field(default_factory=dict)

    def hopping(self) -> HoppingKernel:
        return parse_kernel(self.kernel, self.d)

    def times(self) -> np.ndarray:
        """Linear checkpoint grid on ``[t_max / n_times, t_max]``."""
        return np.linspace(self.t_max / self.n_times, self.t_max, self.n_times)

    def model_block(self) -> dict:
        return {"d": self.d, "L": self.L, "kernel": self.kernel, "lam": self.lam, "rate": self.rate}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["truncation"] = asdict(self.truncation)
        out.pop("raw")
        return out


def _line_numbers(text: str) -> dict:
    """``(section, key) -> line`` for every assignment in an INI text."""
    lines = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section:
            lines[(section, m.group(1).strip())] = no
    return lines


def load_config(command: str, path: str | None = None, overrides=None) -> RunConfig:
    """Merge defaults, an optional INI file and ``section.key=value`` overrides, then validate."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    text = ""
    source = "<defaults>"
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{path}: no such config file")
        text = p.read_text()
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        source = str(path)
    lines = _line_numbers(text)
    origin = {}
    for ov in overrides or []:
        key, sep, val = ov.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override '{ov}' must look like section.key=value")
        sec, k = key.strip().split(".", 1)
        if sec not in DEFAULTS or k not in DEFAULTS[sec]:
            raise ConfigError(f"override '{ov}': unknown key {sec}.{k}")
        cp.set(sec, k, val.strip())
        origin[(sec, k)] = f"override '{ov}'"
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"{source}:{_section_line(text, sec)}: unknown section [{sec}]")
        for k in cp[sec]:
            if k not in DEFAULTS[sec]:
                raise ConfigError(f"{source}:{lines.get((sec, k), '?')}: unknown key '{k}' in [{sec}]")

    def where(sec, k):
        if (sec, k) in origin:
            return origin[(sec, k)]
        if (sec, k) in lines:
            return f"{source}:{lines[(sec, k)]}"
        return f"default {sec}.{k}"

    def get(sec, k, conv, check=None, msg=""):
        raw = cp.get(sec, k)
        try:
            val = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{where(sec, k)}: {sec}.{k} = {raw!r} is not a valid {conv.__name__}") from exc
        if check is not None and not check(val):
            raise ConfigError(f"{where(sec, k)}: {sec}.{k} = {raw!r} {msg}")
        return val

    def boolean(raw):
        low = raw.strip().lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise ValueError(raw)

    pos = (lambda v: v > 0, "must be positive")
    nonneg = (lambda v: v >= 0, "must be nonnegative")
    cfg = RunConfig(
        command=command,
        d=get("model", "d", int, lambda v: 1 <= v <= 3, "must be 1, 2 or 3"),
        L=get("model", "L", int, lambda v: v >= 2, "must be at least 2"),
        kernel=cp.get("model", "kernel"),
        lam=get("model", "lam", float, *nonneg),
        rate=get("model", "rate", float, *pos),
        n_traj=get("ensemble", "n_traj", int, lambda v: v >= 1, "must be at least 1"),
        seed=get("ensemble", "seed", int, lambda v: 0 <= v < 2**64, "must be a 64-bit unsigned integer"),
        t_max=get("ensemble", "t_max", float, *pos),
        n_times=get("ensemble", "n_times", int, lambda v: v >= 5, "must be at least 5"),
        fit_start=get("ensemble", "fit_start", float, *nonneg),
        truncation=Truncation(get("spectral", "pos_radius", int, *nonneg), get("spectral", "set_size", int, *nonneg),
                              get("spectral", "set_radius", int, *nonneg)),
        k_max=get("spectral", "k_max", float, *pos),
        n_k=get("spectral", "n_k", int, lambda v: v >= 2, "must be at least 2"),
        tol=get("spectral", "tol", float, *pos),
        gap=get("spectral", "gap", boolean),
        oracle_L=get("oracle", "L", int, lambda v: v >= 2, "must be at least 2"),
        oracle_lam=get("oracle", "lam", float, *nonneg),
        oracle_t=get("oracle", "t", float, *nonneg),
        oracle_n_traj=get("oracle", "n_traj", int, lambda v: v >= 1, "must be at least 1"),
        out_dir=cp.get("output", "dir"),
        source=source,
        raw={s: dict(cp[s]) for s in cp.sections()},
    )
    try:
        h = cfg.hopping()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where('model', 'kernel')}: model.kernel: {exc}") from exc
    rep = validate_hopping(h, cfg.d)
    if not rep.passed:
        raise ConfigError(f"{where('model', 'kernel')}: model.kernel rejected: {'; '.join(rep.messages)}")
    return cfg


def _section_line(text: str, sec: str):
    for no, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{sec}]":
            return no
    return "?"


def param_hash(payload: dict) -> str:
    """Short SHA-256 of a canonical JSON rendering."""
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


def write_csv(path, schema: str, rows) -> Path:
    """Write rows under a versioned schema; every row must match the schema's columns."""
    cols = CSV_SCHEMAS[schema]
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema {schema} v{SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            row = list(row)
            if len(row) != len(cols):
                raise ValueError(f"{schema} row has {len(row)} fields, schema has {len(cols)}")
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    """Return ``(schema, columns, rows)`` after checking the header against the schema table."""
    with Path(path).open() as fh:
        first = fh.readline().strip()
        m = re.match(r"# schema (\w+) v(\S+)", first)
        if not m:
            raise ValueError(f"{path}: missing schema line")
        schema, ver = m.groups()
        if ver != SCHEMA_VERSION:
            raise ValueError(f"{path}: schema version {ver}, expected {SCHEMA_VERSION}")
        reader = csv.reader(fh)
        cols = next(reader)
        if cols != CSV_SCHEMAS[schema]:
            raise ValueError(f"{path}: columns {cols} do not match schema {schema}")
        return schema, cols, [r for r in reader]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    data = {"schema_version": SCHEMA_VERSION, **_jsonable(payload)}
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def write_manifest(out_dir, cfg: RunConfig, files, tag: str = "") -> Path:
    """``manifest_<command>[_<tag>].json`` with the resolved config, version and file digests."""
    out_dir = Path(out_dir)
    entries = {}
    for f in files:
        f = Path(f)
        entries[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    payload = {
        "command": cfg.command,
        "version": package_version(),
        "config": cfg.to_dict(),
        "config_ini": cfg.raw,
        "files": entries,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    name = f"manifest_{cfg.command}" + (f"_{tag}" if tag else "") + ".json"
    return write_json(out_dir / name, payload)


def overrides_from_manifest(path) -> list[str]:
    """``section.key=value`` pairs that rebuild the configuration recorded in a manifest."""
    data = json.loads(Path(path).read_text())
    try:
        raw = data["config_ini"]
    except KeyError as exc:
        raise ConfigError(f"{path}: not a manifest (no config_ini block)") from exc
    return [f"{sec}.{k}={v}" for sec, block in raw.items() for k, v in block.items()]


PLOT_SCRIPT = '''"""Plot the CSV tables written next to this file (requires matplotlib)."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).parent


def table(name):
    with open(here / name) as fh:
        fh.readline()
        rows = list(csv.DictReader(fh))
    return rows


fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for path in sorted(here.glob("m2_*.csv")):
    rows = table(path.name)
    t = [float(r["t"]) for r in rows]
    axes[0].errorbar(t, [float(r["m2"]) for r in rows], yerr=[float(r["stderr"] or 0) for r in rows], fmt=".")
axes[0].set_xlabel("t")
axes[0].set_ylabel("sum |x|^2 E|psi_t(x)|^2")
for path in sorted(here.glob("cf_*.csv")):
    rows = [r for r in table(path.name) if float(r["t"]) == max(float(q["t"]) for q in table(path.name))]
    axes[1].semilogy([float(r["k_snapped"]) ** 2 for r in rows], [max(float(r["re"]), 1e-12) for r in rows], "o")
axes[1].set_xlabel("k^2")
axes[1].set_ylabel("Re CF")
fig.tight_layout()
fig.savefig(here / "summary.png", dpi=120)
'''
