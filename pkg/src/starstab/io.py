"""Versioned CSV/JSON artifacts, profile round-trips and run manifests."""
from __future__ import annotations

import hashlib
import json
import math
import platform
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .eos import build_enthalpy, law_from_config
from .errors import ConfigError
from .star import StarProfile, profile_from_arrays

CSV_VERSION = "starstab-v1"


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))
    return Path(path)


def load_config(path) -> dict:
    """Parse a JSON config; syntax errors are reported with line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def write_csv(path, kind: str, columns: dict):
    """Header ``# starstab-v1 <kind>``, a column-name line, then rows at full precision."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    with open(path, "w") as fh:
        fh.write(f"# {CSV_VERSION} {kind}\n")
        fh.write(",".join(names) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")
    return Path(path)


def read_csv(path, expect_kind: Optional[str] = None):
    """(kind, {name: array}) from a versioned CSV."""
    path = Path(path)
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 3 or head[0] != "#" or head[1] != CSV_VERSION:
            raise ConfigError(f"{path}:1: expected '# {CSV_VERSION} <kind>' header")
        kind = head[2]
        if expect_kind is not None and kind != expect_kind:
            raise ConfigError(f"{path}:1: expected kind '{expect_kind}', found '{kind}'")
        names = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(names):
        raise ConfigError(f"{path}: {len(names)} column names but {data.shape[1]} columns")
    return kind, {n: data[:, i] for i, n in enumerate(names)}


def write_profile(stem, profile: StarProfile):
    """``stem.csv`` (r, rho, m, V) and ``stem.json`` (scalars and the pressure-law record)."""
    stem = Path(stem)
    csv = write_csv(stem.with_suffix(".csv"), "profile",
                    {"r": profile.r, "rho": profile.rho, "m": profile.m, "V": profile.V})
    meta = {
        "mu": profile.mu, "R": profile.R, "M": profile.M, "residual": profile.residual,
        "eos": profile.law.config, "label": profile.law.label, "meta": profile.meta,
    }
    js = write_json(stem.with_suffix(".json"), meta)
    return csv, js


def read_profile(stem) -> StarProfile:
    """Inverse of :func:`write_profile`; the enthalpy is rebuilt from the stored law record."""
    stem = Path(stem)
    meta = load_config(stem.with_suffix(".json"))
    _, cols = read_csv(stem.with_suffix(".csv"), "profile")
    law = law_from_config(meta["eos"])
    prof = profile_from_arrays(build_enthalpy(law), cols["r"], cols["rho"], cols["m"],
                               meta=meta.get("meta"))
    prof.mu, prof.R, prof.M = float(meta["mu"]), float(meta["R"]), float(meta["M"])
    prof.u = np.asarray(-prof.M / prof.R - cols["V"])
    return prof


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def environment() -> dict:
    import scipy
    return {"starstab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(outdir, config: dict, files, wall_time: float, status: str = "ok", extra=None):
    """manifest.json listing every output file with its sha256.

    The wall time lives only here, so the other artifacts stay byte-identical
    between reruns of the same config.
    """
    outdir = Path(outdir)
    entries = {}
    for f in sorted({Path(f) for f in files}):
        entries[str(f.relative_to(outdir))] = sha256(f)
    man = {"config": config, "files": entries, "versions": environment(), "wall_time_s": wall_time,
           "status": status}
    if extra:
        man.update(extra)
    return write_json(outdir / "manifest.json", man)
