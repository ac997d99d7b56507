"""Serialization: trajectories, states, CSV tables and run manifests."""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._base import RestFrameError, ValidationError
from .canonical import RelativeState, WignerPhaseState
from .frames import WorldlineSample

MAGIC = b"WIGTRAJ1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")


class FormatError(RestFrameError, OSError):
    """Malformed or unreadable file."""


def _float(x) -> float:
    return float(x)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


def trajectory_records(samples: Iterable[WorldlineSample]) -> Iterable[dict]:
    for s in samples:
        for i in range(s.x.shape[0]):
            yield {"tau": _float(s.tau), "particle": i, "x": [_float(v) for v in s.x[i]],
                   "p": [_float(v) for v in s.p[i]]}


def write_trajectory_jsonl(path: str | Path, samples: Sequence[WorldlineSample]) -> Path:
    """One JSON record per ``(tau, particle)`` with fields ``tau``, ``particle``, ``x``, ``p``."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in trajectory_records(samples):
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return path


def read_trajectory_jsonl(path: str | Path) -> list[WorldlineSample]:
    groups: dict[float, list[dict]] = {}
    try:
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    groups.setdefault(rec["tau"], []).append(rec)
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"bad trajectory record in {path}: {exc}") from exc
    out = []
    for tau, recs in groups.items():
        recs.sort(key=lambda r: r["particle"])
        out.append(WorldlineSample(tau, np.array([r["x"] for r in recs]), np.array([r["p"] for r in recs])))
    return out


def write_trajectory_binary(path: str | Path, samples: Sequence[WorldlineSample]) -> Path:
    """Little-endian binary: 16-byte header (magic, version, N) then per sample ``tau, x[N,4], p[N,4]`` as f64."""
    samples = list(samples)
    if not samples:
        raise ValidationError("no samples to write")
    n = samples[0].x.shape[0]
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n))
        for s in samples:
            if s.x.shape[0] != n:
                raise ValidationError("all samples must hold the same number of particles")
            fh.write(np.asarray([s.tau], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.x, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.p, dtype="<f8").tobytes())
    return path


def read_trajectory_binary(path: str | Path) -> list[WorldlineSample]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("file shorter than the header")
    magic, version, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("bad magic header")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    rec = 1 + 8 * n
    if (len(data) - _HEADER.size) % (8 * rec):
        raise FormatError("truncated trajectory body")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(-1, rec)
    return [WorldlineSample(r[0], r[1 : 1 + 4 * n].reshape(n, 4), r[1 + 4 * n :].reshape(n, 4)) for r in body]


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


def state_to_dict(state: WignerPhaseState, masses: Sequence[float]) -> dict:
    m = [float(x) for x in masses]
    if len(m) != state.n:
        raise ValidationError("masses and state disagree on N")
    return {"N": state.n, "masses": m, "tau": state.tau, "eta": state.eta.tolist(), "kappa": state.kappa.tolist()}


def state_from_dict(d: dict) -> tuple[WignerPhaseState, np.ndarray]:
    try:
        s = WignerPhaseState(d["tau"], np.array(d["eta"], dtype=float), np.array(d["kappa"], dtype=float))
        m = np.array(d["masses"], dtype=float)
        if int(d["N"]) != s.n or m.size != s.n:
            raise ValidationError("N does not match the arrays")
    except KeyError as exc:
        raise ValidationError(f"missing field {exc}") from exc
    return s, m


def relative_to_dict(r: RelativeState, masses: Sequence[float]) -> dict:
    return {"N": r.rho.shape[0] + 1, "masses": [float(x) for x in masses], "tau": r.tau, "rho": r.rho.tolist(),
            "pi": r.pi.tolist()}


def relative_from_dict(d: dict) -> tuple[RelativeState, np.ndarray]:
    r = RelativeState(d["tau"], np.array(d["rho"], dtype=float), np.array(d["pi"], dtype=float))
    m = np.array(d["masses"], dtype=float)
    if int(d["N"]) != r.rho.shape[0] + 1 or m.size != int(d["N"]):
        raise ValidationError("N does not match the arrays")
    return r, m


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    """Locale-independent shortest round-trip representation."""
    return repr(float(x))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("empty CSV")
    return rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode("utf-8")).hexdigest()


def write_manifest(path: str | Path, config: dict, seed: int | None, files: Sequence[str | Path],
                   wall_time: float, versions: dict) -> Path:
    """Manifest listing every output file with its SHA-256 content hash."""
    entries = [{"path": Path(f).name, "sha256": sha256_file(f), "bytes": Path(f).stat().st_size} for f in files]
    return write_json(path, {"config": config, "config_sha256": config_hash(config), "seed": seed,
                             "files": entries, "wall_time_s": wall_time, "versions": versions})
