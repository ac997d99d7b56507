"""Command-line interface.

Every run is reproducible from its configuration and seed.  Settings come
from built-in defaults, then an optional INI file (``--config``), then
command-line flags; later sources win.  Output files are written to
``--out`` together with ``manifest.json`` listing their SHA-256 hashes.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import io as rio
from ._base import NumericError, ValidationError
from .canonical import (
    RelativeState,
    build_separation_matrix,
    internal_generators,
    rest_frame_state,
    to_relative,
)
from .dynamics import galilei_limit_scan, integrate
from .ensembles import (
    REGIMES,
    EnsembleSpec,
    analytic_Z_free_nr,
    analytic_Z_restframe_boost,
    mc_partition,
    sample_shell,
    inverse_laplace_Z_rel,
)
from .frames import JacobiData, worldlines_from_wigner
from .kinetic import default_speed_bins, estimate_f1, juttner_temperature
from .models import energies, free_model, quadratic_model
from .noninertial import (
    ClockProfile,
    DifferentialRotation,
    GalileiFrame,
    LapseBump,
    RelNonInertialFrame,
    galilei_generators,
    moller_check,
    noninertial_partition,
    rel_noninertial_generators,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SUBCOMMANDS = ("simulate", "sample", "partition", "transform", "limit", "noninertial")


@dataclass
class RunConfig:
    """All settings of one run; round-trips through :meth:`to_dict` and INI files."""

    subcommand: str = "partition"
    N: int = 3
    masses: list[float] | None = None
    m: float = 1.0
    g: float = 0.0
    c: float = 1.0
    model: str = "free"
    regime: str = "nonrel-standard"
    E: float = 10.0
    E_grid: list[float] | None = None
    R: float | None = None
    V: float | None = None
    volume: str | None = None
    extended: bool = False
    S: list[float] | None = None
    samples: int = 1_000_000
    method: str = "kernel"
    bandwidth: float | None = None
    seed: int = 0
    threads: int | None = None
    tau: float = 100.0
    tol: float = 1e-10
    integrator: str = "RK45"
    n_out: int = 201
    states: int = 1000
    bins: int = 40
    state_file: str | None = None
    to: str = "relative"
    c_values: list[float] = field(default_factory=lambda: [10.0, 100.0, 1000.0, 10000.0])
    frame_kind: str = "rotation"
    frame_amplitude: float = 0.0
    frame_width: float = 1.0
    frame_omega: float = 0.0
    frame_rigid: bool = False
    frame_coefficients: list[float] | None = None
    frame_origin: list[float] | None = None
    action: str = "check"
    out: str = "."
    format: str = "jsonl"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    def mass_array(self) -> np.ndarray:
        if self.masses is not None:
            return np.asarray(self.masses, dtype=float)
        return np.full(int(self.N), float(self.m))

    def radius(self) -> float:
        if self.R is not None:
            return float(self.R)
        if self.V is not None:
            return (3 * float(self.V) / (4 * math.pi)) ** (1.0 / 3.0)
        return 1.0


_LIST_KEYS = {"masses", "E_grid", "S", "c_values", "frame_coefficients", "frame_origin"}
_BOOL_KEYS = {"extended", "frame_rigid"}
_INT_KEYS = {"N", "samples", "seed", "threads", "n_out", "states", "bins"}
_FLOAT_KEYS = {"m", "g", "c", "E", "R", "V", "bandwidth", "tau", "tol", "frame_amplitude", "frame_width",
               "frame_omega"}


def _parse_number(text: str) -> float:
    return float(text.strip())


def _coerce(key: str, value):
    if value is None:
        return None
    if key in _LIST_KEYS:
        if isinstance(value, str):
            return [_parse_number(v) for v in value.replace(";", ",").split(",") if v.strip()]
        return [float(v) for v in value]
    if key in _BOOL_KEYS:
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if key in _INT_KEYS:
        f = _parse_number(value) if isinstance(value, str) else float(value)
        if f != int(f):
            raise ValidationError(f"{key} must be an integer")
        return int(f)
    if key in _FLOAT_KEYS:
        return _parse_number(value) if isinstance(value, str) else float(value)
    return value


def load_ini(path: str | Path) -> dict:
    """Flat key/value settings from the ``[run]`` and ``[frame]`` sections (keys are case-insensitive)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    canonical = {f.name.lower(): f.name for f in fields(RunConfig)}
    try:
        with Path(path).open(encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise rio.FormatError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        prefix = "frame_" if section == "frame" else ""
        for k, v in cp.items(section):
            if k == "subcommand":
                continue
            key = k if (section != "frame" or k.startswith("frame_")) else prefix + k
            out[canonical.get(key.lower(), key)] = v
    return out


def dump_ini(cfg: RunConfig, path: str | Path) -> Path:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    run, frame = {}, {}
    for k, v in cfg.to_dict().items():
        if v is None:
            continue
        text = ",".join(repr(float(x)) for x in v) if isinstance(v, list) else str(v)
        (frame if k.startswith("frame_") else run)[k[6:] if k.startswith("frame_") else k] = text
    cp["run"] = run
    cp["frame"] = frame
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        cp.write(fh)
    return path


def build_config(subcommand: str, flags: dict, ini: dict | None = None) -> RunConfig:
    merged = {"subcommand": subcommand}
    for source in (ini or {}, flags):
        for k, v in source.items():
            if v is not None:
                merged[k] = _coerce(k, v)
    return RunConfig.from_dict(merged)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _ensemble_spec(cfg: RunConfig, E: float | None = None) -> EnsembleSpec:
    masses = cfg.mass_array()
    model = (quadratic_model(masses, cfg.g, cfg.c) if cfg.model == "quadratic" else free_model(masses, cfg.c))
    return EnsembleSpec(cfg.regime, cfg.E if E is None else E, cfg.radius(), cfg.N, model=model,
                        S=cfg.S, extended=cfg.extended, volume=cfg.volume)


def validate(cfg: RunConfig) -> list[str]:
    """Every problem that would stop ``cfg`` from running; empty when runnable."""
    out = []
    if cfg.subcommand not in SUBCOMMANDS:
        out.append(f"subcommand must be one of {SUBCOMMANDS}")
    if cfg.N < 1:
        out.append("N must be at least 1")
    if cfg.masses is not None and len(cfg.masses) != cfg.N:
        out.append(f"{len(cfg.masses)} masses given but N={cfg.N}")
    if np.any(cfg.mass_array() <= 0):
        out.append("masses must be positive")
    if not cfg.c > 0:
        out.append("c must be positive")
    if cfg.model not in ("free", "quadratic"):
        out.append("model must be 'free' or 'quadratic'")
    if cfg.samples < 1:
        out.append("samples must be positive")
    if cfg.threads is not None and cfg.threads < 1:
        out.append("threads must be positive")
    if cfg.format not in ("jsonl", "csv", "binary"):
        out.append("format must be jsonl, csv or binary")
    if cfg.R is not None and cfg.V is not None:
        out.append("give R or V, not both")
    if cfg.S is not None and len(cfg.S) != 3:
        out.append("S needs three components")
    if cfg.subcommand in ("partition", "sample") or (cfg.subcommand == "noninertial" and cfg.action == "partition"):
        if cfg.regime not in REGIMES:
            out.append(f"regime must be one of {REGIMES}")
        elif not out:
            energies_ = cfg.E_grid if cfg.E_grid else [cfg.E]
            for E in energies_:
                try:
                    _ensemble_spec(cfg, E)
                except ValidationError as exc:
                    out.extend(p for p in str(exc).split("; ") if p not in out)
    if cfg.subcommand == "partition" and cfg.method not in ("kernel", "indicator", "analytic"):
        out.append("method must be kernel, indicator or analytic")
    if cfg.subcommand == "simulate":
        if cfg.N < 2:
            out.append("simulate needs N >= 2")
        if not 0 < cfg.tol < 1:
            out.append("tol must lie in (0, 1)")
        if cfg.tau == 0:
            out.append("tau span must be non-zero")
    if cfg.subcommand == "transform":
        if cfg.state_file is None:
            out.append("transform needs --state-file")
        if cfg.to not in ("relative", "absolute", "worldlines"):
            out.append("--to must be relative, absolute or worldlines")
    if cfg.subcommand == "limit" and (len(cfg.c_values) < 2 or min(cfg.c_values) <= 0):
        out.append("limit needs at least two positive c values")
    if cfg.subcommand == "noninertial":
        if cfg.action not in ("check", "generators", "partition", "galilei"):
            out.append("action must be check, generators, partition or galilei")
        if cfg.frame_kind not in ("flat", "lapse", "clock", "rotation"):
            out.append("frame kind must be flat, lapse, clock or rotation")
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _initial_state(cfg: RunConfig):
    """Rest-frame state drawn from the seed (or loaded from ``state_file``)."""
    if cfg.state_file:
        state, _ = rio.state_from_dict(json.loads(Path(cfg.state_file).read_text(encoding="utf-8")))
        return state
    from .rng import generator

    gen = generator(cfg.seed, "initial-state")
    masses = cfg.mass_array()
    sep = build_separation_matrix(masses)
    rel = RelativeState(0.0, gen.normal(0.0, 0.5, (cfg.N - 1, 3)), gen.normal(0.0, 0.5, (cfg.N - 1, 3)))
    return rest_frame_state(rel, sep, _model(cfg))


def _model(cfg: RunConfig):
    masses = cfg.mass_array()
    return quadratic_model(masses, cfg.g, cfg.c) if cfg.model == "quadratic" else free_model(masses, cfg.c)


def _write_worldlines(cfg: RunConfig, outdir: Path, samples) -> Path:
    if cfg.format == "binary":
        return rio.write_trajectory_binary(outdir / "trajectory.bin", samples)
    if cfg.format == "csv":
        rows = [[s.tau, i, *s.x[i], *s.p[i]] for s in samples for i in range(s.x.shape[0])]
        return rio.write_csv(outdir / "trajectory.csv", ["tau", "particle", "x0", "x1", "x2", "x3", "p0", "p1",
                                                          "p2", "p3"], rows)
    return rio.write_trajectory_jsonl(outdir / "trajectory.jsonl", samples)


def cmd_simulate(cfg: RunConfig, outdir: Path) -> tuple[list[Path], dict]:
    model = _model(cfg)
    state = _initial_state(cfg)
    traj = integrate(state, model, cfg.tau, tol=cfg.tol, method=cfg.integrator, n_out=cfg.n_out)
    j = JacobiData(np.zeros(3), np.zeros(3))
    samples = [worldlines_from_wigner(s, energies(s.eta, s.kappa, model), j) for s in traj.states()]
    files = [_write_worldlines(cfg, outdir, samples)]
    files.append(rio.write_csv(outdir / "diagnostics.csv", ["tau", "dMc_rel", "resP", "resK"],
                               traj.diagnostics_table().tolist()))
    summary = {"max_dMc_rel": float(np.max(np.abs(traj.dMc_rel))), "max_dS": float(np.max(np.abs(traj.dS))),
               "max_resP": float(np.max(traj.resP)), "max_resK": float(np.max(traj.resK)),
               "collisions": traj.collisions.tolist()}
    files.append(rio.write_json(outdir / "summary.json", summary))
    return files, summary


def _partition_one(cfg: RunConfig, E: float) -> dict:
    spec = _ensemble_spec(cfg, E)
    m = float(spec.model.masses[0])
    if cfg.method == "analytic":
        if spec.regime == "nonrel-standard" and spec.model.kind == "free":
            est = analytic_Z_free_nr(E, spec.V, spec.N, m)
        elif spec.regime == "nonrel-restframe" and spec.model.kind == "free" and not spec.extended:
            est = analytic_Z_restframe_boost(E, spec.V, spec.N, m)
        elif spec.regime == "rel-restframe" and spec.N == 1:
            from .ensembles import _analytic

            est = _analytic(inverse_laplace_Z_rel(E, spec.V, 1, m, spec.model.c), method="inverse-laplace")
        else:
            raise ValidationError("no closed form for this ensemble; use --method kernel")
    else:
        est = mc_partition(spec, cfg.samples, seed=cfg.seed, method=cfg.method, bandwidth=cfg.bandwidth,
                           threads=cfg.threads)
    rec = {"regime": spec.regime, "E": E, "V": spec.V, "N": spec.N, "m": m, "g": cfg.g}
    rec.update(est.to_record())
    return rec


def cmd_partition(cfg: RunConfig, outdir: Path) -> tuple[list[Path], dict]:
    if cfg.E_grid:
        recs = [_partition_one(cfg, E) for E in cfg.E_grid]
        keys = ["regime", "E", "V", "N", "m", "g", "method", "value", "stderr", "n", "seed"]
        path = rio.write_csv(outdir / "partition.csv", keys, [[r[k] for k in keys] for r in recs])
        return [path], {"records": recs}
    rec = _partition_one(cfg, cfg.E)
    return [rio.write_json(outdir / "partition.json", rec)], rec


def cmd_sample(cfg: RunConfig, outdir: Path) -> tuple[list[Path], dict]:
    spec = _ensemble_spec(cfg)
    shell = sample_shell(spec, cfg.states, seed=cfg.seed)
    masses = spec.model.masses
    path_states = outdir / "states.jsonl"
    with path_states.open("w", encoding="utf-8", newline="\n") as fh:
        for s in shell.states:
            fh.write(json.dumps(rio.state_to_dict(s, masses), separators=(",", ":")) + "\n")
    m, c = float(masses[0]), spec.model.c
    meta = {"n_states": len(shell.states), "acceptance": shell.acceptance, "tau_int": shell.tau_int,
            "thin": shell.thin, "sampler": shell.method, "seed": cfg.seed, "m": m, "c": c}
    files = [path_states]
    if spec.regime == "rel-restframe":
        k = np.concatenate([s.kappa for s in shell.states])
        mean_E = float(np.mean(np.sqrt((m * c) ** 2 + np.sum(k * k, axis=1)) * c))
        T = juttner_temperature(mean_E, m, c)
        bins = default_speed_bins(m, T, c, cfg.bins)
        hist = estimate_f1(shell.states, bins, speed=True)
        centers = 0.5 * (hist.edges[0][1:] + hist.edges[0][:-1])
        files.append(rio.write_csv(outdir / "histogram.csv", ["bin_center", "density"],
                                   [[float(a), float(b)] for a, b in zip(centers, hist.density)]))
        meta.update({"T": T, "edges": [e.tolist() for e in hist.edges], "n": hist.n})
    files.append(rio.write_json(outdir / "sample_meta.json", meta))
    return files, meta


def cmd_transform(cfg: RunConfig, outdir: Path) -> tuple[list[Path], dict]:
    d = json.loads(Path(cfg.state_file).read_text(encoding="utf-8"))
    if "rho" in d:
        if cfg.to != "absolute":
            raise ValidationError("a relative state can only be transformed --to absolute")
        r, masses = rio.relative_from_dict(d)
        sep = build_separation_matrix(masses)
        model = quadratic_model(masses, cfg.g, cfg.c) if cfg.model == "quadratic" else free_model(masses, cfg.c)
        state = rest_frame_state(r, sep, model)
        out = rio.state_to_dict(state, masses)
        return [rio.write_json(outdir / "state.json", out)], out
    state, masses = rio.state_from_dict(d)
    model = quadratic_model(masses, cfg.g, cfg.c) if cfg.model == "quadratic" else free_model(masses, cfg.c)
    if cfg.to == "relative":
        sep = build_separation_matrix(masses)
        eta_plus, kappa_plus, rel = to_relative(state, sep)
        out = rio.relative_to_dict(rel, masses)
        out.update({"eta_plus": eta_plus.tolist(), "kappa_plus": kappa_plus.tolist()})
        return [rio.write_json(outdir / "relative.json", out)], out
    if cfg.to == "worldlines":
        j = JacobiData(np.zeros(3), np.zeros(3))
        w = worldlines_from_wigner(state, energies(state.eta, state.kappa, model), j)
        path = _write_worldlines(cfg, outdir, [w])
        gen = internal_generators(state, model)
        return [path], {"Mc": gen.Mc, "S": gen.S.tolist()}
    raise ValidationError("an absolute state can be transformed --to relative or --to worldlines")


def cmd_limit(cfg: RunConfig, outdir: Path) -> tuple[list[Path], dict]:
    model = _model(cfg)
    state = _initial_state(cfg)
    scan = galilei_limit_scan(state, model, cfg.c_values)
    path = rio.write_csv(outdir / "limit.csv", ["c", "deviation"],
                         [[float(a), float(b)] for a, b in zip(scan.c, scan.deviation)])
    report = {"slope": scan.slope, "intercept": scan.intercept, "c": scan.c.tolist(),
              "deviation": scan.deviation.tolist()}
    return [path, rio.write_json(outdir / "limit.json", report)], report


def frame_from_config(cfg: RunConfig) -> RelNonInertialFrame:
    kind = cfg.frame_kind
    if kind == "flat":
        return RelNonInertialFrame()
    if kind == "lapse":
        return RelNonInertialFrame(lapse=LapseBump(cfg.frame_amplitude, cfg.frame_width, cfg.frame_omega))
    if kind == "clock":
        coeffs = tuple(cfg.frame_coefficients) if cfg.frame_coefficients else (0.0, 1.0)
        return RelNonInertialFrame(lapse=ClockProfile(coeffs))
    return RelNonInertialFrame(shift=DifferentialRotation(cfg.frame_omega, cfg.frame_width, rigid=cfg.frame_rigid))


def cmd_noninertial(cfg: RunConfig, outdir: Path) -> tuple[list[Path], dict]:
    frame = frame_from_config(cfg)
    if cfg.action == "check":
        r = cfg.radius()
        axis = np.linspace(-4 * r, 4 * r, 17)
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
        rep = moller_check(frame, np.linspace(0.0, cfg.tau, 5), grid)
        out = asdict(rep)
    elif cfg.action == "generators":
        state = _initial_state(cfg)
        gen = rel_noninertial_generators(frame, state, free_model(cfg.mass_array(), cfg.c))
        out = {"Mc": gen.Mc, "P": gen.P.tolist(), "S": gen.S.tolist(), "K": gen.K.tolist(), "calMc": gen.calMc,
               "calMc_lapse_form": gen.calMc_lapse_form}
    elif cfg.action == "galilei":
        state = _initial_state(cfg)
        origin = np.asarray(cfg.frame_origin or [0.0, 0.0, 0.0], dtype=float).reshape(-1, 3)
        gf = GalileiFrame("rigid", origin, (0.0, cfg.frame_omega))
        gg = galilei_generators(gf, state.eta, state.kappa, cfg.tau, cfg.mass_array())
        out = {"E": gg.E, "P": gg.P.tolist(), "J": gg.J.tolist(), "K": gg.K.tolist(), "calM": gg.calM}
    else:
        est = noninertial_partition(_ensemble_spec(cfg), frame, cfg.samples, seed=cfg.seed, tau=cfg.tau,
                                    bandwidth=cfg.bandwidth, threads=cfg.threads)
        out = {"regime": cfg.regime, "E": cfg.E, "V": _ensemble_spec(cfg).V, "N": cfg.N, "m": cfg.m, "g": cfg.g}
        out.update(est.to_record())
    return [rio.write_json(outdir / f"noninertial_{cfg.action}.json", out)], out


COMMANDS = {"simulate": cmd_simulate, "partition": cmd_partition, "sample": cmd_sample,
            "transform": cmd_transform, "limit": cmd_limit, "noninertial": cmd_noninertial}


def _versions() -> dict:
    import mpmath
    import scipy

    return {"restframe": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "mpmath": mpmath.__version__}


def run(cfg: RunConfig) -> int:
    """Execute ``cfg``; returns the process exit code."""
    problems = validate(cfg)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_VALIDATION
    env_threads = os.environ.get("WIGNER_THREADS")
    if env_threads:
        try:
            cfg.threads = max(1, int(env_threads))
        except ValueError:
            print("error: WIGNER_THREADS must be an integer", file=sys.stderr)
            return EXIT_VALIDATION
    outdir = Path(cfg.out)
    t0 = time.perf_counter()
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        files, result = COMMANDS[cfg.subcommand](cfg, outdir)
        files.append(dump_ini(cfg, outdir / "config.ini"))
        rio.write_manifest(outdir / "manifest.json", cfg.to_dict(), cfg.seed, files, time.perf_counter() - t0,
                           _versions())
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, rio.FormatError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(result, sort_keys=True, default=float))
    return EXIT_OK


_HELP = {
    "simulate": "Integrate the Hamilton flow of Mc. Writes trajectory.{jsonl,csv,bin} "
                "(tau, particle, x[4], p[4]) and diagnostics.csv (tau, dMc_rel, resP, resK).",
    "sample": "Draw states on the energy shell. Writes states.jsonl, and for the relativistic regime "
              "histogram.csv (bin_center, density of |kappa|) with sample_meta.json (edges, n, seed, T, m, c).",
    "partition": "Estimate the micro-canonical partition function. Writes partition.json, or partition.csv "
                 "(regime, E, V, N, m, g, method, value, stderr, n, seed) with --E-grid.",
    "transform": "Convert a state file: --to relative, absolute or worldlines.",
    "limit": "Deviation of the relativistic internal energy from its Galilean value over --c-values. "
             "Writes limit.csv (c, deviation) and the fitted log-log slope.",
    "noninertial": "Non-inertial frames: --action check (admissibility), generators, galilei or partition.",
}


def _add_common(p: argparse.ArgumentParser, with_c: bool = True) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="INI file with [run] and [frame] sections")
    p.add_argument("--N", type=int, default=S)
    p.add_argument("--masses", default=S, help="comma-separated masses")
    p.add_argument("--m", type=float, default=S, help="common particle mass")
    p.add_argument("--g", type=float, default=S, help="coupling of the quadratic model")
    if with_c:
        p.add_argument("--c", type=float, default=S, help="speed of light")
    p.add_argument("--model", choices=("free", "quadratic"), default=S)
    p.add_argument("--seed", type=lambda s: int(float(s)), default=S)
    p.add_argument("--threads", type=int, default=S)
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--format", choices=("jsonl", "csv", "binary"), default=S)
    p.add_argument("--state-file", dest="state_file", default=S)


def _add_ensemble(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--regime", choices=REGIMES, default=S)
    p.add_argument("--E", type=float, default=S, help="energy")
    p.add_argument("--E-grid", dest="E_grid", default=S, help="comma-separated energies (sweep mode)")
    p.add_argument("--R", type=float, default=S, help="container radius")
    p.add_argument("--V", type=float, default=S, help="container volume")
    p.add_argument("--volume", choices=("particle", "relative"), default=S)
    p.add_argument("--extended", action="store_true", default=S)
    p.add_argument("--S", default=S, help="spin target, comma-separated")
    p.add_argument("--samples", type=lambda s: int(float(s)), default=S)
    p.add_argument("--bandwidth", type=float, default=S)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="restframe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    S = argparse.SUPPRESS
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=_HELP[name], description=_HELP[name])
        _add_common(p, with_c=name != "limit")
        if name in ("partition", "sample", "noninertial"):
            _add_ensemble(p)
        if name == "partition":
            p.add_argument("--method", choices=("kernel", "indicator", "analytic"), default=S)
        if name == "simulate":
            p.add_argument("--tau", type=float, default=S, help="integration span")
            p.add_argument("--tol", type=float, default=S)
            p.add_argument("--integrator", choices=("RK45", "DOP853", "midpoint"), default=S)
            p.add_argument("--n-out", dest="n_out", type=int, default=S)
        if name == "sample":
            p.add_argument("--states", type=int, default=S)
            p.add_argument("--bins", type=int, default=S)
        if name == "transform":
            p.add_argument("--to", choices=("relative", "absolute", "worldlines"), default=S)
        if name == "limit":
            p.add_argument("--c", "--c-values", dest="c_values", default=S, help="comma-separated values of c")
        if name == "noninertial":
            p.add_argument("--action", choices=("check", "generators", "galilei", "partition"), default=S)
            p.add_argument("--frame-kind", dest="frame_kind", choices=("flat", "lapse", "clock", "rotation"),
                           default=S)
            p.add_argument("--amplitude", dest="frame_amplitude", type=float, default=S)
            p.add_argument("--width", dest="frame_width", type=float, default=S)
            p.add_argument("--omega", dest="frame_omega", type=float, default=S)
            p.add_argument("--rigid", dest="frame_rigid", action="store_true", default=S)
            p.add_argument("--coefficients", dest="frame_coefficients", default=S)
            p.add_argument("--origin", dest="frame_origin", default=S)
            p.add_argument("--tau", type=float, default=S, help="frame time")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    ns = vars(parser.parse_args(argv))
    sub = ns.pop("subcommand")
    ini_path = ns.pop("config", None)
    try:
        ini = load_ini(ini_path) if ini_path else {}
        if sub == "noninertial" and "tau" not in ns and "tau" not in ini:
            ns["tau"] = 0.0
        cfg = build_config(sub, ns, ini)
    except rio.FormatError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
