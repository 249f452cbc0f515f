"""Command-line driver.

Configuration comes from an optional TOML file plus ``--set section.key=value``
overrides (later settings win).  Numerical outputs (CSV tables, binary
snapshots) are written with full-precision deterministic formatting so a
rerun of the same command produces bit-identical files; timing and
environment information goes to a separate provenance JSON that makes no
such promise.

Exit codes: 0 success, 2 usage or configuration error, 3 solver divergence
or numerical failure, 4 incompatible snapshot input.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
import time

import numpy as np

from . import __version__, bifurcation, continuation, hb, stability
from .errors import NumericalError
from .nlsolve import NewtonSettings, deflated_newton_solve, newton_solve
from .problem import get_problem

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib


SNAPSHOT_MAGIC = b"BSNP"
SNAPSHOT_VERSION = 1
SNAPSHOT_KINDS = ("steady", "mode", "fourier", "bifpoint")


class ConfigError(Exception):
    pass


class SnapshotError(Exception):
    pass


# ---------------------------------------------------------------------------
# snapshot file format: magic, u32 version, u32 header length, JSON header,
# then the concatenated little-endian float64 blocks listed in the header.


def write_snapshot(path, kind, problem_name, dim, params, blocks, extras=None):
    """Write a binary state snapshot; payload floats are stored raw so a
    read-write cycle is bit-exact."""
    if kind not in SNAPSHOT_KINDS:
        raise ValueError(f"unknown snapshot kind {kind!r}")
    blocks = [np.asarray(b, dtype=np.float64).ravel() for b in blocks]
    header = {
        "format": SNAPSHOT_VERSION,
        "kind": kind,
        "problem": problem_name,
        "dim": int(dim),
        "params": {k: float(v) for k, v in params.items()},
        "blocks": [int(b.size) for b in blocks],
        "extras": extras or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", SNAPSHOT_VERSION))
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for b in blocks:
            fh.write(b.astype("<f8").tobytes())


def read_snapshot(path):
    """Read a snapshot, returning (header dict, list of float64 arrays)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from exc
    if data[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path} is not a snapshot file (bad magic)")
    version = struct.unpack_from("<I", data, 4)[0]
    if version > SNAPSHOT_VERSION:
        raise SnapshotError(f"{path} uses snapshot format {version}, "
                            f"newer than supported {SNAPSHOT_VERSION}")
    hlen = struct.unpack_from("<I", data, 8)[0]
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"{path} has a corrupt header: {exc}") from exc
    if header.get("kind") not in SNAPSHOT_KINDS:
        raise SnapshotError(f"{path} has unknown kind {header.get('kind')!r}")
    offset = 12 + hlen
    blocks = []
    for size in header.get("blocks", []):
        nbytes = 8 * size
        chunk = data[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise SnapshotError(f"{path} payload is truncated")
        blocks.append(np.frombuffer(chunk, dtype="<f8").astype(np.float64))
        offset += nbytes
    return header, blocks


def _fourier_to_blocks(state):
    blocks = [np.real(state.coeffs[0])]
    for m in range(1, state.order + 1):
        blocks.append(np.real(state.coeffs[m]))
        blocks.append(np.imag(state.coeffs[m]))
    return blocks


def _fourier_from_blocks(header, blocks):
    order = int(header["extras"]["order"])
    dim = int(header["dim"])
    coeffs = np.zeros((order + 1, dim), dtype=np.complex128)
    coeffs[0] = blocks[0]
    for m in range(1, order + 1):
        coeffs[m] = blocks[2 * m - 1] + 1j * blocks[2 * m]
    return hb.FourierState(coeffs, float(header["extras"]["omega"]))


# ---------------------------------------------------------------------------
# configuration


def _parse_set(item):
    if "=" not in item:
        raise ConfigError(f"--set needs section.key=value, got {item!r}")
    key, value = item.split("=", 1)
    key = key.strip()
    if "." not in key:
        raise ConfigError(f"--set key must be section.key, got {key!r}")
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value
    return key.split("."), parsed


def load_config(path=None, overrides=()):
    config = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                config = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    for item in overrides:
        keys, value = _parse_set(item)
        node = config
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {'.'.join(keys)} crosses a scalar")
        node[keys[-1]] = value
    return config


def _section(config, name):
    sec = config.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def build_problem(config):
    sec = _section(config, "problem")
    name = sec.get("name")
    if not name:
        raise ConfigError("problem.name is required (e.g. --set problem.name=...)")
    options = sec.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("problem.options must be a table")
    try:
        problem = get_problem(name, **options)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    p = problem.parameters
    values = sec.get("values", {})
    if values:
        try:
            p = p.with_updates(**{k: float(v) for k, v in values.items()})
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad problem.values: {exc}") from exc
    active = sec.get("active")
    if active is not None:
        try:
            p = p.with_active(active)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad problem.active: {exc}") from exc
    return problem, p


def _newton_settings(config):
    sec = _section(config, "newton")
    kw = {}
    for key in ("abs_tol", "rel_tol"):
        if key in sec:
            kw[key] = float(sec[key])
    if "max_iterations" in sec:
        kw["max_iterations"] = int(sec["max_iterations"])
    if "damping" in sec:
        kw["damping"] = str(sec["damping"])
    try:
        return NewtonSettings(**kw)
    except ValueError as exc:
        raise ConfigError(f"bad [newton] settings: {exc}") from exc


def _step_control(config):
    sec = _section(config, "step")
    kw = {}
    for key in ("h0", "h_min", "h_max"):
        if key in sec:
            kw[key] = float(sec[key])
    if "target_iterations" in sec:
        kw["target_iterations"] = int(sec["target_iterations"])
    try:
        return continuation.StepControl(**kw)
    except ValueError as exc:
        raise ConfigError(f"bad [step] settings: {exc}") from exc


def _monitor(config):
    sec = _section(config, "monitor")
    if not sec.get("enabled", False):
        return None
    shift = sec.get("shift", [0.0, 0.0])
    if isinstance(shift, (int, float)):
        shift = [float(shift), 0.0]
    return continuation.MonitorSettings(
        nev=int(sec.get("nev", 6)),
        shift=complex(float(shift[0]), float(shift[1])),
        method=str(sec.get("method", "auto")),
    )


def _locator_settings(config):
    sec = _section(config, "locate")
    kw = {}
    for key in ("res_tol", "g_tol", "class_tol", "omega_floor"):
        if key in sec:
            kw[key] = float(sec[key])
    if "max_iterations" in sec:
        kw["max_iterations"] = int(sec["max_iterations"])
    return bifurcation.LocatorSettings(**kw)


def _hb_settings(config):
    sec = _section(config, "hb")
    kw = {}
    for key in ("abs_tol", "rel_tol", "collapse_tol", "omega_floor"):
        if key in sec:
            kw[key] = float(sec[key])
    if "max_iterations" in sec:
        kw["max_iterations"] = int(sec["max_iterations"])
    return hb.HBSettings(**kw)


def _output_dir(args, config):
    if args.output_dir:
        out = args.output_dir
    elif os.environ.get("BIFURC_OUTPUT_DIR"):
        out = os.environ["BIFURC_OUTPUT_DIR"]
    else:
        out = _section(config, "output").get("dir", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _prefix(config):
    return _section(config, "output").get("prefix", "run")


def _fmt(x):
    return f"{float(x):.17g}"


def _write_csv(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(
                cell if isinstance(cell, str) else _fmt(cell) for cell in row
            ) + "\n")


def _write_provenance(path, args, config, timings, outputs):
    doc = {
        "command": " ".join(sys.argv),
        "subcommand": args.command,
        "config": config,
        "version": __version__,
        "python": sys.version.split()[0],
        "timings_seconds": timings,
        "outputs": outputs,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_state(args, problem, p):
    """Starting state from --from snapshot if given, else the problem default.

    Returns (header, blocks, params); header is None without a snapshot.
    Snapshot problem name and dimension must match the configured problem.
    """
    if not args.from_snapshot:
        return None, None, p
    header, blocks = read_snapshot(args.from_snapshot)
    if header["problem"] != problem.name or int(header["dim"]) != problem.dim:
        raise SnapshotError(
            f"snapshot {args.from_snapshot} was written for problem "
            f"{header['problem']!r} (dim {header['dim']}), configuration "
            f"builds {problem.name!r} (dim {problem.dim})"
        )
    for name, value in header.get("params", {}).items():
        if name in p.names:
            p = p.with_value(name, value)
    extras = header.get("extras", {})
    if "active" in extras and extras["active"] in p.names:
        p = p.with_active(extras["active"])
    return header, blocks, p


def _steady_extras(p, tangent=None):
    extras = {"active": p.active_name}
    if tangent is not None:
        extras["has_tangent"] = True
    return extras


# ---------------------------------------------------------------------------
# subcommands


def cmd_steady(args, config):
    problem, p = build_problem(config)
    header, blocks, p = _load_state(args, problem, p)
    if header is None:
        q0 = problem.default_state
    else:
        if header["kind"] != "steady":
            raise SnapshotError("steady start needs a 'steady' snapshot")
        q0 = blocks[0]
    settings = _newton_settings(config)
    sec = _section(config, "steady")
    t0 = time.perf_counter()
    known = sec.get("deflate", [])
    if known:
        known_list = [np.asarray(k, dtype=float) for k in known]
        result = deflated_newton_solve(problem, q0, known_list, p, settings)
    else:
        result = newton_solve(problem, q0, p, settings)
    elapsed = time.perf_counter() - t0
    if not result.converged:
        print(f"steady: FAILED after {result.iterations} iterations "
              f"({result.message})")
        return 3
    out = _output_dir(args, config)
    prefix = _prefix(config)
    snap = os.path.join(out, f"{prefix}-steady.bsnp")
    write_snapshot(snap, "steady", problem.name, problem.dim, p.to_dict(),
                   [result.q], _steady_extras(p))
    _write_provenance(os.path.join(out, f"{prefix}-steady-provenance.json"),
                      args, config, {"solve": elapsed}, [snap])
    print(f"steady: converged in {result.iterations} iterations, "
          f"|R| = {result.residual_norms[-1]:.3e}")
    print(f"steady: wrote {snap}")
    return 0


def cmd_trace(args, config):
    problem, p = build_problem(config)
    header, blocks, p = _load_state(args, problem, p)
    if header is None:
        q0 = problem.default_state
    else:
        if header["kind"] != "steady":
            raise SnapshotError("trace restart needs a 'steady' snapshot")
        q0 = blocks[0]
    sec = _section(config, "trace")
    control = _step_control(config)
    settings = _newton_settings(config)
    monitor = _monitor(config)
    lo = float(sec.get("param_min", -np.inf))
    hi = float(sec.get("param_max", np.inf))
    max_points = int(sec.get("max_points", 100))
    t0 = time.perf_counter()
    branch = continuation.trace_branch(
        problem, q0, p, control=control, corrector=settings, monitor=monitor,
        param_range=(lo, hi), max_points=max_points,
    )
    elapsed = time.perf_counter() - t0
    out = _output_dir(args, config)
    prefix = _prefix(config)
    name = p.active_name
    columns = ["index", name, "state_norm", "state_min", "state_max",
               "iterations", "step", "stability", "sigma_max"]
    rows = []
    for i, pt in enumerate(branch.points):
        if pt.eigenvalues:
            sig = max(lam.real for lam in pt.eigenvalues)
            label = pt.stability_label or ""
        else:
            sig, label = np.nan, ""
        rows.append([i, pt.alpha, np.linalg.norm(pt.q), pt.q.min(), pt.q.max(),
                     str(pt.corrector_iterations), pt.step, label, sig])
    csv_path = os.path.join(out, f"{prefix}-branch.csv")
    _write_csv(csv_path, columns, rows)
    ev_path = os.path.join(out, f"{prefix}-events.csv")
    _write_csv(
        ev_path,
        ["kind", "index_before", "index_after",
         f"{name}_before", f"{name}_after", "re_before", "im_before",
         "re_after", "im_after"],
        [[ev.kind, str(ev.index_before), str(ev.index_after),
          branch.points[ev.index_before].alpha,
          branch.points[ev.index_after].alpha,
          ev.lam_before.real, ev.lam_before.imag,
          ev.lam_after.real, ev.lam_after.imag] for ev in branch.events],
    )
    last = branch.points[-1]
    snap = os.path.join(out, f"{prefix}-final.bsnp")
    tangent_block = np.concatenate([last.tangent.y_q, [last.tangent.y_alpha]])
    write_snapshot(snap, "steady", problem.name, problem.dim,
                   last.params.to_dict(), [last.q, tangent_block],
                   _steady_extras(last.params, tangent_block))
    _write_provenance(os.path.join(out, f"{prefix}-trace-provenance.json"),
                      args, config, {"trace": elapsed},
                      [csv_path, ev_path, snap])
    print(f"trace: {len(branch.points)} points, status {branch.status}, "
          f"{len(branch.events)} event(s)")
    for ev in branch.events:
        print(f"trace: {ev.kind} bracketed by indices "
              f"{ev.index_before}..{ev.index_after} "
              f"({name} in [{branch.points[ev.index_before].alpha:.6g}, "
              f"{branch.points[ev.index_after].alpha:.6g}])")
    print(f"trace: wrote {csv_path}")
    return 0


def cmd_eigs(args, config):
    problem, p = build_problem(config)
    header, blocks, p = _load_state(args, problem, p)
    if header is None:
        q0 = problem.default_state
    else:
        q0 = blocks[0]
    settings = _newton_settings(config)
    result = newton_solve(problem, q0, p, settings)
    if not result.converged:
        print(f"eigs: steady solve failed ({result.message})")
        return 3
    sec = _section(config, "eigs")
    shift = sec.get("shift", [0.0, 0.0])
    if isinstance(shift, (int, float)):
        shift = [float(shift), 0.0]
    t0 = time.perf_counter()
    pairs = stability.eigs(
        problem, result.q, p,
        shift=complex(float(shift[0]), float(shift[1])),
        nev=int(sec.get("nev", 6)),
        method=str(sec.get("method", "auto")),
        want_adjoint=bool(sec.get("adjoint", False)),
    )
    elapsed = time.perf_counter() - t0
    label = stability.classify_stability(pairs)
    out = _output_dir(args, config)
    prefix = _prefix(config)
    csv_path = os.path.join(out, f"{prefix}-eigs.csv")
    _write_csv(csv_path, ["re", "im", "residual"],
               [[pr.value.real, pr.value.imag, pr.residual] for pr in pairs])
    lead = pairs[0]
    snap = os.path.join(out, f"{prefix}-mode.bsnp")
    write_snapshot(snap, "mode", problem.name, problem.dim, p.to_dict(),
                   [np.real(lead.mode), np.imag(lead.mode)],
                   {"re": lead.value.real, "im": lead.value.imag,
                    "active": p.active_name})
    _write_provenance(os.path.join(out, f"{prefix}-eigs-provenance.json"),
                      args, config, {"eigs": elapsed}, [csv_path, snap])
    print(f"eigs: {label}; leading eigenvalues:")
    for pr in pairs:
        print(f"  {pr.value.real:+.6e} {pr.value.imag:+.6e}j  "
              f"(residual {pr.residual:.1e})")
    print(f"eigs: wrote {csv_path}")
    return 0


def _write_bifpoint(path, problem, point):
    write_snapshot(
        path, "bifpoint", problem.name, problem.dim, point.params.to_dict(),
        [point.q, np.real(point.mode), np.imag(point.mode),
         np.real(point.adjoint), np.imag(point.adjoint)],
        {"kind": point.kind, "omega": point.omega,
         "active": point.params.active_name},
    )


def _read_bifpoint(path, problem, p):
    header, blocks = read_snapshot(path)
    if header["kind"] != "bifpoint":
        raise SnapshotError(f"{path} is not a bifurcation-point snapshot")
    if header["problem"] != problem.name or int(header["dim"]) != problem.dim:
        raise SnapshotError(f"{path} does not match the configured problem")
    for name, value in header.get("params", {}).items():
        if name in p.names:
            p = p.with_value(name, value)
    extras = header["extras"]
    if "active" in extras and extras["active"] in p.names:
        p = p.with_active(extras["active"])
    point = bifurcation.BifPoint(
        kind=extras["kind"], q=blocks[0], params=p,
        omega=float(extras["omega"]),
        mode=blocks[1] + 1j * blocks[2],
        adjoint=blocks[3] + 1j * blocks[4],
        g_history=[], iterations=0,
    )
    return point


def cmd_bif_locate(args, config):
    problem, p = build_problem(config)
    header, blocks, p = _load_state(args, problem, p)
    if header is None:
        q0 = problem.default_state
    else:
        q0 = blocks[0]
    sec = _section(config, "locate")
    kind = str(sec.get("kind", "steady"))
    omega0 = float(sec.get("omega0", 0.0))
    settings = _locator_settings(config)
    t0 = time.perf_counter()
    point = bifurcation.locate_bifurcation(
        problem, q0, p, kind=kind, omega0=omega0, settings=settings
    )
    nf = bifurcation.normal_form(problem, point, settings)
    elapsed = time.perf_counter() - t0
    out = _output_dir(args, config)
    prefix = _prefix(config)
    snap = os.path.join(out, f"{prefix}-bifpoint.bsnp")
    _write_bifpoint(snap, problem, point)
    _write_provenance(os.path.join(out, f"{prefix}-locate-provenance.json"),
                      args, config, {"locate": elapsed}, [snap])
    print(f"bif-locate: {point.kind} at {point.params.active_name} = "
          f"{point.params.active_value:.12g}"
          + (f", omega = {point.omega:.12g}" if point.kind == "hopf" else ""))
    print(f"bif-locate: |g| history {['%.1e' % g for g in point.g_history]}")
    for name, c in nf.param_coeffs.items():
        print(f"bif-locate: dlambda/d{name} = {c.real:+.6e} {c.imag:+.6e}j")
    print(f"bif-locate: beta = {nf.beta.real:+.6e} {nf.beta.imag:+.6e}j"
          + ("" if nf.supercritical is None
             else f" ({'supercritical' if nf.supercritical else 'subcritical'})"))
    print(f"bif-locate: wrote {snap}")
    return 0


def cmd_bif_trace(args, config):
    problem, p = build_problem(config)
    if not args.from_snapshot:
        raise ConfigError("bif-trace needs --from pointing at a bifpoint snapshot")
    point = _read_bifpoint(args.from_snapshot, problem, p)
    if np.linalg.norm(point.mode) == 0.0:
        # snapshot without stored modes (e.g. the tail of a previous curve
        # run); re-locate with automatic eigenvector seeding
        point = bifurcation.locate_bifurcation(
            problem, point.q, point.params,
            kind="hopf" if point.kind == "hopf" else "steady",
            omega0=point.omega, settings=_locator_settings(config),
        )
    sec = _section(config, "curve")
    second = sec.get("second")
    if not second:
        raise ConfigError("curve.second (the second parameter name) is required")
    control = _step_control(config)
    settings = _locator_settings(config)
    lo = float(sec.get("param_min", -np.inf))
    hi = float(sec.get("param_max", np.inf))
    max_points = int(sec.get("max_points", 100))
    track = bool(sec.get("track_normal_form", True))
    t0 = time.perf_counter()
    curve = bifurcation.trace_bifurcation_curve(
        problem, point, second, control=control, settings=settings,
        param_range=(lo, hi), max_points=max_points, track_normal_form=track,
    )
    elapsed = time.perf_counter() - t0
    out = _output_dir(args, config)
    prefix = _prefix(config)
    name1 = point.params.active_name
    columns = ["index", name1, second, "omega", "beta_re", "beta_im",
               "state_norm"]
    rows = []
    for i, cp in enumerate(curve.points):
        beta = cp.beta if cp.beta is not None else complex(np.nan)
        rows.append([i, cp.params[name1], cp.params[second], cp.omega,
                     beta.real, beta.imag, np.linalg.norm(cp.q)])
    csv_path = os.path.join(out, f"{prefix}-curve.csv")
    _write_csv(csv_path, columns, rows)
    ev_path = os.path.join(out, f"{prefix}-curve-events.csv")
    _write_csv(ev_path, ["kind", "index_before", "index_after", "detail"],
               [[ev.kind, str(ev.index_before), str(ev.index_after),
                 ev.detail] for ev in curve.events])
    last = curve.points[-1]
    snap = os.path.join(out, f"{prefix}-curve-final.bsnp")
    _write_bifpoint(snap, problem, bifurcation.BifPoint(
        kind=curve.kind, q=last.q, params=last.params, omega=last.omega,
        mode=np.zeros(problem.dim, dtype=complex),
        adjoint=np.zeros(problem.dim, dtype=complex),
        g_history=[], iterations=0,
    ))
    _write_provenance(os.path.join(out, f"{prefix}-curve-provenance.json"),
                      args, config, {"trace": elapsed},
                      [csv_path, ev_path, snap])
    print(f"bif-trace: {len(curve.points)} points on the {curve.kind} curve, "
          f"status {curve.status}, {len(curve.events)} flag(s)")
    for ev in curve.events:
        print(f"bif-trace: {ev.kind} between indices "
              f"{ev.index_before}..{ev.index_after} ({ev.detail})")
    print(f"bif-trace: wrote {csv_path}")
    return 0


def cmd_hb_solve(args, config):
    problem, p = build_problem(config)
    sec = _section(config, "hb")
    settings = _hb_settings(config)
    if not args.from_snapshot:
        raise ConfigError("hb-solve needs --from (bifpoint or fourier snapshot)")
    header, blocks = read_snapshot(args.from_snapshot)
    if header["problem"] != problem.name or int(header["dim"]) != problem.dim:
        raise SnapshotError(f"{args.from_snapshot} does not match the problem")
    if header["kind"] == "fourier":
        state0 = _fourier_from_blocks(header, blocks)
        for name, value in header.get("params", {}).items():
            if name in p.names:
                p = p.with_value(name, value)
        if "active" in header["extras"]:
            p = p.with_active(header["extras"]["active"])
        if "delta" in sec:
            p = p.with_active_value(p.active_value + float(sec["delta"]))
    elif header["kind"] == "bifpoint":
        point = _read_bifpoint(args.from_snapshot, problem, p)
        if point.kind != "hopf":
            raise SnapshotError("hb-solve needs a hopf bifpoint to seed from")
        delta = float(sec.get("delta", 0.05))
        order = int(sec.get("order", 4))
        nf = bifurcation.normal_form(problem, point, _locator_settings(config))
        state0 = bifurcation.weakly_nonlinear_predict(
            problem, point, nf, delta, harmonics=order
        )
        p = point.params.with_active_value(point.params.active_value + delta)
    else:
        raise SnapshotError("hb-solve needs a 'fourier' or 'bifpoint' snapshot")
    t0 = time.perf_counter()
    result = hb.hb_solve(problem, state0, p, settings)
    elapsed = time.perf_counter() - t0
    state = result.state
    out = _output_dir(args, config)
    prefix = _prefix(config)
    snap = os.path.join(out, f"{prefix}-orbit.bsnp")
    write_snapshot(snap, "fourier", problem.name, problem.dim, p.to_dict(),
                   _fourier_to_blocks(state),
                   {"omega": state.omega, "order": state.order,
                    "active": p.active_name})
    _write_provenance(os.path.join(out, f"{prefix}-hb-provenance.json"),
                      args, config, {"solve": elapsed}, [snap])
    print(f"hb-solve: converged in {result.iterations} iterations, "
          f"omega = {state.omega:.12g}, period = {state.period:.12g}, "
          f"amplitude = {state.amplitude():.6g}")
    print(f"hb-solve: wrote {snap}")
    return 0


def cmd_hb_trace(args, config):
    problem, p = build_problem(config)
    if not args.from_snapshot:
        raise ConfigError("hb-trace needs --from pointing at a fourier snapshot")
    header, blocks = read_snapshot(args.from_snapshot)
    if header["kind"] != "fourier":
        raise SnapshotError("hb-trace needs a 'fourier' snapshot")
    if header["problem"] != problem.name or int(header["dim"]) != problem.dim:
        raise SnapshotError(f"{args.from_snapshot} does not match the problem")
    state0 = _fourier_from_blocks(header, blocks)
    for name, value in header.get("params", {}).items():
        if name in p.names:
            p = p.with_value(name, value)
    if "active" in header["extras"]:
        p = p.with_active(header["extras"]["active"])
    sec = _section(config, "trace")
    control = _step_control(config)
    settings = _hb_settings(config)
    lo = float(sec.get("param_min", -np.inf))
    hi = float(sec.get("param_max", np.inf))
    max_points = int(sec.get("max_points", 50))
    t0 = time.perf_counter()
    branch = hb.hb_trace_branch(
        problem, state0, p, control=control, settings=settings,
        param_range=(lo, hi), max_points=max_points,
    )
    elapsed = time.perf_counter() - t0
    out = _output_dir(args, config)
    prefix = _prefix(config)
    name = p.active_name
    csv_path = os.path.join(out, f"{prefix}-orbit-branch.csv")
    _write_csv(
        csv_path,
        ["index", name, "omega", "period", "amplitude", "iterations", "step"],
        [[i, pt.alpha, pt.state.omega, pt.state.period, pt.state.amplitude(),
          str(pt.corrector_iterations), pt.step]
         for i, pt in enumerate(branch.points)],
    )
    last = branch.points[-1]
    snap = os.path.join(out, f"{prefix}-orbit-final.bsnp")
    write_snapshot(snap, "fourier", problem.name, problem.dim,
                   last.params.to_dict(), _fourier_to_blocks(last.state),
                   {"omega": last.state.omega, "order": last.state.order,
                    "active": last.params.active_name})
    _write_provenance(os.path.join(out, f"{prefix}-hb-trace-provenance.json"),
                      args, config, {"trace": elapsed}, [csv_path, snap])
    print(f"hb-trace: {len(branch.points)} points, status {branch.status}")
    print(f"hb-trace: wrote {csv_path}")
    return 0


def cmd_floquet(args, config):
    problem, p = build_problem(config)
    if not args.from_snapshot:
        raise ConfigError("floquet needs --from pointing at a fourier snapshot")
    header, blocks = read_snapshot(args.from_snapshot)
    if header["kind"] != "fourier":
        raise SnapshotError("floquet needs a 'fourier' snapshot")
    if header["problem"] != problem.name or int(header["dim"]) != problem.dim:
        raise SnapshotError(f"{args.from_snapshot} does not match the problem")
    state = _fourier_from_blocks(header, blocks)
    for name, value in header.get("params", {}).items():
        if name in p.names:
            p = p.with_value(name, value)
    sec = _section(config, "floquet")
    t0 = time.perf_counter()
    pairs = hb.floquet(
        problem, state, p,
        nev=int(sec.get("nev", 8)),
        order=int(sec["order"]) if "order" in sec else None,
        method=str(sec.get("method", "auto")),
    )
    elapsed = time.perf_counter() - t0
    label = hb.classify_orbit(pairs)
    out = _output_dir(args, config)
    prefix = _prefix(config)
    csv_path = os.path.join(out, f"{prefix}-floquet.csv")
    _write_csv(
        csv_path,
        ["re", "im", "residual", "phase_overlap", "is_phase", "principal"],
        [[fp.value.real, fp.value.imag, fp.residual, fp.phase_overlap,
          str(int(fp.is_phase)), str(int(fp.in_principal_strip))]
         for fp in pairs],
    )
    _write_provenance(os.path.join(out, f"{prefix}-floquet-provenance.json"),
                      args, config, {"floquet": elapsed}, [csv_path])
    print(f"floquet: orbit is {label}; exponents:")
    for fp in pairs:
        tag = " (phase)" if fp.is_phase else ""
        print(f"  {fp.value.real:+.6e} {fp.value.imag:+.6e}j{tag}")
    print(f"floquet: wrote {csv_path}")
    return 0


def cmd_check(args, config):
    problem, p = build_problem(config)
    from .problem import check_derivatives

    sec = _section(config, "check")
    report = check_derivatives(
        problem,
        params=p,
        trials=int(sec.get("trials", 5)),
        seed=int(sec.get("seed", 0)),
    )
    tol = float(sec.get("tol", 1e-6))
    print(f"check: finite-difference agreement for {problem.name!r}")
    for key in sorted(report.errors):
        print(f"  {key:24s} {report.errors[key]:.3e}")
    if not report.finite:
        print("check: FAILED (non-finite derivative values)")
        return 3
    if report.max_error() > tol:
        print(f"check: FAILED (max error {report.max_error():.3e} > {tol:g})")
        return 3
    print(f"check: OK (max error {report.max_error():.3e})")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bifurc",
        description="Continuation, bifurcation, and periodic-orbit analysis "
                    "of first-order systems M(q) qdot + R(q; alpha) = 0.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a configuration entry (repeatable, wins over the file)",
    )
    common.add_argument("--output-dir", help="directory for output files "
                        "(default: $BIFURC_OUTPUT_DIR, then [output] dir)")
    common.add_argument("--from", dest="from_snapshot", metavar="SNAPSHOT",
                        help="snapshot file providing the starting state")
    handlers = {
        "steady": (cmd_steady, "converge a steady state"),
        "trace": (cmd_trace, "continue a steady branch in the active parameter"),
        "eigs": (cmd_eigs, "leading eigenvalues at a steady state"),
        "bif-locate": (cmd_bif_locate, "locate and classify a bifurcation"),
        "bif-trace": (cmd_bif_trace, "trace a bifurcation curve in two parameters"),
        "hb-solve": (cmd_hb_solve, "converge a periodic orbit"),
        "hb-trace": (cmd_hb_trace, "continue a periodic orbit branch"),
        "floquet": (cmd_floquet, "Floquet exponents of an orbit"),
        "check": (cmd_check, "finite-difference check of problem derivatives"),
    }
    for name, (fn, help_text) in handlers.items():
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        return args.handler(args, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SnapshotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
