"""Command-line pipeline for the toolkit.

Subcommands cover the full workflow: simulate trajectories, train the
joint flow/density network, enumerate affine cells at a time slice, and
run forward/query/backward reachability, safety verification, and the
estimator/volume evaluations.  Every artifact is written together with a
``<name>.manifest.json`` recording the exact command line, seed, input
digests, output digest, and per-stage timings.  Rerunning a subcommand
with identical inputs and seed reproduces the artifact byte for byte;
only the manifest's timings vary.

Exit codes: 0 success, 1 domain error (infeasible geometry, budget,
malformed artifact, diverged integration), 2 usage error.

A JSON config file passed via ``--config`` may supply any flag of its
subcommand (keys are flag names without the leading dashes, values the
same strings or numbers the flag would take); explicit flags override
config entries.
"""

import argparse
import difflib
import hashlib
import json
import multiprocessing
import re
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, cells, evaluation, liouville, nets, reach, systems
from .distributions import InitialDistribution
from .errors import ToolkitError
from .geometry import HyperRectangle, Polyhedron, bounding_box

ARTIFACT_VERSION = 1


class UsageError(Exception):
    """Malformed flag values or flag combinations (exit code 2)."""


# ---------------------------------------------------------------------------
# Flag-value grammars.
# ---------------------------------------------------------------------------

def parse_box(spec: str, name: str = "box") -> HyperRectangle:
    """'lo,hi;lo,hi;...' with one lo,hi pair per coordinate."""
    try:
        pairs = []
        for part in spec.split(";"):
            lo_s, hi_s = part.split(",")
            pairs.append((float(lo_s), float(hi_s)))
    except ValueError as exc:
        raise UsageError(
            f"{name} must look like 'lo,hi;lo,hi', got {spec!r}") from exc
    lo = np.array([p[0] for p in pairs])
    hi = np.array([p[1] for p in pairs])
    if np.any(lo >= hi):
        raise UsageError(f"{name} has an empty side (need lo < hi)")
    return HyperRectangle(lo, hi)


_GAUSS_FORM = re.compile(r"\Amu=(?P<mu>.+),sigma=(?P<sigma>[^,]+)\Z")


def parse_rho0(spec: str, support: HyperRectangle) -> InitialDistribution:
    """'uniform' or 'gauss:mu=<m1,m2,...>,sigma=<s>' over a support box."""
    if spec == "uniform":
        return InitialDistribution.uniform(support)
    if spec.startswith("gauss:"):
        m = _GAUSS_FORM.match(spec[len("gauss:"):])
        if m is None:
            raise UsageError(
                "gaussian form is gauss:mu=<m1,m2,...>,sigma=<s>, got "
                f"{spec!r}")
        try:
            mu = [float(v) for v in m.group("mu").split(",")]
            sigma = float(m.group("sigma"))
        except ValueError as exc:
            raise UsageError(f"bad number in {spec!r}") from exc
        if len(mu) == 1:
            mu = mu * support.d
        return InitialDistribution.gaussian(support, mu, sigma)
    raise UsageError(
        f"unknown initial distribution {spec!r} "
        "(use 'uniform' or 'gauss:mu=...,sigma=...')")


_VAR_INDEX = {"x": 0, "y": 1, "z": 2, "w": 3}
_ATOM = re.compile(r"\A\s*([xyzw])\s*(<=|>=|==|=|<|>)\s*(\S+)\s*\Z")


def parse_region(spec: str, dim: int, name: str = "set") -> Polyhedron:
    """Constraint list 'x>=-0.5,x<=0,y>=-0.5' or box grammar 'lo,hi;...'.

    Constraint variables x, y, z, w name coordinates 0..3; use the box
    grammar for plain rectangles in any dimension.
    """
    if re.search(r"[<>=]", spec) is None:
        box = parse_box(spec, name)
        if box.d != dim:
            raise UsageError(
                f"{name} has dimension {box.d}, expected {dim}")
        return box.to_polyhedron()
    rows, rhs = [], []
    for atom in spec.split(","):
        m = _ATOM.match(atom)
        if m is None:
            raise UsageError(
                f"{name}: cannot parse constraint {atom!r} "
                "(form: x>=-0.5 with variables x, y, z, w)")
        var, op, val_s = m.groups()
        try:
            val = float(val_s)
        except ValueError as exc:
            raise UsageError(f"{name}: bad number in {atom!r}") from exc
        j = _VAR_INDEX[var]
        if j >= dim:
            raise UsageError(
                f"{name}: variable {var!r} indexes coordinate {j}, but the "
                f"state has dimension {dim}")
        row = np.zeros(dim)
        row[j] = 1.0
        if op in ("<=", "<"):
            rows.append(row)
            rhs.append(val)
        elif op in (">=", ">"):
            rows.append(-row)
            rhs.append(-val)
        else:
            rows.extend([row, -row])
            rhs.extend([val, -val])
    return Polyhedron(np.array(rows), np.array(rhs))


def _parse_z_band(zmin, zmax):
    if zmin is None and zmax is None:
        return None
    return (-np.inf if zmin is None else float(zmin),
            np.inf if zmax is None else float(zmax))


# ---------------------------------------------------------------------------
# Artifacts and manifests.
# ---------------------------------------------------------------------------

def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True) + "\n").encode("utf-8")


def _poly_dict(P: Polyhedron) -> dict:
    return {"A": P.A.tolist(), "b": P.b.tolist()}


def _emit(out_path, payload, *, argv, seed, inputs, timings) -> None:
    """Write an artifact (payload bytes, or None if already on disk) plus
    its manifest."""
    out = Path(out_path)
    if payload is not None:
        out.write_bytes(payload)
    manifest = {
        "tool": {"name": "densereach", "version": __version__},
        "command": list(argv),
        "seed": seed,
        "inputs": {str(p): _digest(Path(p).read_bytes()) for p in inputs},
        "outputs": {out.name: _digest(out.read_bytes())},
        "timings": {k: round(float(v), 6) for k, v in timings.items()},
    }
    Path(str(out) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_bytes(header, rows) -> bytes:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Worker-pool plumbing for the reach stage.
# ---------------------------------------------------------------------------

_POOL_STATE: dict = {}


def _init_reach_worker(rho0) -> None:
    _POOL_STATE["rho0"] = rho0


def _reach_one(item):
    k, cell = item
    rec = reach.forward_reach([cell], _POOL_STATE["rho0"])[0]
    return replace(rec, source=k)


def _forward_parallel(cell_list, rho0, jobs: int):
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if jobs == 1 or len(cell_list) < 2:
        return reach.forward_reach(cell_list, rho0)
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(jobs, initializer=_init_reach_worker,
                  initargs=(rho0,)) as pool:
        chunk = max(1, len(cell_list) // (4 * jobs))
        return pool.map(_reach_one, list(enumerate(cell_list)),
                        chunksize=chunk)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def _merge_datasets(a, b):
    return liouville.TrajectoryDataset(
        system=a.system, dt=a.dt,
        states=np.concatenate([a.states, b.states]),
        divergences=np.concatenate([a.divergences, b.divergences]),
        rho=None if a.rho is None else np.concatenate([a.rho, b.rho]))


def cmd_simulate(ns, argv) -> int:
    t0 = time.perf_counter()
    domain = parse_box(ns.domain, "--domain") if ns.domain else None
    spec = systems.make_system(ns.system, init_domain=domain)
    steps = spec.default_steps if ns.steps is None else ns.steps
    dt = spec.default_dt if ns.dt is None else ns.dt
    dist = parse_rho0(ns.rho0, spec.init_domain) if ns.rho0 else None
    train_ds, val_ds = liouville.build_dataset(
        spec, ns.n, steps, dt, ns.seed, dist=dist,
        substeps=ns.substeps, with_density=ns.with_density)
    sim_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    liouville.save_dataset(ns.out, _merge_datasets(train_ds, val_ds))
    _emit(ns.out, None, argv=argv, seed=ns.seed, inputs=[],
          timings={"simulate": sim_time,
                   "write": time.perf_counter() - t0})
    return 0


def cmd_train(ns, argv) -> int:
    t0 = time.perf_counter()
    data = liouville.load_dataset(ns.data)
    try:
        hidden = tuple(int(h) for h in ns.hidden.split(","))
    except ValueError as exc:
        raise UsageError(f"--hidden must be like '64,64,64', "
                         f"got {ns.hidden!r}") from exc
    net = nets.prepare_net(data, hidden, ns.seed)
    cfg = nets.TrainConfig(lam=ns.lam, lr=ns.lr, epochs=ns.epochs,
                           batch_size=ns.batch_size, seed=ns.seed,
                           hidden=hidden)
    load_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    net = nets.train(net, data, cfg, verbose=ns.verbose)
    train_time = time.perf_counter() - t0
    _emit(ns.out, nets.save_checkpoint(net), argv=argv, seed=ns.seed,
          inputs=[ns.data], timings={"load": load_time,
                                     "train": train_time})
    return 0


def cmd_partition(ns, argv) -> int:
    t0 = time.perf_counter()
    net = nets.load_checkpoint(Path(ns.net).read_bytes())
    domain = parse_box(ns.domain, "--domain")
    sn = cells.slice_net(net, ns.t)
    parts = cells.enumerate_cells(sn, domain, budget=ns.budget, jobs=ns.jobs)
    enum_time = time.perf_counter() - t0
    blob = cells.save_partition(parts, domain, system=net.system_id, t=ns.t)
    _emit(ns.out, blob, argv=argv, seed=None, inputs=[ns.net],
          timings={"enumerate": enum_time})
    return 0


def _load_partition_file(path):
    return cells.load_partition(Path(path).read_bytes())


def _support_box(ns, domain: Polyhedron) -> HyperRectangle:
    if getattr(ns, "support", None):
        return parse_box(ns.support, "--support")
    return bounding_box(domain)


def cmd_reach(ns, argv) -> int:
    t0 = time.perf_counter()
    part = _load_partition_file(ns.cells)
    rho0 = parse_rho0(ns.rho0, _support_box(ns, part.domain))
    recs = _forward_parallel(part.cells, rho0, ns.jobs)
    elapsed = time.perf_counter() - t0
    payload = {
        "version": ARTIFACT_VERSION,
        "kind": "reach",
        "system": part.system,
        "t": part.t,
        "rho0": ns.rho0,
        "p_lo": float(sum(r.p_lo for r in recs)),
        "p_hi": float(sum(r.p_hi for r in recs)),
        "cells": [{
            "state_set": _poly_dict(r.state_set),
            "rho_lo": r.rho_lo, "rho_hi": r.rho_hi,
            "p_lo": r.p_lo, "p_hi": r.p_hi,
            "source": r.source,
        } for r in recs],
    }
    _emit(ns.out, _json_bytes(payload), argv=argv, seed=None,
          inputs=[ns.cells], timings={"reach": elapsed})
    if ns.csv:
        rows = [(r.source, r.rho_lo, r.rho_hi, r.p_lo, r.p_hi)
                for r in recs]
        _emit(ns.csv, _csv_bytes(
            ("source", "rho_lo", "rho_hi", "p_lo", "p_hi"), rows),
            argv=argv, seed=None, inputs=[ns.cells],
            timings={"reach": elapsed})
    return 0


def cmd_query(ns, argv) -> int:
    t0 = time.perf_counter()
    part = _load_partition_file(ns.cells)
    rho0 = parse_rho0(ns.rho0, _support_box(ns, part.domain))
    query = parse_region(ns.set, part.domain.d, "--set")
    z_range = _parse_z_band(ns.zmin, ns.zmax)
    recs = reach.query_cells(part.cells, query, rho0, z_range=z_range)
    elapsed = time.perf_counter() - t0
    payload = {
        "version": ARTIFACT_VERSION,
        "kind": "query",
        "system": part.system,
        "t": part.t,
        "set": ns.set,
        "rho0": ns.rho0,
        "z_range": None if z_range is None else list(z_range),
        "p_lo": float(sum(r.p_lo for r in recs)),
        "p_hi": float(sum(r.p_hi for r in recs)),
        "cells": [{
            "region": _poly_dict(r.region),
            "rho_lo": r.rho_lo, "rho_hi": r.rho_hi,
            "p_lo": r.p_lo, "p_hi": r.p_hi,
            "z_lo": r.z_lo, "z_hi": r.z_hi,
            "source": r.source,
        } for r in recs],
    }
    _emit(ns.out, _json_bytes(payload), argv=argv, seed=None,
          inputs=[ns.cells], timings={"query": elapsed})
    if ns.csv:
        rows = [(r.source, r.rho_lo, r.rho_hi, r.p_lo, r.p_hi,
                 r.z_lo, r.z_hi) for r in recs]
        _emit(ns.csv, _csv_bytes(
            ("source", "rho_lo", "rho_hi", "p_lo", "p_hi", "z_lo", "z_hi"),
            rows), argv=argv, seed=None, inputs=[ns.cells],
            timings={"query": elapsed})
    return 0


def cmd_backward(ns, argv) -> int:
    t0 = time.perf_counter()
    part = _load_partition_file(ns.cells)
    rho0 = parse_rho0(ns.rho0, _support_box(ns, part.domain))
    query = parse_region(ns.set, part.domain.d, "--set")
    z_range = _parse_z_band(ns.zmin, ns.zmax)
    regions = reach.backward_reach(part.cells, query, rho0, z_range=z_range)
    elapsed = time.perf_counter() - t0
    payload = {
        "version": ARTIFACT_VERSION,
        "kind": "backward",
        "system": part.system,
        "t": part.t,
        "set": ns.set,
        "rho0": ns.rho0,
        "z_range": None if z_range is None else list(z_range),
        "p_lo": float(sum(r.p_lo for r in regions)),
        "p_hi": float(sum(r.p_hi for r in regions)),
        "regions": [{
            "region": _poly_dict(r.region),
            "p_lo": r.p_lo, "p_hi": r.p_hi,
            "source": r.source,
        } for r in regions],
    }
    _emit(ns.out, _json_bytes(payload), argv=argv, seed=None,
          inputs=[ns.cells], timings={"backward": elapsed})
    return 0


def _verify_inputs(ns) -> list:
    paths = [Path(p) for p in (ns.cells or [])]
    if ns.cells_dir:
        paths += sorted(p for p in Path(ns.cells_dir).glob("*.json")
                        if not p.name.endswith(".manifest.json"))
    if not paths:
        raise UsageError("verify needs --cells files or a --cells-dir")
    return paths


def cmd_verify(ns, argv) -> int:
    t0 = time.perf_counter()
    paths = _verify_inputs(ns)
    parts = [_load_partition_file(p) for p in paths]
    by_time = {}
    for part, path in zip(parts, paths):
        if part.t in by_time:
            raise ValueError(
                f"{path}: duplicate time slice t={part.t}")
        by_time[part.t] = part.cells
    first = parts[0]
    if not getattr(ns, "support", None):
        for part, path in zip(parts[1:], paths[1:]):
            if not (np.array_equal(part.domain.A, first.domain.A)
                    and np.array_equal(part.domain.b, first.domain.b)):
                raise ValueError(
                    f"{path}: slice domains differ; pass --support")
    rho0 = parse_rho0(ns.rho0, _support_box(ns, first.domain))
    unsafe = parse_region(ns.unsafe, first.domain.d, "--unsafe")
    z_range = _parse_z_band(ns.zmin, ns.zmax)
    verdict = reach.verify_safety(by_time, unsafe, rho0, z_range=z_range,
                                  use_heuristic=ns.heuristic == "on")
    stats = dict(verdict.stats)
    lp_elapsed = stats.pop("elapsed", 0.0)
    payload = {
        "version": ARTIFACT_VERSION,
        "kind": "verify",
        "safe": verdict.safe,
        "p_lo": verdict.p_lo,
        "p_hi": verdict.p_hi,
        "per_slice": {str(t): list(v)
                      for t, v in sorted(verdict.per_slice.items())},
        "stats": stats,
        "heuristic": ns.heuristic,
        "z_band": None if z_range is None else list(z_range),
        "unsafe": ns.unsafe,
        "rho0": ns.rho0,
    }
    _emit(ns.out, _json_bytes(payload), argv=argv, seed=None,
          inputs=[str(p) for p in paths],
          timings={"verify": lp_elapsed,
                   "total": time.perf_counter() - t0})
    return 0


def cmd_eval_density(ns, argv) -> int:
    t0 = time.perf_counter()
    data = liouville.load_dataset(ns.truth)
    if data.rho is None:
        raise ValueError(
            f"{ns.truth}: no density records; regenerate the file with "
            "simulate --with-density")
    net = nets.load_checkpoint(Path(ns.net).read_bytes())
    if net.state_dim != data.system.state_dim:
        raise ValueError(
            f"network dimension {net.state_dim} does not match "
            f"dataset dimension {data.system.state_dim}")
    times = data.times
    k = int(np.argmin(np.abs(times - ns.t)))
    t = float(times[k])
    states_t = data.states[:, k]
    rho_t = data.rho[:, k]
    support = (parse_box(ns.support, "--support") if ns.support
               else data.system.init_domain)
    rho0 = parse_rho0(ns.rho0, support)
    n = data.n_traj

    rows = []
    arch = "x".join(str(h) for h in net.hidden_dims)
    est = evaluation.learned_density(net, rho0, t)
    rows.append(("learned", t, n, f"hidden={arch}",
                 evaluation.kl_divergence(zip(data.x0, rho_t), est)))
    for method in (m.strip() for m in ns.baselines.split(",") if m.strip()):
        if method in ("hist", "histogram"):
            est = evaluation.histogram_density(states_t, ns.bins)
            params = f"bins={ns.bins}"
        elif method == "kde":
            est = evaluation.kde_density(states_t, ns.bandwidth)
            params = ("bandwidth=silverman" if ns.bandwidth is None
                      else f"bandwidth={ns.bandwidth!r}")
        else:
            raise UsageError(
                f"unknown baseline {method!r} (choose from hist, kde)")
        rows.append((method, t, n, params,
                     evaluation.kl_divergence(zip(states_t, rho_t), est)))
    _emit(ns.out, _csv_bytes(("method", "t", "n_samples", "params", "kl"),
                             rows),
          argv=argv, seed=None, inputs=[ns.net, ns.truth],
          timings={"eval": time.perf_counter() - t0})
    return 0


def cmd_eval_volume(ns, argv) -> int:
    t0 = time.perf_counter()
    payload = json.loads(Path(ns.reach).read_text(encoding="utf-8"))
    if not isinstance(payload, dict) or payload.get("kind") != "reach":
        raise ValueError(f"{ns.reach}: not a reach artifact")
    recs = [reach.ReachCell(
        state_set=Polyhedron(np.array(c["state_set"]["A"], dtype=np.float64),
                             np.array(c["state_set"]["b"], dtype=np.float64)),
        rho_lo=float(c["rho_lo"]), rho_hi=float(c["rho_hi"]),
        p_lo=float(c["p_lo"]), p_hi=float(c["p_hi"]),
        source=int(c["source"]), t=float(payload["t"]))
        for c in payload["cells"]]
    try:
        thresholds = sorted(float(v) for v in ns.thresholds.split(","))
    except ValueError as exc:
        raise UsageError(
            f"--thresholds must be comma-separated numbers, got "
            f"{ns.thresholds!r}") from exc
    total_volume, _ = evaluation.volume_at_probability(recs, 1.0)
    rows = []
    for thr in thresholds:
        vol, achieved = evaluation.volume_at_probability(recs, thr)
        fraction = vol / total_volume if total_volume > 0.0 else 0.0
        rows.append((thr, vol, achieved, fraction))
    _emit(ns.out, _csv_bytes(
        ("threshold", "volume", "achieved_p", "fraction_of_total"), rows),
        argv=argv, seed=None, inputs=[ns.reach],
        timings={"eval": time.perf_counter() - t0})
    return 0


_DISPATCH = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "partition": cmd_partition,
    "reach": cmd_reach,
    "query": cmd_query,
    "backward": cmd_backward,
    "verify": cmd_verify,
    "eval-density": cmd_eval_density,
    "eval-volume": cmd_eval_volume,
}


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="densereach",
        description="Learned state-density reachability pipeline.")
    parser.add_argument("--version", action="version",
                        version=f"densereach {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    subs = {}

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", metavar="JSON",
                       help="JSON object of flag defaults; explicit flags "
                            "override")
        subs[name] = p
        return p

    p = add("simulate", "integrate trajectories into a JSON-lines dataset")
    p.add_argument("--system", required=True,
                   choices=sorted(systems.SYSTEM_IDS))
    p.add_argument("--n", type=int, required=True,
                   help="number of trajectories")
    p.add_argument("--steps", type=int, help="default: system setting")
    p.add_argument("--dt", type=float, help="default: system setting")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--domain", help="initial box 'lo,hi;lo,hi' "
                                    "(default: system setting)")
    p.add_argument("--rho0", help="initial distribution for sampling and "
                                  "density labels (default: system setting)")
    p.add_argument("--substeps", type=int, default=systems.RK4_SUBSTEPS,
                   help="integrator substeps per recorded step")
    p.add_argument("--with-density", action="store_true",
                   help="attach exact transported densities to each step")
    p.add_argument("--out", required=True)

    p = add("train", "fit the joint flow/density network to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", default="64,64,64")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="flow-loss weight relative to the transport loss")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=4096)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True)

    p = add("partition", "enumerate the affine cells of a time slice")
    p.add_argument("--net", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--domain", required=True, help="'lo,hi;lo,hi' box")
    p.add_argument("--budget", type=int, default=cells.CELL_BUDGET_DEFAULT)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("reach", "forward reachable cells with density/mass bounds")
    p.add_argument("--cells", required=True, help="partition artifact")
    p.add_argument("--rho0", default="uniform")
    p.add_argument("--support", help="initial support box "
                                     "(default: partition domain)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", help="also write a per-cell CSV summary")
    p.add_argument("--out", required=True)

    for name, help_ in (("query", "probability that the state lands in a "
                                  "set at the slice time"),
                        ("backward", "initial-state regions that reach a "
                                     "set at the slice time")):
        p = add(name, help_)
        p.add_argument("--cells", required=True)
        p.add_argument("--set", required=True,
                       help="constraints 'x>=-0.5,x<=0,...' or box "
                            "'lo,hi;lo,hi'")
        p.add_argument("--rho0", default="uniform")
        p.add_argument("--support")
        p.add_argument("--zmin", type=float,
                       help="lower bound on the density output z")
        p.add_argument("--zmax", type=float,
                       help="upper bound on the density output z")
        if name == "query":
            p.add_argument("--csv")
        p.add_argument("--out", required=True)

    p = add("verify", "bound the probability of entering an unsafe set")
    p.add_argument("--cells", action="append",
                   help="partition artifact (repeatable)")
    p.add_argument("--cells-dir", help="directory of partition artifacts")
    p.add_argument("--unsafe", required=True,
                   help="constraints or box (same grammar as --set)")
    p.add_argument("--rho0", default="uniform")
    p.add_argument("--support")
    p.add_argument("--zmin", type=float,
                   help="lower log-gain exponent: density gain >= e^zmin")
    p.add_argument("--zmax", type=float,
                   help="upper log-gain exponent: density gain <= e^zmax")
    p.add_argument("--heuristic", choices=("on", "off"), default="on",
                   help="box prescreen before LP feasibility checks")
    p.add_argument("--out", required=True)

    p = add("eval-density", "KL of learned/baseline estimators vs exact "
                            "densities")
    p.add_argument("--net", required=True)
    p.add_argument("--truth", required=True,
                   help="dataset with density records "
                        "(simulate --with-density)")
    p.add_argument("--t", type=float, required=True,
                   help="slice time (nearest recorded step is used)")
    p.add_argument("--baselines", default="hist,kde")
    p.add_argument("--bins", type=int, default=20,
                   help="histogram bins per dimension")
    p.add_argument("--bandwidth", type=float,
                   help="KDE bandwidth (default: Silverman rule)")
    p.add_argument("--rho0", default="uniform")
    p.add_argument("--support")
    p.add_argument("--out", required=True)

    p = add("eval-volume", "reachable volume needed per probability level")
    p.add_argument("--reach", required=True, help="reach artifact")
    p.add_argument("--thresholds", required=True,
                   help="comma-separated probability levels")
    p.add_argument("--out", required=True)

    return parser, subs


def _apply_config(argv, subs):
    """Expand --config JSON into flag tokens placed before explicit flags."""
    idx = next((i for i, tok in enumerate(argv)
                if not tok.startswith("-")), None)
    if idx is None or argv[idx] not in subs:
        return argv
    rest = argv[idx + 1:]
    path = None
    for i, tok in enumerate(rest):
        if tok == "--config" and i + 1 < len(rest):
            path = rest[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object of flag values")
    tokens = []
    for key in sorted(cfg):
        value = cfg[key]
        flag = "--" + str(key).lstrip("-").replace("_", "-")
        if isinstance(value, bool):
            if value:
                tokens.append(flag)
        elif isinstance(value, list):
            tokens.extend([flag, ",".join(str(v) for v in value)])
        else:
            tokens.extend([flag, str(value)])
    return argv[:idx + 1] + tokens + argv[idx + 1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subs = build_parser()
    try:
        argv = _apply_config(argv, subs)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    try:
        ns, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required", file=sys.stderr)
        return 2
    if extra:
        options = sorted({s for a in subs[ns.command]._actions
                          for s in a.option_strings})
        hints = []
        for tok in extra:
            if tok.startswith("-"):
                close = difflib.get_close_matches(tok.split("=")[0],
                                                  options, n=1)
                if close:
                    hints.append(f"did you mean {close[0]!r}?")
        msg = f"unrecognized arguments: {' '.join(extra)}"
        if hints:
            msg += " (" + "; ".join(hints) + ")"
        print(subs[ns.command].format_usage() + f"error: {msg}",
              file=sys.stderr)
        return 2
    try:
        return _DISPATCH[ns.command](ns, ["densereach", *argv])
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
