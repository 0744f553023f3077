"""File formats, JSON emission and the ``graphfpe`` command line.

Graph files are plain text: a first statement ``n <N>`` followed by one
``e <i> <j>`` line per edge (0-based), ``#`` starting a comment. Vector files
(potentials, distributions) hold one real per line. Every parse error names
the offending line.

Reports are JSON with floats written to 17 significant digits, so equal
inputs produce byte-identical files. Outputs are written to a temporary file
in the target directory and renamed into place, so a failing command never
leaves a partial file behind.

Exit codes: 0 all checks passed, 1 a check failed, 2 invalid input,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .dynamics import FpeVariant, IntegratorConfig, format17, integrate
from .energy import PotentialSystem, as_distribution, free_energy, relative_entropy
from .errors import GraphFPEError, InputError, NumericalError
from .graph_core import Graph, isoperimetric_spectral_bound, laplacian, spectral_gap_lower_bounds, spectral_summary
from .metric import (LowerBoundMetric, PotentialMetric, check_talagrand_global, check_talagrand_local,
                     geodesic_distance)
from .rates import (MlsiBudget, entropy_rate_constant, epsilon_ladder, estimate_mlsi, fit_decay_rate,
                    rate_constant_fpe1, rate_constant_fpe2, validate_mlsi)
from .sampling import cell_rng, random_distribution, random_graph

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


# -- file formats -------------------------------------------------------------

def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_graph(text: str, source: str = "<graph>") -> Graph:
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        parts = line.split()
        where = f"{source}: line {lineno}"
        if n is None:
            if len(parts) != 2 or parts[0] != "n":
                raise InputError(f"{where}: expected 'n <N>', got {raw.strip()!r}")
            n = _parse_int(parts[1], where)
            continue
        if len(parts) != 3 or parts[0] != "e":
            raise InputError(f"{where}: expected 'e <i> <j>', got {raw.strip()!r}")
        i, j = _parse_int(parts[1], where), _parse_int(parts[2], where)
        if not (0 <= i < n and 0 <= j < n):
            raise InputError(f"{where}: vertex index out of range 0..{n - 1}")
        edges.append((i, j))
    if n is None:
        raise InputError(f"{source}: missing 'n <N>' line")
    try:
        return Graph(n, edges)
    except InputError as exc:
        raise InputError(f"{source}: {exc}") from exc


def _parse_int(token, where):
    try:
        return int(token)
    except ValueError:
        raise InputError(f"{where}: {token!r} is not an integer") from None


def format_graph(g: Graph) -> str:
    """Canonical text: ``n`` line then edges ``i < j`` in sorted order."""
    lines = [f"n {g.n}"] + [f"e {i} {j}" for i, j in g.edges]
    return "\n".join(lines) + "\n"


def parse_vector(text: str, source: str = "<vector>") -> np.ndarray:
    values = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        try:
            v = float(line)
        except ValueError:
            raise InputError(f"{source}: line {lineno}: {line!r} is not a real number") from None
        if not math.isfinite(v):
            raise InputError(f"{source}: line {lineno}: non-finite value")
        values.append(v)
    if not values:
        raise InputError(f"{source}: no values")
    return np.array(values)


def format_vector(v) -> str:
    return "".join(format17(x) + "\n" for x in np.asarray(v, dtype=float))


def _read_text(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def read_graph(path) -> Graph:
    return parse_graph(_read_text(path), str(path))


def read_vector(path) -> np.ndarray:
    return parse_vector(_read_text(path), str(path))


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- JSON -----------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _encode(obj, indent, level):
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format17(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = [(json.dumps(k), _encode(v, indent, level + 1)) for k, v in obj.items()]
        if not items:
            return "{}"
        if indent is None:
            return "{" + ", ".join(f"{k}: {v}" for k, v in items) + "}"
        pad, close = "\n" + " " * (indent * (level + 1)), "\n" + " " * (indent * level)
        return "{" + ",".join(f"{pad}{k}: {v}" for k, v in items) + close + "}"
    if isinstance(obj, list):
        # numeric vectors stay on one line even in indented output
        parts = [_encode(v, indent, level + 1) for v in obj]
        if indent is None or all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(parts) + "]"
        pad, close = "\n" + " " * (indent * (level + 1)), "\n" + " " * (indent * level)
        return "[" + ",".join(pad + v for v in parts) + close + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=None) -> str:
    """JSON with every float at 17 significant digits; non-finite floats become null."""
    return _encode(_jsonable(obj), indent, 0)


# -- configuration --------------------------------------------------------------

@dataclass
class RunConfig:
    graph: str | None = None
    potential: str | None = None
    beta: float = 1.0
    variant: str = "2"
    rho0: str | None = None
    rho1: str | None = None
    rho2: str | None = None
    mu: str | None = None
    nu: str | None = None
    margin: float | None = None
    t_end: float = 10.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    segments: int = 64
    seed: int = 0
    starts: int = 64
    instances: int = 0
    constant: float | None = None
    corpus: str | None = None
    workers: int = 1
    out: str | None = None
    csv: str | None = None

    def validate(self):
        if not (isinstance(self.beta, (int, float)) and self.beta > 0 and math.isfinite(self.beta)):
            raise InputError(f"beta must be a finite positive number, got {self.beta!r}")
        FpeVariant.parse(self.variant)
        if self.segments < 1:
            raise InputError("segments must be >= 1")
        for name in ("graph", "potential", "rho0", "rho1", "rho2", "mu", "nu", "corpus"):
            path = getattr(self, name)
            if path is not None and not os.access(path, os.R_OK):
                raise InputError(f"--{name.replace('_', '-')}: cannot read {path}")
        return self


def load_config(path) -> dict:
    try:
        data = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise InputError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the ``--config`` file, then explicit flags (flags win)."""
    values = {}
    if args.config:
        values.update(load_config(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values).validate()


def _require(cfg, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise InputError(f"--{name.replace('_', '-')} is required")


def _potential_system(cfg, g) -> PotentialSystem:
    psi = read_vector(cfg.potential) if cfg.potential else np.zeros(g.n)
    if psi.size != g.n:
        raise InputError(f"potential has {psi.size} entries, graph has {g.n} vertices")
    return PotentialSystem(psi, cfg.beta)


def _distribution(path, n, name):
    v = read_vector(path)
    if v.size != n:
        raise InputError(f"{name} has {v.size} entries, graph has {n} vertices")
    return as_distribution(v)


def _emit(cfg, record, stdout):
    text = dumps(record, indent=2) + "\n"
    if cfg.out:
        atomic_write(cfg.out, text)
    else:
        stdout.write(text)


# -- commands -------------------------------------------------------------------

def cmd_gibbs(cfg: RunConfig, stdout) -> int:
    _require(cfg, "graph")
    g = read_graph(cfg.graph)
    ps = _potential_system(cfg, g)
    record = {
        "command": "gibbs",
        "rho_star": ps.gibbs,
        "free_energy": free_energy(ps, ps.gibbs),
        "beta": ps.beta,
        "lambda2": spectral_summary(laplacian(g)).lambda2,
        "rate_constant_fpe2": rate_constant_fpe2(g, ps),
    }
    _emit(cfg, record, stdout)
    return EXIT_OK


def simulate_record(g: Graph, ps: PotentialSystem, variant, rho0, icfg: IntegratorConfig, constant=None):
    """Integrate, run the applicable envelope checks and return ``(record, trajectory)``."""
    variant = FpeVariant.parse(variant)
    traj = integrate(g, ps, variant, rho0, icfg)
    record = {"variant": variant.value, "beta": ps.beta, "rho0": rho0, "rho_star": ps.gibbs,
              "t_end": icfg.t_end, "n_samples": len(traj), "n_accepted": traj.n_accepted,
              "n_rejected": traj.n_rejected}
    if variant is FpeVariant.EQUATION_II:
        C = rate_constant_fpe2(g, ps) if constant is None else constant
        record["rate_constant"] = C
        checks = {"l2": fit_decay_rate(traj, "l2", C)}
    else:
        consts = rate_constant_fpe1(g, ps, rho0)
        C = consts.corrected if constant is None else constant
        record["rate_constant"] = C
        record["rate_constant_paper_literal"] = consts.paper_literal
        literal = fit_decay_rate(traj, "l2", consts.paper_literal)
        record["paper_literal_envelope_holds"] = literal.bound_satisfied
        checks = {"l2": fit_decay_rate(traj, "l2", C)}
        ladder = epsilon_ladder(ps, rho0)
        inside = [ladder.contains(q) for q in traj.states]
        record["ladder_eps"] = ladder.eps
        record["ladder_membership"] = all(inside)
    for name, rep in checks.items():
        record[f"{name}_envelope_holds"] = rep.bound_satisfied
        record[f"{name}_first_violation_time"] = rep.first_violation_time
        record[f"{name}_worst_ratio"] = rep.worst_ratio
        record[f"{name}_empirical_rate"] = rep.empirical_rate
        record[f"{name}_fit_residual"] = rep.fit_residual
    record["passed"] = all(r.bound_satisfied for r in checks.values()) and record.get("ladder_membership", True)
    return record, traj


def _integrator_config(cfg):
    return IntegratorConfig(rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol, t_end=cfg.t_end)


def cmd_simulate(cfg: RunConfig, stdout) -> int:
    _require(cfg, "graph")
    g = read_graph(cfg.graph)
    ps = _potential_system(cfg, g)
    rho0 = _distribution(cfg.rho0, g.n, "rho0") if cfg.rho0 else as_distribution(np.full(g.n, 1.0 / g.n))
    record, traj = simulate_record(g, ps, cfg.variant, rho0, _integrator_config(cfg), cfg.constant)
    record = {"command": "simulate", **record}
    if cfg.csv:
        buf = io.StringIO()
        traj.write_csv(buf)
        atomic_write(cfg.csv, buf.getvalue())
    _emit(cfg, record, stdout)
    return EXIT_OK if record["passed"] else EXIT_CHECK


def cmd_distance(cfg: RunConfig, stdout) -> int:
    _require(cfg, "graph", "rho1", "rho2")
    g = read_graph(cfg.graph)
    r1 = _distribution(cfg.rho1, g.n, "rho1")
    r2 = _distribution(cfg.rho2, g.n, "rho2")
    ps = _potential_system(cfg, g)
    kinds = [LowerBoundMetric(g), PotentialMetric.constant(g, ps.psi),
             PotentialMetric.free_energy_potential(g, ps.psi, ps.beta)]
    results = [geodesic_distance(k, r1, r2, cfg.segments).to_json() for k in kinds]
    d_m = results[0]["distance_upper"]
    record = {"command": "distance", "segments": cfg.segments, "distances": results,
              "d_m_le_d_psi": d_m <= results[1]["distance_upper"],
              "d_m_le_d_psibar": d_m <= results[2]["distance_upper"]}
    _emit(cfg, record, stdout)
    return EXIT_OK


def talagrand_instance(seed: int, index: int, segments: int = 16):
    """One seeded random global-inequality instance (graph with n <= 6)."""
    rng = cell_rng(seed, index)
    g = random_graph(rng, 2, 6)
    mu = random_distribution(rng, g.n, floor=1e-3)
    nu = random_distribution(rng, g.n, floor=1e-3)
    return g, mu, nu, check_talagrand_global(g, mu, nu, segments)


def _talagrand_corpus_cell(args):
    seed, index, segments = args
    g, mu, nu, rep = talagrand_instance(seed, index, segments)
    return {"index": index, "n": g.n, "edges": [list(e) for e in g.edges], **rep.to_json()}


def cmd_talagrand(cfg: RunConfig, stdout) -> int:
    if cfg.instances:
        jobs = [(cfg.seed, k, min(cfg.segments, 16)) for k in range(cfg.instances)]
        cells = _ordered_map(_talagrand_corpus_cell, jobs, cfg.workers)
        ratios = [c["rhs"] / c["lhs"] if c["lhs"] > 0 else math.inf for c in cells]
        record = {"command": "talagrand", "mode": "corpus", "seed": cfg.seed, "instances": cfg.instances,
                  "all_hold": all(c["holds"] for c in cells), "min_slack_ratio": min(ratios), "cells": cells}
        _emit(cfg, record, stdout)
        return EXIT_OK if record["all_hold"] else EXIT_CHECK
    _require(cfg, "graph", "mu", "nu")
    g = read_graph(cfg.graph)
    mu = _distribution(cfg.mu, g.n, "mu")
    nu = _distribution(cfg.nu, g.n, "nu")
    rep = check_talagrand_global(g, mu, nu, cfg.segments)
    record = {"command": "talagrand", "mode": "global", "relative_entropy": relative_entropy(nu, mu),
              **rep.to_json()}
    ok = rep.holds
    if cfg.margin is not None:
        local = check_talagrand_local(g, mu, nu, cfg.margin, cfg.segments)
        record["local"] = local.to_json()
        ok = ok and local.holds
    _emit(cfg, record, stdout)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_mlsi(cfg: RunConfig, stdout) -> int:
    _require(cfg, "graph")
    g = read_graph(cfg.graph)
    ref = _distribution(cfg.mu, g.n, "mu") if cfg.mu else _potential_system(cfg, g).gibbs
    budget = MlsiBudget(n_starts=cfg.starts, seed=cfg.seed)
    gamma = estimate_mlsi(g, ref, budget)
    slack = validate_mlsi(g, ref, gamma, seed=cfg.seed + 1)
    record = {"command": "mlsi", "reference": ref, "gamma_hat": gamma, "n_starts": cfg.starts,
              "seed": cfg.seed, "validation_min_slack": slack, "validation_passed": slack >= -1e-12}
    _emit(cfg, record, stdout)
    return EXIT_OK if record["validation_passed"] else EXIT_CHECK


def cmd_spectral(cfg: RunConfig, stdout) -> int:
    _require(cfg, "graph")
    g = read_graph(cfg.graph)
    spec = spectral_summary(laplacian(g))
    bounds = spectral_gap_lower_bounds(g)
    iso = isoperimetric_spectral_bound(g)
    record = {"command": "spectral", "n": g.n, "m": g.m, "eigenvalues": spec.eigenvalues,
              "lambda2": spec.lambda2, "lambdaN": spec.lambdaN,
              "degree_bound": bounds.degree_bound, "diameter_bound": bounds.diameter_bound,
              "cycle_bound": bounds.cycle_bound, "isoperimetric_number": iso.isoperimetric_number,
              "isoperimetric_bound": iso.bound, "isoperimetric_chained_bound": iso.chained_bound}
    tol = 1e-12 * max(1.0, spec.lambdaN)
    names = ["degree_bound", "diameter_bound", "cycle_bound", "isoperimetric_bound"]
    record["bound_holds"] = {k: record[k] is None or record[k] <= spec.lambda2 + tol for k in names}
    _emit(cfg, record, stdout)
    return EXIT_OK if all(record["bound_holds"].values()) else EXIT_CHECK


# -- corpus ---------------------------------------------------------------------

def _ordered_map(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _corpus_cell(job):
    index, graph_text, graph_path, psi, psi_path, beta, variant, seed, icfg = job
    g = parse_graph(graph_text, graph_path)
    ps = PotentialSystem(psi, beta)
    rho0 = random_distribution(cell_rng(seed, index), g.n)
    head = {"index": index, "graph": graph_path, "potential": psi_path, "seed": seed}
    try:
        record, traj = simulate_record(g, ps, variant, rho0, icfg)
        if FpeVariant.parse(variant) is FpeVariant.EQUATION_II:
            gamma = estimate_mlsi(g, ps.gibbs, MlsiBudget(n_starts=8, max_iter=100, seed=seed))
            c = entropy_rate_constant(g, ps, gamma)
            rep = fit_decay_rate(traj, "entropy", c)
            record.update(gamma_hat=gamma, entropy_rate_constant=c,
                          entropy_envelope_holds=rep.bound_satisfied,
                          entropy_first_violation_time=rep.first_violation_time,
                          entropy_worst_ratio=rep.worst_ratio)
            record["passed"] = record["passed"] and rep.bound_satisfied
    except NumericalError as exc:
        record = {"passed": False, "error": str(exc)}
    return {**head, **record}


def load_corpus(path) -> dict:
    try:
        spec = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    for key in ("graphs", "potentials", "betas", "variants"):
        if not isinstance(spec.get(key), list) or not spec[key]:
            raise InputError(f"{path}: '{key}' must be a nonempty list")
    base = os.path.dirname(os.path.abspath(path))
    spec["graphs"] = [os.path.join(base, p) for p in spec["graphs"]]
    spec["potentials"] = [os.path.join(base, p) for p in spec["potentials"]]
    return spec


def corpus_jobs(spec: dict, seed: int, icfg: IntegratorConfig):
    """Cells: every graph with every potential of matching length, every beta and variant."""
    graphs = [(p, _read_text(p)) for p in spec["graphs"]]
    pots = [(p, read_vector(p)) for p in spec["potentials"]]
    jobs = []
    for gpath, gtext in graphs:
        g = parse_graph(gtext, gpath)
        for ppath, psi in pots:
            if psi.size != g.n:
                continue
            for beta in spec["betas"]:
                for variant in spec["variants"]:
                    FpeVariant.parse(variant)
                    jobs.append((len(jobs), gtext, os.path.relpath(gpath), psi, os.path.relpath(ppath),
                                 float(beta), str(variant), seed, icfg))
    if not jobs:
        raise InputError("corpus has no cell: no potential matches any graph size")
    return jobs


def cmd_corpus(cfg: RunConfig, stdout) -> int:
    _require(cfg, "corpus")
    spec = load_corpus(cfg.corpus)
    icfg = IntegratorConfig(rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol, t_end=float(spec.get("t_end", cfg.t_end)))
    records = _ordered_map(_corpus_cell, corpus_jobs(spec, cfg.seed, icfg), cfg.workers)
    text = "".join(dumps(r) + "\n" for r in records)
    if cfg.out:
        atomic_write(cfg.out, text)
    else:
        stdout.write(text)
    return EXIT_OK if all(r["passed"] for r in records) else EXIT_CHECK


COMMANDS = {"gibbs": cmd_gibbs, "simulate": cmd_simulate, "distance": cmd_distance,
            "talagrand": cmd_talagrand, "mlsi": cmd_mlsi, "spectral": cmd_spectral, "corpus": cmd_corpus}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values; explicit flags override it")
    common.add_argument("--graph", help="graph file ('n N' then 'e i j' lines)")
    common.add_argument("--potential", help="potential file, one real per line (default: zero)")
    common.add_argument("--beta", type=float)
    common.add_argument("--variant", choices=["1", "2"])
    common.add_argument("--rho0", help="initial distribution file (default: uniform)")
    common.add_argument("--rho1")
    common.add_argument("--rho2")
    common.add_argument("--mu", help="reference distribution file")
    common.add_argument("--nu")
    common.add_argument("--margin", type=float, help="box margin for the local inequality")
    common.add_argument("--t-end", dest="t_end", type=float)
    common.add_argument("--rel-tol", dest="rel_tol", type=float)
    common.add_argument("--abs-tol", dest="abs_tol", type=float)
    common.add_argument("--segments", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--starts", type=int, help="random starts for the MLSI estimator")
    common.add_argument("--instances", type=int, help="talagrand: number of seeded random instances")
    common.add_argument("--constant", type=float, help="simulate: override the envelope rate constant")
    common.add_argument("--corpus", help="corpus definition (JSON)")
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--csv", help="simulate: trajectory CSV output")

    parser = argparse.ArgumentParser(prog="graphfpe", description="Fokker-Planck equations on graphs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg, stdout)
    except InputError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except NumericalError as exc:
        stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except GraphFPEError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC


def main_entry():
    sys.exit(main())
