"""Command line front end: config parsing, pipeline orchestration and report emission."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import MODULE_VERSIONS, __version__

SCHEMA = "resonant-nf/report/v1"

DEFAULT_TOLERANCES = {
    "fitting": 1e-8,
    "dedup": 1e-6,
    "yedge": 1e-8,
    "alcf": 1e-10,
    "det_factor": 1e-8,
}

SUBCOMMANDS = ("graph", "normal-form", "melnikov", "stratify", "kam", "all")


class ConfigError(ValueError):
    """Malformed configuration; the message starts with ``path:line:``."""


@dataclass
class SessionConfig:
    d: int
    n: int
    q: int
    S: list
    box_radius: int
    xi_mode: dict
    K0: int = 4
    tau: float = 40.0
    rho0: float = 0.25
    S0: int = 0
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    seed: int = 0
    epsilon: float = 0.3
    melnikov: dict = field(default_factory=dict)
    stratify: dict = field(default_factory=dict)
    kam: dict = field(default_factory=dict)

    def canonical(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def xi_points(self) -> np.ndarray:
        """Parameter points of the run, from explicit samples or a tensor grid."""
        if "samples" in self.xi_mode:
            return np.array(self.xi_mode["samples"], dtype=float)
        lo, hi, count = self.xi_mode["grid"]
        axis = np.linspace(lo, hi, int(count))
        mesh = np.meshgrid(*([axis] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def _line_of(text: str, key: str) -> int:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return 1


def load_config(path, seed=None, tol_overrides=None) -> SessionConfig:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}:1: cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be an object")

    def fail(key, msg):
        raise ConfigError(f"{path}:{_line_of(text, key)}: {key}: {msg}")

    known = set(SessionConfig.__dataclass_fields__)
    for key in raw:
        if key not in known:
            fail(key, "unknown field")
    for key in ("d", "n", "q", "S", "box_radius", "xi_mode"):
        if key not in raw:
            raise ConfigError(f"{path}:1: missing required field '{key}'")
    for key in ("d", "n", "q", "box_radius", "K0", "S0", "seed"):
        if key in raw and (not isinstance(raw[key], int) or isinstance(raw[key], bool)):
            fail(key, "must be an integer")
    for key in ("tau", "rho0", "epsilon"):
        if key in raw and (not isinstance(raw[key], (int, float)) or isinstance(raw[key], bool) or raw[key] <= 0):
            fail(key, "must be a positive number")
    if raw["d"] < 1 or raw["n"] < 1 or raw["q"] < 1 or raw["box_radius"] < 1:
        fail("d", "d, n, q and box_radius must be positive")
    S = raw["S"]
    if not isinstance(S, list) or len(S) != raw["n"]:
        fail("S", f"expected a list of n = {raw['n']} sites")
    for site in S:
        if not isinstance(site, list) or len(site) != raw["d"] or not all(isinstance(c, int) for c in site):
            fail("S", f"every site must be a list of d = {raw['d']} integers, got {site!r}")
    if len({tuple(s) for s in S}) != len(S):
        fail("S", "duplicate tangential sites")
    if max(abs(c) for s in S for c in s) > raw["box_radius"]:
        fail("box_radius", "box must contain all tangential sites")
    xm = raw["xi_mode"]
    if not isinstance(xm, dict) or len(xm) != 1 or not ({"samples", "grid"} & set(xm)):
        fail("xi_mode", "expected {\"samples\": [...]} or {\"grid\": [lo, hi, count]}")
    if "samples" in xm:
        pts = xm["samples"]
        if not isinstance(pts, list) or not pts or any(
            not isinstance(p, list) or len(p) != raw["n"] or any(not isinstance(c, (int, float)) or c <= 0 for c in p)
            for p in pts
        ):
            fail("xi_mode", "samples must be a non-empty list of positive n-vectors")
    else:
        g = xm["grid"]
        if not isinstance(g, list) or len(g) != 3 or not (0 < g[0] < g[1]) or not isinstance(g[2], int) or g[2] < 1:
            fail("xi_mode", "grid must be [lo, hi, count] with 0 < lo < hi and count >= 1")
    tols = dict(DEFAULT_TOLERANCES)
    for k, v in raw.get("tolerances", {}).items():
        if k not in DEFAULT_TOLERANCES:
            fail("tolerances", f"unknown tolerance '{k}'")
        if not isinstance(v, (int, float)) or v <= 0:
            fail("tolerances", f"tolerance '{k}' must be positive")
        tols[k] = float(v)
    for k, v in (tol_overrides or {}).items():
        if k not in DEFAULT_TOLERANCES:
            raise ConfigError(f"--tol:1: unknown tolerance '{k}'")
        tols[k] = v
    for key in ("melnikov", "stratify", "kam"):
        if key in raw and not isinstance(raw[key], dict):
            fail(key, "must be an object")
    args = {k: v for k, v in raw.items() if k not in ("tolerances",)}
    args["tolerances"] = tols
    args["S"] = [list(s) for s in S]
    if seed is not None:
        args["seed"] = seed
    return SessionConfig(**args)


# serialization

def _fmt_number(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return json.dumps(str(x))
    return f"{x:.17g}"


def dumps(obj, indent: int = 0) -> str:
    """JSON with sorted keys and floats written with 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, int, float, np.integer, np.floating)):
        return _fmt_number(obj)
    if isinstance(obj, complex):
        return dumps([obj.real, obj.imag], indent)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, Fraction):
        return json.dumps(str(obj))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = sorted((str(k), v) for k, v in obj.items())
        inner = ",\n".join(f"{pad}{json.dumps(k)}: {dumps(v, indent + 1)}" for k, v in items)
        return "{\n" + inner + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v, indent + 1) for v in seq) + "]"
        inner = ",\n".join(pad + dumps(v, indent + 1) for v in seq)
        return "[\n" + inner + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def emit_report(results: dict, cfg: SessionConfig, subcommand: str, out_dir, summary_lines, extra_files=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "schema": SCHEMA,
        "subcommand": subcommand,
        "config_hash": cfg.hash(),
        "package_version": __version__,
        "module_versions": MODULE_VERSIONS,
        "seed": cfg.seed,
        "results": results,
    }
    (out / "report.json").write_text(dumps(report) + "\n")
    (out / "summary.txt").write_text("\n".join(summary_lines) + "\n")
    for name, text in (extra_files or {}).items():
        (out / name).write_text(text)
    return out / "report.json"


# pipeline stages

@dataclass
class Pipeline:
    cfg: SessionConfig
    summary: list = field(default_factory=list)
    nongeneric: list = field(default_factory=list)
    extra_files: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict)

    @property
    def S(self):
        return tuple(tuple(s) for s in self.cfg.S)

    def stage(self, name):
        """Run a stage once; later requests reuse its result."""
        key = "result:" + name
        if key not in self._cache:
            self._cache[key] = getattr(self, "_" + name)()
        return self._cache[key]

    def _graph(self):
        from .graph import build_graph, components, genericity_report, translation_classes

        c = self.cfg
        g = build_graph(self.S, c.q, c.box_radius)
        special, blocks, diag = components(g)
        gen = genericity_report(blocks, c.d, c.q)
        fams = translation_classes(blocks, c.d)
        self._cache["graph"] = (g, special, blocks, diag, gen)
        if diag or not gen["passed"]:
            self.nongeneric.append("resonance graph")
        res = {
            "black_edges": len(g.black_edges),
            "red_edges": len(g.red_edges),
            "special_component": [list(v) for v in special.vertices],
            "special_diagnostics": diag,
            "blocks": [
                {
                    "root": list(b.root),
                    "vertices": [list(v) for v in b.vertices],
                    "sigma": [b.sigma[v] for v in b.vertices],
                    "L": [list(b.L[v]) for v in b.vertices],
                    "red": b.has_red,
                    "boundary": b.boundary_flag,
                }
                for b in blocks
                if b.size > 1
            ],
            "singletons": sum(1 for b in blocks if b.size == 1),
            "genericity": gen,
            "translation_families": [
                dict(f, representative=list(f["representative"]), generators=[list(v) for v in f["generators"]])
                for f in fams
            ],
        }
        self.summary.append(
            f"graph: {len(blocks)} blocks ({sum(1 for b in blocks if b.size > 1)} non-trivial), "
            f"{gen['red_blocks']} red interior blocks, genericity {'passed' if gen['passed'] and not diag else 'FAILED'}"
        )
        return res

    def _normal_form(self):
        from .blocks import catalog_to_json, combinatorialize, eigenvalue_catalog, sample_xi
        from .final_graph import (
            assemble_normal_forms,
            build_final_graph,
            check_alcf,
            finalize_partition,
            normal_form_to_json,
            translation_covariance,
            y_edges,
        )

        c = self.cfg
        self.stage("graph")
        g, special, blocks, diag, gen = self._cache["graph"]
        if self.nongeneric:
            return {"skipped": "non-generic tangential sites"}
        cbs = [combinatorialize(b) for b in blocks]
        rng = np.random.default_rng(c.seed)
        X = sample_xi(rng, c.n, c.n + 4, c.epsilon)
        cat = eigenvalue_catalog(cbs, c.q, X, tol=c.tolerances["fitting"], dedup_tol=c.tolerances["dedup"])
        ye, ydiag = y_edges(cat, tol=c.tolerances["yedge"])
        fg = build_final_graph(blocks, cat, ye, self.S)
        part = finalize_partition(fg, blocks, cat, self.S)
        alcf = check_alcf(part, cat, c.tolerances["alcf"])
        cov = translation_covariance(part, blocks)
        pts = c.xi_points()
        nfs = assemble_normal_forms(part, cat, blocks, pts)
        self._cache["nf"] = (cat, part, nfs, blocks)
        if part.diagnostics or alcf:
            self.nongeneric.append("final graph")
        res = {
            "branches": catalog_to_json(cat),
            "y_edges": [{"ell": list(e.ell), "color": e.color, "witnesses": e.witnesses} for e in ye],
            "y_edge_diagnostics": ydiag,
            "final_blocks": len(part.T),
            "bad_blocks": len(part.T_f),
            "partition_diagnostics": part.diagnostics,
            "alcf_failures": [[kind, list(k)] for kind, k in alcf],
            "translation_covariance_failures": len(cov),
            "normal_forms": [normal_form_to_json(nf) for nf in nfs[:3]],
            "points": len(nfs),
        }
        self.summary.append(
            f"normal form: {len(cat.branches)} eigenvalue branches, {len(ye)} Y-edges, "
            f"{len(part.T)} final blocks ({len(part.T_f)} bad), {len(alcf)} label failures"
        )
        return res

    def _melnikov(self):
        from .melnikov import BoundParams, kernel_verify, report_to_json, resonant_scan, sublevel_measure_check

        c = self.cfg
        self.stage("normal_form")
        if "nf" not in self._cache:
            return {"skipped": "normal form unavailable"}
        cat, part, nfs, blocks = self._cache["nf"]
        K = int(c.melnikov.get("K", 8))
        rhos = list(c.melnikov.get("rhos", [2, 4, 8]))
        radius = int(c.melnikov.get("sweep_radius", 3))
        params = BoundParams(c.epsilon, c.q, K, max(rhos), c.d, S0=c.S0)
        min_points = int(c.melnikov.get("min_points", 16))
        scan = resonant_scan(K, rhos, nfs, part, params, min_points=min_points)
        roots = {t.root for t in part.T if max(abs(x) for x in t.root) <= radius}
        kv = kernel_verify(nfs, part, K, roots=roots, det_factor=c.tolerances["det_factor"], eps=c.epsilon)
        rng = np.random.default_rng(c.seed)
        measures = []
        for alpha in (0.1, 0.01):
            for name, f, k, box in (
                ("x on [0,1]", lambda X: X[:, 0], 1, [(0, 1)]),
                ("x^2 on [-1,1]", lambda X: X[:, 0] ** 2, 2, [(-1, 1)]),
                ("x1 on the unit square", lambda X: X[:, 0], 1, [(0, 1), (0, 1)]),
            ):
                r = sublevel_measure_check(f, k, 1.0, alpha, box, int(c.melnikov.get("mc_samples", 100000)), rng)
                measures.append(dict(r, function=name, alpha=alpha))
        if not kv["passed"]:
            self.nongeneric.append("melnikov sweep")
        res = {
            "scan": report_to_json(scan),
            "M": params.M,
            "kernel_sweep": kv,
            "sublevel_measure": measures,
        }
        self.summary.append(
            f"melnikov: K={K}, census {scan.census} (bound {scan.census_bound:.0f}), "
            f"resonant fraction {scan.union_fraction}, sweep {'passed' if kv['passed'] else 'FAILED'}"
        )
        return res

    def _stratify(self):
        from .stratification import count_check, refinement_check, stratify, strata_to_json

        c = self.cfg
        Ns = list(c.stratify.get("N", [8, 16]))
        box = int(c.stratify.get("box_radius", min(c.box_radius, 8)))
        out = {}
        for N in Ns:
            strata, counts, diag = stratify(box, c.d, N, c.rho0)
            cc = count_check(strata, c.d, N, c.rho0)
            ref = []
            if "graph" in self._cache:
                ref = refinement_check(self._cache["graph"][2], strata)
            out[str(N)] = {
                "strata": len(strata),
                "counts": {f"codim{k[0]}_level{k[1]}": v for k, v in sorted(counts.items())},
                "count_check": {str(j): v for j, v in cc.items()},
                "diagnostics": diag,
                "refinement_mismatches": ref,
                "dump": strata_to_json(strata)[:50],
            }
            self.summary.append(
                f"stratify: N={N}, {len(strata)} strata on box {box}, counts "
                f"{'within' if all(v['passed'] for v in cc.values()) else 'ABOVE'} bound"
            )
        return out

    def _kam(self):
        from .kam import decay_csv, decay_exponent, kam_iterate, scaling_exponent, toy_instance

        c = self.cfg
        k = c.kam
        steps = int(k.get("steps", 3))
        seeds = [c.seed + i for i in range(int(k.get("seeds", 1)))]
        out = []
        rows = []
        for sd in seeds:
            inst = toy_instance(
                sd,
                S=self.S,
                q=c.q,
                box=int(k.get("box", min(c.box_radius, 6))),
                K0=c.K0,
                eps=c.epsilon,
                delta=float(k.get("delta", 1e-3)),
                active_radius=int(k.get("active_radius", 1)),
            )
            H, reps, norms = kam_iterate(inst.H, steps, c.K0, inst.partition)
            expo = decay_exponent(norms)
            tsc = scaling_exponent(inst, c.K0) if k.get("scaling", True) else float("nan")
            out.append(
                {
                    "seed": sd,
                    "norms": norms,
                    "decay_exponent": expo,
                    "scaling_exponent": tsc,
                    "steps": [
                        {
                            "K": r.K,
                            "s": r.s,
                            "r": r.r,
                            "f_norm": r.f_norm,
                            "residual": r.residual,
                            "dense_gap": r.dense_gap,
                            "lie_orders": r.lie_orders,
                            "basis_size": r.basis_size,
                        }
                        for r in reps
                    ],
                }
            )
            header, *body = decay_csv(reps, norms).strip().split("\n")
            rows += [f"{sd},{line}" for line in body]
            self.summary.append(f"kam: seed {sd}, norms {['%.3e' % v for v in norms]}, decay exponent {expo:.3f}")
        self.extra_files["decay.csv"] = "\n".join([f"seed,{header}"] + rows) + "\n"
        return out


def run(subcommand: str, cfg: SessionConfig, out_dir, workers: int = 1) -> int:
    pipe = Pipeline(cfg)
    results = {}
    stages = {
        "graph": ["graph"],
        "normal-form": ["graph", "normal_form"],
        "melnikov": ["graph", "normal_form", "melnikov"],
        "stratify": ["stratify"],
        "kam": ["kam"],
        "all": ["graph", "normal_form", "melnikov", "stratify", "kam"],
    }[subcommand]
    for st in stages:
        if st in ("normal_form", "melnikov", "kam") and "resonance graph" in pipe.nongeneric:
            results[st] = {"skipped": "non-generic tangential sites"}
            continue
        results[st] = pipe.stage(st)
    results["workers"] = workers
    results["nongeneric"] = pipe.nongeneric
    status = 2 if pipe.nongeneric else 0
    pipe.summary.append(f"status: {status}")
    emit_report(results, cfg, subcommand, out_dir, pipe.summary, pipe.extra_files)
    return status


def _parse_tol(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--tol:1: expected NAME=VALUE, got '{item}'")
        k, v = item.split("=", 1)
        try:
            out[k] = float(v)
        except ValueError as exc:
            raise ConfigError(f"--tol:1: value for '{k}' is not a number") from exc
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resonant-nf", description=__doc__)
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="JSON session config")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--workers", type=int, default=None, help="worker count (env RESONANT_NF_WORKERS)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a tolerance")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workers = args.workers
    if workers is None:
        env = os.environ.get("RESONANT_NF_WORKERS")
        workers = int(env) if env and env.isdigit() else 1
    try:
        cfg = load_config(args.config, args.seed, _parse_tol(args.tol))
        return run(args.subcommand, cfg, args.out, workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # any failure inside the pipeline is an error exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
