"""Named experiments over the lab's estimators, driven by flat text
configs, with append-only JSON-lines results, CSV mirrors, and
gnuplot-ready reports.

Config files are ``key = value`` lines grouped by ``[section]``
headers; keys before the first header are top level. ``experiment``
names the experiment, ``family`` the graph, ``seed`` / ``replicas`` /
``out`` the run envelope. Lists are whitespace separated so family
strings like Slab(3,1,4) stay single tokens. A sha256 prefix of the
canonical (sorted, ``out``-stripped) text is embedded in every record.

Randomness derivation: work unit j of an experiment runs at
``seed + j`` and unit order is part of the experiment's contract, so
rerunning a config regenerates every record bit for bit; ``wall_ms``
is the one field excluded from that promise. The runner fans units out
over PERCLAB_THREADS workers and a single appender serializes writes.
"""

import argparse
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .estimators import (
    _thread_count,
    cerf_check,
    est_pc,
    est_piv,
    est_sphere_connection,
    patch_for,
    to_record,
    two_ghost_slope,
)
from .ghosts import est_ghost_connection, est_pivotal_influence, snowball_chain
from .graphs import GraphFamily, build_patch, crossing_hits_exposed, geodesic, tube
from .multiscale import (
    LOG9,
    eval_full_space,
    hamming_bound_check,
    make_schedule,
    orange_peel_trace,
    p_infinity,
)
from .percolation import delta, sprinkle
from .walks import cool_inequality_check, iron, lazy_walk, vc_check

WALL_FIELDS = ("wall_ms",)

_REQUIRED = object()


# --- configs ---------------------------------------------------------------


class ExperimentConfig:
    """A parsed flat config: top-level keys plus [section] groups."""

    def __init__(self, sections: dict, path: Optional[str] = None):
        self.sections = sections
        self.path = path
        if "experiment" not in sections.get("", {}):
            raise ValueError("config must set 'experiment' at top level")
        self.experiment = sections[""]["experiment"]

    @classmethod
    def parse(cls, text: str, path: Optional[str] = None):
        sections: dict = {"": {}}
        current = ""
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                if not current:
                    raise ValueError(f"line {lineno}: empty section name")
                sections.setdefault(current, {})
                continue
            if "=" not in line:
                raise ValueError(
                    f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not key:
                raise ValueError(f"line {lineno}: empty key")
            if key in sections[current]:
                raise ValueError(
                    f"line {lineno}: duplicate key {key!r} in "
                    f"section [{current}]")
            sections[current][key] = value
        return cls(sections, path)

    @classmethod
    def load(cls, path):
        return cls.parse(Path(path).read_text(), str(path))

    def get(self, section: str, key: str, default=_REQUIRED) -> str:
        sec = self.sections.get(section, {})
        if key in sec:
            return sec[key]
        if default is _REQUIRED:
            where = f"[{section}]" if section else "top level"
            raise ValueError(f"missing config key {key!r} ({where})")
        return default

    def get_int(self, section, key, default=_REQUIRED) -> int:
        v = self.get(section, key, default)
        return v if isinstance(v, int) or v is None else int(v)

    def get_float(self, section, key, default=_REQUIRED) -> float:
        v = self.get(section, key, default)
        return v if isinstance(v, float) or v is None else float(v)

    def get_bool(self, section, key, default=_REQUIRED) -> bool:
        v = self.get(section, key, default)
        if isinstance(v, bool) or v is None:
            return v
        if v.lower() in ("yes", "true", "1", "on"):
            return True
        if v.lower() in ("no", "false", "0", "off"):
            return False
        raise ValueError(f"config key {key!r} wants yes/no, got {v!r}")

    def get_list(self, section, key, default=_REQUIRED) -> list:
        v = self.get(section, key, default)
        return v.split() if isinstance(v, str) else v

    def get_ints(self, section, key, default=_REQUIRED) -> list:
        v = self.get_list(section, key, default)
        return [int(t) for t in v] if v is not None else v

    def get_floats(self, section, key, default=_REQUIRED) -> list:
        v = self.get_list(section, key, default)
        return [float(t) for t in v] if v is not None else v

    def family(self, section="", key="family") -> GraphFamily:
        return GraphFamily.parse(self.get(section, key))

    def canonical(self) -> str:
        """Sorted serialization with the output path stripped out.

        The hash must not change when results are rerouted, so ``out``
        stays outside it.
        """
        lines = []
        for sec in sorted(self.sections):
            body = {k: v for k, v in self.sections[sec].items()
                    if not (sec == "" and k == "out")}
            if not body:
                continue
            if sec:
                lines.append(f"[{sec}]")
            lines.extend(f"{k} = {body[k]}" for k in sorted(body))
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def seed(self) -> int:
        return self.get_int("", "seed", 0)

    def replicas(self, default=1000) -> int:
        return self.get_int("", "replicas", default)


# --- records and the appender ----------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _record(cfg: ExperimentConfig, unit: int, op: str, family, est,
            p=None, params=None, x=None, y=None, verdict=None,
            wall_ms=None) -> dict:
    """One result row: the shared estimator schema plus the run envelope.

    ``x``/``y`` mark the record as a point of a plottable series;
    ``verdict`` marks it as a pass/fail check. ``wall_ms`` is excluded
    from the replay comparison.
    """
    rec = to_record(op, family, est, p=p, params=params, wall_ms=wall_ms)
    rec.update({
        "config": cfg.config_hash,
        "experiment": cfg.experiment,
        "unit": int(unit),
        "version": __version__,
        "x": x,
        "y": y,
        "verdict": verdict,
    })
    return _jsonable(rec)


def strip_wall(records):
    """Records minus the wall-time fields, for replay comparison."""
    return [{k: v for k, v in r.items() if k not in WALL_FIELDS}
            for r in records]


class ResultWriter:
    """The single appender: a JSON-lines file plus a CSV mirror.

    The jsonl file is append-only across runs; the CSV is regenerated
    from the full jsonl contents on close so it always mirrors it.
    """

    def __init__(self, prefix):
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        self.jsonl_path = prefix.with_suffix(".jsonl")
        self.csv_path = prefix.with_suffix(".csv")
        self._fp = open(self.jsonl_path, "a")

    def append(self, record: dict) -> None:
        self._fp.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fp.close()
        rows = []
        for line in self.jsonl_path.read_text().splitlines():
            if line.strip():
                rows.append(_flatten(json.loads(line)))
        cols = sorted({k for row in rows for k in row})
        import csv as _csv
        with open(self.csv_path, "w", newline="") as fp:
            w = _csv.DictWriter(fp, fieldnames=cols, restval="")
            w.writeheader()
            w.writerows(rows)


def _flatten(rec: dict) -> dict:
    out = {}
    for k, v in rec.items():
        if isinstance(v, dict):
            for kk, vv in v.items():
                out[f"{k}.{kk}"] = _csv_cell(vv)
        else:
            out[k] = _csv_cell(v)
    return out


def _csv_cell(v):
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else v


def _run_units(fns) -> list:
    """Evaluate unit callables, each returning a record list, in order."""
    workers = _thread_count()
    if workers > 1 and len(fns) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fn) for fn in fns]
            return [rec for fut in futures for rec in fut.result()]
    return [rec for fn in fns for rec in fn()]


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, int(1000 * (time.perf_counter() - t0))


def _mean_of(v):
    return v.mean if hasattr(v, "mean") else v


# --- experiments -----------------------------------------------------------


def _exp_pc_estimate(cfg: ExperimentConfig) -> list:
    """[pc] box, tolerance, criterion, cap; one threshold per run."""
    fam = cfg.family()
    L = cfg.get_int("pc", "box", 128)
    tol = cfg.get_float("pc", "tolerance", 0.005)
    crit = cfg.get("pc", "criterion", None)
    cap = cfg.get_int("pc", "cap", 10 ** 6)
    est, wall = _timed(lambda: est_pc(
        fam, L, criterion=crit, tolerance=tol, seed=cfg.seed(),
        replicas=cfg.replicas(20000), cap=cap))
    return [_record(cfg, 0, "pc_estimate", fam, est,
                    params={"box": L, "criterion": est.criterion,
                            "tolerance": tol},
                    x=L, y=est.p_hat, wall_ms=wall)]


def _family_x(fam: GraphFamily, j: int):
    return fam.params[-1] if fam.params else j


def _exp_locality_sweep(cfg: ExperimentConfig) -> list:
    """[sweep] families; mode = pc (thresholds, optional reference)
    or decay (sphere-connection decay rates at fixed p)."""
    fams = [GraphFamily.parse(s) for s in cfg.get_list("sweep", "families")]
    mode = cfg.get("sweep", "mode", "pc")
    seed = cfg.seed()
    if mode == "pc":
        return _sweep_pc(cfg, fams, seed)
    if mode == "decay":
        return _sweep_decay(cfg, fams, seed)
    raise ValueError(f"unknown sweep mode {mode!r} (want pc or decay)")


def _sweep_pc(cfg, fams, seed) -> list:
    boxes = cfg.get_ints("sweep", "boxes")
    if len(boxes) == 1:
        boxes = boxes * len(fams)
    if len(boxes) != len(fams):
        raise ValueError("boxes must match families (or be a single value)")
    tol = cfg.get_float("sweep", "tolerance", 0.005)
    crit = cfg.get("sweep", "criterion", None)
    replicas = cfg.replicas(20000)
    kesten = cfg.get_bool("sweep", "kesten", False)

    def unit(j, fam, L, op):
        def work():
            est, wall = _timed(lambda: est_pc(
                fam, L, criterion=crit, tolerance=tol, seed=seed + j,
                replicas=replicas))
            params = {"box": L, "criterion": est.criterion}
            if kesten:
                d = fam.params[0]
                params["kesten_product"] = est.p_hat * (2 * d - 1)
                params["kesten_bracket"] = [b * (2 * d - 1)
                                            for b in est.bracket]
            return [_record(cfg, j, op, fam, est, params=params,
                            x=_family_x(fam, j), y=est.p_hat, wall_ms=wall)]
        return work

    units = [unit(j, fam, L, "pc_sweep")
             for j, (fam, L) in enumerate(zip(fams, boxes))]
    ref = cfg.get("sweep", "reference", None)
    if ref is not None:
        ref_fam = GraphFamily.parse(ref)
        ref_box = cfg.get_int("sweep", "reference_box", boxes[-1])
        units.append(unit(len(fams), ref_fam, ref_box, "pc_reference"))
    records = _run_units(units)
    if kesten:
        prods = [r["params"]["kesten_product"] for r in records
                 if r["op"] == "pc_sweep"]
        lows = [r["params"]["kesten_bracket"][0] for r in records
                if r["op"] == "pc_sweep"]
        highs = [r["params"]["kesten_bracket"][1] for r in records
                 if r["op"] == "pc_sweep"]
        decreasing = all(highs[i + 1] < lows[i]
                         for i in range(len(prods) - 1))
        records.append(_record(
            cfg, len(units), "kesten_trend", fams[0], float("nan"),
            params={"products": prods}, verdict=decreasing))
    return records


def _sweep_decay(cfg, fams, seed) -> list:
    p = cfg.get_float("sweep", "p")
    radii = cfg.get_ints("sweep", "radii")
    radius = cfg.get_int("sweep", "radius", max(radii))
    replicas = cfg.replicas(2000)
    max_slope = cfg.get_float("sweep", "max_slope", None)

    def unit(j, fam):
        def work():
            t0 = time.perf_counter()
            ests = [est_sphere_connection(fam, radius, p, r,
                                          replicas=replicas, seed=seed + j)
                    for r in radii]
            wall = int(1000 * (time.perf_counter() - t0))
            recs = [_record(cfg, j, "sphere_connection", fam, e, p=p,
                            params={"r": r}, x=r, y=e.mean)
                    for r, e in zip(radii, ests)]
            pts = [(r, e.mean) for r, e in zip(radii, ests) if e.mean > 0]
            slope = float("nan")
            if len(pts) >= 2:
                xs, ys = zip(*pts)
                slope = float(np.polyfit(xs, np.log(ys), 1)[0])
            verdict = None
            if max_slope is not None:
                verdict = bool(slope <= max_slope)
            recs.append(_record(
                cfg, j, "decay_rate", fam, slope, p=p,
                params={"radii": radii, "rate": -slope},
                x=_family_x(fam, j), y=-slope, verdict=verdict,
                wall_ms=wall))
            return recs
        return work

    return _run_units([unit(j, fam) for j, fam in enumerate(fams)])


def _exp_two_ghost_scaling(cfg: ExperimentConfig) -> list:
    """[ghost] radius, p, ns, max_slope; shared-label size sweep."""
    fam = cfg.family()
    radius = cfg.get_int("ghost", "radius")
    p = cfg.get_float("ghost", "p")
    ns = cfg.get_ints("ghost", "ns")
    max_slope = cfg.get_float("ghost", "max_slope", None)
    (ests, slope), wall = _timed(lambda: two_ghost_slope(
        fam, radius, p, ns, replicas=cfg.replicas(10 ** 5),
        seed=cfg.seed()))
    recs = [_record(cfg, 0, "two_ghost", fam, e, p=p,
                    params={"n": n}, x=n, y=e.mean)
            for n, e in zip(ns, ests)]
    verdict = None if max_slope is None else bool(slope <= max_slope)
    recs.append(_record(cfg, 0, "two_ghost_slope", fam, slope, p=p,
                        params={"ns": ns}, verdict=verdict, wall_ms=wall))
    return recs


def _exp_piv_decay(cfg: ExperimentConfig) -> list:
    """[piv] radius, p, m, ns, method (monte_carlo, exact_enumeration,
    or compare, which records both plus an agreement verdict)."""
    fam = cfg.family()
    radius = cfg.get_int("piv", "radius")
    p = cfg.get_float("piv", "p")
    m = cfg.get_int("piv", "m")
    ns = cfg.get_ints("piv", "ns")
    method = cfg.get("piv", "method", "monte_carlo")
    replicas = cfg.replicas(1000)
    seed = cfg.seed()

    def unit(j, n):
        def work():
            if method == "compare":
                mc, wall = _timed(lambda: est_piv(
                    fam, radius, p, m, n, replicas=replicas, seed=seed + j))
                exact = est_piv(fam, radius, p, m, n, method="exact_enumeration")
                agree = abs(mc.mean - exact.mean) <= 3 * mc.ci_halfwidth
                return [
                    _record(cfg, j, "piv", fam, mc, p=p,
                            params={"m": m, "n": n, "method": "monte_carlo"},
                            x=n, y=mc.mean, wall_ms=wall),
                    _record(cfg, j, "piv_exact", fam, exact, p=p,
                            params={"m": m, "n": n}, x=n, y=exact.mean,
                            verdict=bool(agree)),
                ]
            est, wall = _timed(lambda: est_piv(
                fam, radius, p, m, n, replicas=replicas, seed=seed + j,
                method=method))
            return [_record(cfg, j, "piv", fam, est, p=p,
                            params={"m": m, "n": n, "method": method},
                            x=n, y=est.mean, wall_ms=wall)]
        return work

    return _run_units([unit(j, n) for j, n in enumerate(ns)])


def _exp_cerf_check(cfg: ExperimentConfig) -> list:
    """[cerf] radius, p, r, m, n; annulus comparison with CI verdict."""
    fam = cfg.family()
    radius = cfg.get_int("cerf", "radius")
    p = cfg.get_float("cerf", "p")
    r = cfg.get_int("cerf", "r")
    m = cfg.get_int("cerf", "m")
    n = cfg.get_int("cerf", "n")
    rep, wall = _timed(lambda: cerf_check(
        fam, radius, p, r, m, n, replicas=cfg.replicas(2000),
        seed=cfg.seed()))
    return [_record(cfg, 0, "cerf_check", fam, rep.lhs, p=p,
                    params={"r": r, "m": m, "n": n, "rhs": rep.rhs,
                            "rhs_interval": list(rep.rhs_interval),
                            "parts": {k: _mean_of(v)
                                      for k, v in rep.parts.items()}},
                    verdict=bool(rep.holds_within_ci), wall_ms=wall)]


def _first_hit_paths(patch, r):
    """Every simple path from S_r to its first visit of S_{2r+1}."""
    target = 2 * r + 1
    indptr, nbr_v, _ = patch.csr()

    def extend(path, on_path):
        tip = path[-1]
        for w in nbr_v[indptr[tip]:indptr[tip + 1]]:
            w = int(w)
            if w in on_path:
                continue
            if patch.dist[w] == target:
                yield path + [w]
            elif patch.dist[w] < target:
                on_path.add(w)
                yield from extend(path + [w], on_path)
                on_path.remove(w)

    for s in patch.sphere(r):
        s = int(s)
        yield from extend([s], {s})


def _exp_walk_checks(cfg: ExperimentConfig) -> list:
    """[walks] families, t_max, radius; exact kernel inequalities,
    plus optional geometry checks (geometry = yes: exhaustive exposed
    sphere crossings to exposed_r, ironing containments on iron_paths
    random walk paths)."""
    fams = [GraphFamily.parse(s) for s in cfg.get_list("walks", "families")]
    t_max = cfg.get_int("walks", "t_max", 15)
    radius = cfg.get_int("walks", "radius", t_max + 1)
    seed = cfg.seed()

    def kernel_unit(j, fam):
        def work():
            patch = patch_for(fam, radius)
            out = []
            for check in (vc_check, cool_inequality_check):
                rep, wall = _timed(lambda: check(patch, t_max))
                out.append(_record(
                    cfg, j, rep.kind, fam, rep.worst_ratio,
                    params={"t_max": t_max, "n_checked": rep.n_checked,
                            "violations": len(rep.violations)},
                    verdict=rep.ok, wall_ms=wall))
            return out
        return work

    units = [kernel_unit(j, fam) for j, fam in enumerate(fams)]
    if cfg.get_bool("walks", "geometry", False):
        geo_fams = [GraphFamily.parse(s) for s in
                    cfg.get_list("walks", "geometry_families",
                                 cfg.get("walks", "families"))]
        r_max = cfg.get_int("walks", "exposed_r", 2)
        n_paths = cfg.get_int("walks", "iron_paths", 1000)
        iron_r = cfg.get_int("walks", "iron_r", 2)
        iron_t = cfg.get_int("walks", "iron_t", 10)
        base = len(units)
        for k, fam in enumerate(geo_fams):
            units.append(_geometry_unit(cfg, base + 2 * k, fam, r_max))
            units.append(_ironing_unit(cfg, base + 2 * k + 1, fam,
                                       n_paths, iron_r, iron_t,
                                       seed + base + 2 * k + 1))
    return _run_units(units)


def _geometry_unit(cfg, j, fam, r_max):
    def work():
        patch = patch_for(fam, 2 * r_max + 2)
        t0 = time.perf_counter()
        counts = []
        ok = True
        for r in range(1, r_max + 1):
            c = 0
            for path in _first_hit_paths(patch, r):
                c += 1
                if not crossing_hits_exposed(patch, r, path):
                    ok = False
            counts.append(c)
        wall = int(1000 * (time.perf_counter() - t0))
        return [_record(cfg, j, "exposed_exhaustive", fam, sum(counts),
                        params={"r_max": r_max, "paths_per_r": counts},
                        verdict=ok, wall_ms=wall)]
    return work


def _ironing_unit(cfg, j, fam, n_paths, r, t, seed):
    def work():
        patch = patch_for(fam, t + 1)
        t0 = time.perf_counter()
        bad = 0
        for i in range(n_paths):
            path = lazy_walk(patch, 0, t, seed, i)
            ironed = iron(path, r, patch).ironed
            near_orig = tube(patch, path, r).vertex_set
            far_orig = tube(patch, path, 2 * r).vertex_set
            near_iron = tube(patch, ironed, r).vertex_set
            far_iron = tube(patch, ironed, 2 * r).vertex_set
            if not (np.isin(near_iron, far_orig).all()
                    and np.isin(near_orig, far_iron).all()):
                bad += 1
        wall = int(1000 * (time.perf_counter() - t0))
        return [_record(cfg, j, "iron_containment", fam, n_paths - bad,
                        params={"paths": n_paths, "r": r, "t": t,
                                "violations": bad},
                        verdict=bad == 0, wall_ms=wall)]
    return work


def _exp_tubes_demo(cfg: ExperimentConfig) -> list:
    """[tubes] radius, n, k, r, t, ell, attempts; radial tube builder."""
    from .walks import build_radial_tubes, verify_plentiful
    fam = cfg.family()
    radius = cfg.get_int("tubes", "radius")
    n = cfg.get_int("tubes", "n")
    k = cfg.get_int("tubes", "k")
    r = cfg.get_int("tubes", "r")
    t = cfg.get_int("tubes", "t")
    ell = cfg.get_float("tubes", "ell")
    attempts = cfg.get_int("tubes", "attempts", 3)
    patch = patch_for(fam, radius)
    tf, wall = _timed(lambda: build_radial_tubes(
        patch, n, k, r, t, cfg.seed(), attempts))
    return [_record(cfg, 0, "tubes", fam, tf.achieved_k,
                    params={"n": n, "target_k": k, "thickness": r,
                            "walk_t": t, "target_ell": ell,
                            "achieved_ell": tf.achieved_ell},
                    verdict=bool(verify_plentiful(tf, k, r, ell)),
                    wall_ms=wall)]


def _exp_ghost_influence(cfg: ExperimentConfig) -> list:
    """[influence] radius, p, h, hs, target_radius; edge pivotalities
    at intensity h plus a ghost-connection intensity sweep."""
    fam = cfg.family()
    radius = cfg.get_int("influence", "radius")
    p = cfg.get_float("influence", "p")
    h = cfg.get_float("influence", "h")
    tr = cfg.get_int("influence", "target_radius")
    hs = cfg.get_floats("influence", "hs", [h])
    replicas = cfg.replicas(500)
    seed = cfg.seed()
    patch = patch_for(fam, radius)
    v = int(patch.sphere(tr)[0])

    def piv_unit():
        pi, wall = _timed(lambda: est_pivotal_influence(
            fam, radius, p, h, ("point_connection", 0, v),
            replicas=replicas, seed=seed))
        return [_record(cfg, 0, "pivotal_influence", fam, pi.russo, p=p,
                        params={"h": h, "target": v,
                                "max_edge": pi.max_edge,
                                "max_estimate": pi.max_estimate.mean},
                        wall_ms=wall)]

    def ghost_unit():
        t0 = time.perf_counter()
        recs = []
        for hh in hs:
            e = est_ghost_connection(fam, radius, p, [0], patch.sphere(tr),
                                     hh, replicas=replicas, seed=seed + 1)
            recs.append(_record(cfg, 1, "ghost_connection", fam, e, p=p,
                                params={"h": hh, "target_radius": tr},
                                x=hh, y=e.mean))
        recs[-1]["wall_ms"] = int(1000 * (time.perf_counter() - t0))
        return recs

    return _run_units([piv_unit, ghost_unit])


def _exp_snowball_demo(cfg: ExperimentConfig) -> list:
    """[snowball] radius, p1, p2, b, h, span; chained ball estimates
    along a geodesic toward the boundary."""
    fam = cfg.family()
    radius = cfg.get_int("snowball", "radius")
    p1 = cfg.get_float("snowball", "p1")
    p2 = cfg.get_float("snowball", "p2")
    b = cfg.get_int("snowball", "b")
    h = cfg.get_float("snowball", "h")
    span = cfg.get_int("snowball", "span")
    patch = patch_for(fam, radius)
    g = geodesic(patch, 0, int(patch.sphere(span)[0]))
    centers = [int(c) for c in g[::max(1, 2 * b + 1)]]
    if int(g[-1]) not in centers:
        centers.append(int(g[-1]))
    (lhs, rhs), wall = _timed(lambda: snowball_chain(
        fam, radius, p1, p2, centers, b, h,
        replicas=cfg.replicas(600), seed=cfg.seed()))
    return [_record(cfg, 0, "snowball", fam, lhs,
                    params={"p1": p1, "p2": p2, "b": b, "h": h,
                            "centers": centers, "rhs": rhs,
                            "ratio": lhs.extra.get("ratio")},
                    wall_ms=wall)]


def _identity_sweep(seed: int, points: int) -> dict:
    """Max residual of the density calculus identities on random grids."""
    gen = np.random.default_rng(seed)
    ps = gen.uniform(0.05, 0.95, points)
    xs = gen.uniform(0.0, 2.0, points)
    ys = gen.uniform(0.0, 2.0, points)
    qs = np.minimum(ps + gen.uniform(0.001, 0.04, points), 0.99)
    dev = 0.0
    for p, x, y, q in zip(ps, xs, ys, qs):
        dev = max(dev, abs(sprinkle(sprinkle(p, x), y) - sprinkle(p, x + y)))
        dev = max(dev, abs(sprinkle(p, delta(p, q)) - q))
    s = make_schedule(16 + seed % 100, float(ps[0]), float(xs[0]),
                      float(ys[0]) / 4.0, 20)
    base = math.log(math.log(math.log(s.n0)))
    x0 = 1.0 / math.sqrt(math.log(math.log(s.n0)))
    for i in range(21):
        dev = max(dev, abs(s.logloglog_n[i] - (base + i * LOG9)))
        want = x0 + s.K * s.burnin_value if i == 0 else x0 * 3.0 ** (-i)
        dev = max(dev, abs(s.delta[i] - want))
    return {"max_residual": dev, "points": points}


def _exp_multiscale_demo(cfg: ExperimentConfig) -> list:
    """[schedule] n0, p0, K, burnin, i_max; plus optional [fullspace]
    and [hamming] sections, and an identity residual sweep."""
    n0 = cfg.get_int("schedule", "n0")
    p0 = cfg.get_float("schedule", "p0")
    K = cfg.get_float("schedule", "K", 0.0)
    burnin = cfg.get_float("schedule", "burnin", 0.0)
    i_max = cfg.get_int("schedule", "i_max")
    fam = cfg.family()
    s, wall = _timed(lambda: make_schedule(n0, p0, K, burnin, i_max))
    recs = [_record(cfg, 0, "schedule_rung", fam, float(s.p[i]),
                    params={"i": i, "delta": float(s.delta[i])},
                    x=i, y=float(s.p[i]))
            for i in range(i_max + 1)]
    pinf = p_infinity(s)
    recs.append(_record(cfg, 0, "p_infinity", fam, pinf,
                        params={"n0": n0, "p0": p0}, wall_ms=wall))
    sweep = _identity_sweep(cfg.seed(), cfg.get_int("", "points", 200))
    recs.append(_record(cfg, 1, "identity_sweep", fam,
                        sweep["max_residual"], params=sweep,
                        verdict=sweep["max_residual"] <= 1e-12))
    unit = 2
    if "fullspace" in cfg.sections:
        radius = cfg.get_int("fullspace", "radius")
        n = cfg.get_int("fullspace", "n")
        raw = cfg.get("fullspace", "density", "infinity")
        p = min(pinf, 0.999999) if raw == "infinity" else float(raw)
        v, wall = _timed(lambda: eval_full_space(
            fam, radius, n, p, cfg.replicas(300), cfg.seed() + unit))
        recs.append(_record(cfg, unit, "full_space", fam, v.estimate, p=p,
                            params={"n": n, "threshold": v.threshold,
                                    "decisive": v.decisive,
                                    "caveat": v.caveat},
                            verdict=v.holds, wall_ms=wall))
        unit += 1
    if "hamming" in cfg.sections:
        recs.extend(_hamming_unit(cfg, unit, fam))
    return recs


def _hamming_unit(cfg, unit, fam) -> list:
    radius = cfg.get_int("hamming", "radius")
    p = cfg.get_float("hamming", "p")
    q = cfg.get_float("hamming", "q")
    b_sphere = cfg.get_int("hamming", "b_sphere")
    patch = patch_for(fam, radius)
    lookup = {tuple(c): i for i, c in enumerate(patch.coords)}
    A = []
    for tok in cfg.get_list("hamming", "a"):
        coord = tuple(int(t) for t in tok.split(","))
        if coord not in lookup:
            raise ValueError(f"coordinate {coord} not in the patch")
        A.append(lookup[coord])
    rep, wall = _timed(lambda: hamming_bound_check(
        fam, radius, p, q, A, patch.sphere(b_sphere),
        cfg.get_int("hamming", "replicas", cfg.replicas(2000)),
        cfg.seed() + unit))
    return [_record(cfg, unit, "hamming", fam, rep.lhs, p=p,
                    params={"q": q, "rhs": rep.rhs, "theta": rep.theta,
                            "hypothesis_met": rep.hypothesis_met,
                            "gap": rep.sprinkle_gap},
                    verdict=rep.ok, wall_ms=wall)]


def _exp_orange_peel(cfg: ExperimentConfig) -> list:
    """[peel] radius, m, p_start, p_end, D, seeds, n_effective, target;
    per-seed merge traces plus the single-cluster frequency."""
    fam = cfg.family()
    radius = cfg.get_int("peel", "radius")
    m = cfg.get_int("peel", "m")
    p_start = cfg.get_float("peel", "p_start")
    p_end = cfg.get_float("peel", "p_end")
    D = cfg.get_float("peel", "D")
    count = cfg.get_int("peel", "seeds")
    n_eff = cfg.get_int("peel", "n_effective", None)
    target = cfg.get_float("peel", "target", 0.9)
    seed = cfg.seed()

    def unit(j):
        def work():
            tr, wall = _timed(lambda: orange_peel_trace(
                fam, radius, m, p_start, p_end, D, seed + j,
                n_effective=n_eff))
            recs = []
            if j == 0:
                recs = [_record(cfg, j, "peel_trace", fam, int(sz),
                                params={"step": i}, x=i, y=int(sz))
                        for i, sz in enumerate(tr)]
            recs.append(_record(cfg, j, "peel_final", fam, int(tr[-1]),
                                params={"k": tr.k,
                                        "truncated": tr.truncated},
                                x=j, y=int(tr[-1]), wall_ms=wall))
            return recs
        return work

    records = _run_units([unit(j) for j in range(count)])
    finals = [r["estimate"] for r in records if r["op"] == "peel_final"]
    reach = sum(1 for f in finals if f <= 1)
    frac = reach / count
    records.append(_record(
        cfg, count, "peel_summary", fam, frac,
        params={"seeds": count, "reached_single": reach, "target": target},
        verdict=frac >= target))
    return records


EXPERIMENTS = {
    "pc-estimate": ("crossing threshold of one family at one box size",
                    _exp_pc_estimate),
    "locality-sweep": ("thresholds or decay rates across a family sequence",
                       _exp_locality_sweep),
    "two-ghost-scaling": ("two-ghost event probability against cluster size",
                          _exp_two_ghost_scaling),
    "piv-decay": ("annulus two-arm probability against the outer radius",
                  _exp_piv_decay),
    "cerf-check": ("annulus gluing comparison with a CI verdict",
                   _exp_cerf_check),
    "walk-checks": ("exact kernel inequalities and path geometry checks",
                    _exp_walk_checks),
    "tubes-demo": ("disjoint radial tube construction at one scale",
                   _exp_tubes_demo),
    "ghost-influence": ("edge pivotalities and ghost connection sweep",
                        _exp_ghost_influence),
    "snowball-demo": ("chained ball connections along a geodesic",
                      _exp_snowball_demo),
    "multiscale-demo": ("density schedule, identity residuals, zone checks",
                        _exp_multiscale_demo),
    "orange-peel": ("shrinking-shell cluster merge frequencies",
                    _exp_orange_peel),
}


# --- run and report --------------------------------------------------------


def run_config(path, out: Optional[str] = None) -> list:
    """Execute one config file and append its records; returns them."""
    cfg = ExperimentConfig.load(path)
    if cfg.experiment not in EXPERIMENTS:
        known = ", ".join(sorted(EXPERIMENTS))
        raise ValueError(
            f"unknown experiment {cfg.experiment!r} (known: {known})")
    records = EXPERIMENTS[cfg.experiment][1](cfg)
    prefix = out if out is not None else cfg.get(
        "", "out", f"results/{cfg.experiment}")
    writer = ResultWriter(prefix)
    try:
        for rec in records:
            writer.append(rec)
    finally:
        writer.close()
    return records


def _fam_slug(fam_repr: str) -> str:
    out = "".join(c if c.isalnum() else "_" for c in fam_repr)
    while "__" in out:
        out = out.replace("__", "_")
    return out.strip("_")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def write_report(result_dir, out_dir=None) -> Path:
    """Aggregate every jsonl file under result_dir into report.txt plus
    two-column data files, one per (experiment, family, op) series."""
    result_dir = Path(result_dir)
    out_dir = Path(out_dir) if out_dir is not None else result_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for f in sorted(result_dir.glob("*.jsonl")):
        for line in f.read_text().splitlines():
            if line.strip():
                records.append(json.loads(line))
    lines = ["result report", "=============", ""]
    if not records:
        print("warning: no result records found", file=sys.stderr)
        lines.append("no records")
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec["experiment"], rec["family"]), []).append(rec)
    for (exp, fam), recs in sorted(groups.items()):
        lines.append(f"{exp} on {fam}")
        lines.append("-" * len(lines[-1]))
        lines.append(f"records: {len(recs)}  "
                     f"configs: {sorted({r['config'] for r in recs})}")
        series: dict = {}
        for rec in recs:
            if rec.get("x") is not None and rec.get("y") is not None:
                series.setdefault(rec["op"], []).append(rec)
        for op, pts in sorted(series.items()):
            name = f"{exp}_{_fam_slug(fam)}_{op}.dat"
            body = "".join(
                f"{_fmt(r['x'])} {_fmt(r['y'])}\n"
                for r in sorted(pts, key=lambda r: (r["x"], r["unit"])))
            (out_dir / name).write_text(
                f"# {exp} {fam} {op}: x y\n" + body)
            lines.append(f"data file: {name} ({len(pts)} points)")
        for rec in recs:
            if rec["op"] not in series:
                est = rec.get("estimate")
                ci = rec.get("ci")
                tail = f" ci={_fmt(ci)}" if isinstance(ci, float) else ""
                lines.append(f"  {rec['op']}[{rec['unit']}]: "
                             f"{_fmt(est)}{tail}")
        checks = [r for r in recs if r.get("verdict") is not None]
        if checks:
            passed = sum(1 for r in checks if r["verdict"])
            lines.append(f"checks: {passed}/{len(checks)} passed")
            for r in checks:
                if not r["verdict"]:
                    lines.append(f"  FAILED: {r['op']}[{r['unit']}]")
        lines.append("")
    path = out_dir / "report.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


# --- entry point -----------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="perclab",
        description="percolation estimates on finite patches of "
                    "transitive graphs")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None,
                       help="output prefix override (default: the "
                            "config's out key)")
    p_rep = sub.add_parser("report", help="summarize a results directory")
    p_rep.add_argument("dir")
    p_rep.add_argument("--out", default=None,
                       help="write the report elsewhere")
    sub.add_parser("list-experiments", help="name every experiment")
    p_exp = sub.add_parser("export-patch", help="print a patch as text")
    p_exp.add_argument("--family", required=True)
    p_exp.add_argument("--radius", required=True, type=int)
    p_exp.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    if args.command == "list-experiments":
        for name in sorted(EXPERIMENTS):
            print(f"{name:20s} {EXPERIMENTS[name][0]}")
        return 0
    if args.command == "export-patch":
        try:
            patch = build_patch(GraphFamily.parse(args.family), args.radius)
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        text = patch.export_string()
        if args.out is None:
            sys.stdout.write(text)
        else:
            Path(args.out).write_text(text)
        return 0
    if args.command == "report":
        if not Path(args.dir).is_dir():
            print(f"error: {args.dir} is not a directory", file=sys.stderr)
            return 2
        path = write_report(args.dir, args.out)
        print(f"wrote {path}")
        return 0
    try:
        records = run_config(args.config, args.out)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"{len(records)} records")
    return 0


if __name__ == "__main__":
    sys.exit(main())
