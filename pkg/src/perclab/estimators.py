"""Monte Carlo and exact-enumeration estimators with confidence intervals.

Every scalar probe of the laboratory lives here: two-point functions,
the corridor function, pivotal and two-ghost probabilities, sphere
connection, threshold location, burn-in, and the analytic comparison
bounds. Estimators are pure functions of (arguments, seed): replicas are
addressed by (seed, replica) streams, so results are identical no matter
how many workers run them.

Shared-label sweeps do the heavy lifting for threshold location: each
replica's sorted labels price the crossing event at every density in one
union-find pass, and the crossing value (the exact breakpoint label) is
what gets collected.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from statistics import NormalDist
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numba import njit

from . import rng
from .graphs import (BoxPatch, GraphFamily, GraphPatch, build_box,
                     build_patch, distances_from, geodesic, tube)
from .percolation import (_crossing_value, _merge_masked, _resolve,
                          sample_labels)

EXACT_EDGE_CAP = 20


# --- result types ----------------------------------------------------------


class McEstimate:
    """A mean with a 95-ish percent half-width and its provenance."""

    def __init__(self, mean: float, ci_halfwidth: float, replicas: int,
                 seed: int, patch_radius: int, method: str = "monte_carlo",
                 extra: Optional[dict] = None):
        if ci_halfwidth < 0:
            raise ValueError("ci_halfwidth must be nonnegative")
        if method not in ("monte_carlo", "exact_enumeration"):
            raise ValueError(f"unknown method {method!r}")
        if method == "exact_enumeration" and ci_halfwidth != 0.0:
            raise ValueError("exact enumeration must report zero ci")
        if method == "monte_carlo" and replicas < 1:
            raise ValueError("monte_carlo needs replicas >= 1")
        self.mean = float(mean)
        self.ci_halfwidth = float(ci_halfwidth)
        self.replicas = int(replicas)
        self.seed = int(seed)
        self.patch_radius = int(patch_radius)
        self.method = method
        self.extra = extra or {}

    def __repr__(self) -> str:
        return (f"McEstimate({self.mean:.6g} +- {self.ci_halfwidth:.2g}, "
                f"replicas={self.replicas}, method={self.method})")


class PcEstimate:
    """A located threshold with its bisection bracket."""

    def __init__(self, family: GraphFamily, scale: int, criterion: str,
                 p_hat: float, bracket: tuple, replicas: int, seed: int,
                 confidence: float):
        p_lo, p_hi = bracket
        if not p_lo <= p_hat <= p_hi:
            raise ValueError("p_hat must lie inside the bracket")
        self.family = family
        self.scale = int(scale)
        self.criterion = criterion
        self.p_hat = float(p_hat)
        self.bracket = (float(p_lo), float(p_hi))
        self.replicas = int(replicas)
        self.seed = int(seed)
        self.confidence = float(confidence)

    def __repr__(self) -> str:
        lo, hi = self.bracket
        return (f"PcEstimate({self.family}, L={self.scale}, "
                f"{self.criterion}: {self.p_hat:.4f} in [{lo:.4f}, {hi:.4f}], "
                f"replicas={self.replicas})")


def _zscore(confidence: float) -> float:
    return NormalDist().inv_cdf(0.5 + confidence / 2.0)


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple:
    """Wilson score interval for a binomial proportion."""
    z = _zscore(confidence)
    z2 = z * z
    center = (k + z2 / 2.0) / (n + z2)
    half = z / (n + z2) * math.sqrt(k * (n - k) / n + z2 / 4.0)
    return max(0.0, center - half), min(1.0, center + half)


def proportion_estimate(k: int, n: int, seed: int, patch_radius: int,
                        confidence: float = 0.95,
                        extra: Optional[dict] = None) -> McEstimate:
    """McEstimate for a hit count: normal half-width, Wilson near 0/1."""
    mean = k / n
    if k < 8 or n - k < 8:
        lo, hi = wilson_interval(k, n, confidence)
        hw = max(mean - lo, hi - mean)
    else:
        hw = _zscore(confidence) * math.sqrt(mean * (1.0 - mean) / n)
    return McEstimate(mean, hw, n, seed, patch_radius, "monte_carlo", extra)


def to_record(op: str, family, est, p=None, params=None,
              wall_ms=None) -> dict:
    """The JSON-lines result schema shared by all estimators."""
    if isinstance(est, McEstimate):
        body = {"estimate": est.mean, "ci": est.ci_halfwidth,
                "replicas": est.replicas, "seed": est.seed,
                "patch_radius": est.patch_radius}
    elif isinstance(est, PcEstimate):
        body = {"estimate": est.p_hat, "ci": list(est.bracket),
                "replicas": est.replicas, "seed": est.seed,
                "patch_radius": est.scale}
    else:
        body = {"estimate": est, "ci": None, "replicas": None,
                "seed": None, "patch_radius": None}
    return {"op": op, "family": repr(family), "params": params or {},
            "p": p, **body, "wall_ms": wall_ms}


# --- shared plumbing -------------------------------------------------------


@lru_cache(maxsize=64)
def _patch(family_str: str, radius: int) -> GraphPatch:
    return build_patch(GraphFamily.parse(family_str), radius)


@lru_cache(maxsize=16)
def _box(family_str: str, L: int) -> BoxPatch:
    return build_box(GraphFamily.parse(family_str), L)


def patch_for(family: GraphFamily, radius: int) -> GraphPatch:
    return _patch(repr(family), radius)


def _thread_count() -> int:
    raw = os.environ.get("PERCLAB_THREADS", "").strip()
    if raw:
        return max(1, int(raw))
    return 1


def _replica_fill(out: np.ndarray, start: int, fn) -> None:
    """out[i] = fn(i) for i in [start, len(out)), optionally threaded.

    Replica i's result depends only on i, so the fill is deterministic
    under any thread count.
    """
    stop = len(out)
    workers = _thread_count()
    if workers <= 1 or stop - start < 64:
        for i in range(start, stop):
            out[i] = fn(i)
        return

    def run(chunk):
        for i in chunk:
            out[i] = fn(i)

    chunks = np.array_split(np.arange(start, stop), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, [c for c in chunks if len(c)]))


def _components_for(patch: GraphPatch, labels: np.ndarray, p: float,
                    level: Optional[int] = None,
                    region_mask: Optional[np.ndarray] = None) -> np.ndarray:
    take = labels <= p
    if level is not None:
        take = take & (patch.edge_levels() <= level)
    if region_mask is not None:
        take = take & region_mask[patch.edges[:, 0]] & region_mask[patch.edges[:, 1]]
    parent = np.arange(patch.n_vertices, dtype=np.int64)
    rank = np.zeros(patch.n_vertices, dtype=np.int8)
    _merge_masked(parent, rank, patch.edges[:, 0], patch.edges[:, 1], take)
    return _resolve(parent)


def _exact_event_probability(patch: GraphPatch, p: float,
                             edge_subset: np.ndarray, predicate) -> float:
    """Sum of binomial weights over all configurations of a small edge set.

    predicate receives the full open mask (edges outside the subset stay
    closed) and must depend only on the subset.
    """
    k = len(edge_subset)
    if k > EXACT_EDGE_CAP:
        raise ValueError(
            f"exact enumeration capped at {EXACT_EDGE_CAP} edges, got {k}")
    total = 0.0
    mask = np.zeros(patch.n_edges, dtype=bool)
    for bits in range(1 << k):
        mask[edge_subset] = False
        count = 0
        for j in range(k):
            if bits >> j & 1:
                mask[edge_subset[j]] = True
                count += 1
        if predicate(mask):
            total += p ** count * (1.0 - p) ** (k - count)
    return total


# --- two-point -------------------------------------------------------------


def est_two_point(family: GraphFamily, radius: int, p: float,
                  u, v, region: Optional[Sequence[int]] = None,
                  replicas: int = 1000, seed: int = 0,
                  method: str = "monte_carlo") -> McEstimate:
    """P_p(u joined to v), or the minimum over a pair grid for sets.

    Sets share labels within each replica, so the minimum is taken over
    coupled estimates. With a region, connecting paths must stay inside
    it. Exact enumeration is available when the region holds at most 20
    edges.
    """
    patch = patch_for(family, radius)
    A = np.atleast_1d(np.asarray(u, dtype=np.int64))
    B = np.atleast_1d(np.asarray(v, dtype=np.int64))
    if A.size == 0 or B.size == 0:
        raise ValueError("u and v must be nonempty")
    region_mask = None
    if region is not None:
        region_mask = np.zeros(patch.n_vertices, dtype=bool)
        region_mask[np.asarray(region, dtype=np.int64)] = True
        if not (region_mask[A].all() and region_mask[B].all()):
            raise ValueError("u and v must lie inside the region")

    if method == "exact_enumeration":
        if region_mask is None:
            sub = np.arange(patch.n_edges)
        else:
            sub = np.flatnonzero(region_mask[patch.edges[:, 0]]
                                 & region_mask[patch.edges[:, 1]])

        def prob_pair(a, b):
            def pred(mask):
                comp = _components_for(patch, np.where(mask, 0.0, 1.0), 0.5,
                                       region_mask=region_mask)
                return comp[a] == comp[b]
            return _exact_event_probability(patch, p, sub, pred)

        best = min(prob_pair(int(a), int(b)) for a in A for b in B)
        return McEstimate(best, 0.0, 1, seed, radius, "exact_enumeration")

    counts = np.zeros((A.size, B.size), dtype=np.int64)
    for r in range(replicas):
        lab = sample_labels(patch, seed, r)
        comp = _components_for(patch, lab.labels, p, region_mask=region_mask)
        counts += comp[A][:, None] == comp[B][None, :]
    flat = int(np.argmin(counts))
    k = int(counts.ravel()[flat])
    ai, bi = divmod(flat, B.size)
    return proportion_estimate(
        k, replicas, seed, radius,
        extra={"pair": (int(A[ai]), int(B[bi]))})


def path_counting_bound(p: float, d: int, dist: int) -> float:
    """Analytic ceiling for a two-point function at low density.

    (d/(d-1)) * 1/(1 - p(d-1)) * (p(d-1))^dist, valid for p < 1/(d-1);
    d is the vertex degree.
    """
    if d < 2:
        raise ValueError("degree must be >= 2")
    if not 0.0 <= p < 1.0 / (d - 1):
        raise ValueError(f"need p < 1/(d-1) = {1.0 / (d - 1):.4f}, got {p}")
    x = p * (d - 1)
    return (d / (d - 1)) * (x ** dist) / (1.0 - x)


# --- corridor --------------------------------------------------------------


def _geodesic_within(patch: GraphPatch, start: int, mask: np.ndarray,
                     target: Optional[int] = None):
    """BFS inside a vertex mask; returns (dist, parent) arrays."""
    indptr, nbr_v, _ = patch.csr()
    dist = np.full(patch.n_vertices, -1, dtype=np.int64)
    parent = np.full(patch.n_vertices, -1, dtype=np.int64)
    dist[start] = 0
    frontier = [start]
    while frontier:
        nxt = []
        for x in frontier:
            for w in nbr_v[indptr[x]:indptr[x + 1]]:
                w = int(w)
                if mask[w] and dist[w] < 0:
                    dist[w] = dist[x] + 1
                    parent[w] = x
                    nxt.append(w)
        if target is not None and dist[target] >= 0:
            break
        frontier = nxt
    return dist, parent


def _walk_back(parent: np.ndarray, end: int) -> list:
    path = [end]
    while parent[path[-1]] >= 0:
        path.append(int(parent[path[-1]]))
    return path[::-1]


def adversarial_paths(patch: GraphPatch, m: int) -> list:
    """The default corridor stress family: straight, bent, and hugging.

    Straight geodesics head for three directions of S_m; the L-shaped
    path walks halfway out and then sideways, bending back toward the
    root; the boundary-hugging path creeps along the two outermost
    shells of B_m. All paths have length at most m.
    """
    paths = []
    sm = patch.sphere(m)
    for idx in sorted({0, len(sm) // 2, len(sm) - 1}):
        paths.append(geodesic(patch, 0, int(sm[idx])))
    if m >= 2:
        half = m // 2
        u = int(patch.sphere(half)[0])
        du = distances_from(patch, u)
        cands = np.flatnonzero(du == m - half)
        if cands.size:
            w = int(cands[np.argmin(patch.dist[cands])])
            bent = np.concatenate([geodesic(patch, 0, u),
                                   geodesic(patch, u, w)[1:]])
            paths.append(bent)
        shell = (patch.dist >= m - 1) & (patch.dist <= m)
        u0 = int(sm[0])
        dist, parent = _geodesic_within(patch, u0, shell)
        reach = np.flatnonzero(dist > 0)
        if reach.size:
            far = int(reach[np.argmax(dist[reach])])
            hug = _walk_back(parent, far)
            paths.append(np.asarray(hug[:m + 1], dtype=np.int64))
    return paths


def est_corridor(family: GraphFamily, p: float, m: int,
                 n: Union[int, float] = math.inf,
                 path_sampler: Optional[Callable] = None,
                 replicas: int = 1000, seed: int = 0,
                 method: str = "monte_carlo") -> McEstimate:
    """Worst connection probability over a family of test paths.

    For each test path of length at most m, estimates the probability
    that its endpoints join inside the thickness-n tube around it
    (n = infinity drops the tube restriction), and returns the minimum.
    The true corridor value is an infimum over all paths, so this is an
    upper bound for it; the estimate records which path attained the
    minimum.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    finite = math.isfinite(n)
    if finite and n < 0:
        raise ValueError("tube thickness must be nonnegative")
    radius = m + (int(n) + 1 if finite else max(2, m // 2 + 1))
    patch = patch_for(family, radius)
    if m == 0:
        return McEstimate(1.0, 0.0, 1, seed, radius, "exact_enumeration")
    paths = (path_sampler(patch, m) if path_sampler is not None
             else adversarial_paths(patch, m))
    paths = [np.asarray(pp, dtype=np.int64) for pp in paths]
    if not paths:
        raise ValueError("path sampler produced no paths")
    for pp in paths:
        if len(pp) - 1 > m:
            raise ValueError(f"path of length {len(pp) - 1} exceeds m={m}")

    regions = []
    for pp in paths:
        if finite:
            mask = np.zeros(patch.n_vertices, dtype=bool)
            mask[tube(patch, pp, int(n)).vertex_set] = True
            regions.append(mask)
        else:
            regions.append(None)

    if method == "exact_enumeration":
        best, best_path = None, None
        for pp, mask in zip(paths, regions):
            if mask is None:
                sub = np.arange(patch.n_edges)
            else:
                sub = np.flatnonzero(mask[patch.edges[:, 0]]
                                     & mask[patch.edges[:, 1]])
            a, b = int(pp[0]), int(pp[-1])

            def pred(open_mask, _a=a, _b=b, _mask=mask):
                comp = _components_for(patch, np.where(open_mask, 0.0, 1.0),
                                       0.5, region_mask=_mask)
                return comp[_a] == comp[_b]

            val = _exact_event_probability(patch, p, sub, pred)
            if best is None or val < best:
                best, best_path = val, pp
        return McEstimate(best, 0.0, 1, seed, radius, "exact_enumeration",
                          extra={"path": [int(x) for x in best_path],
                                 "upper_bound_of_infimum": True})

    counts = np.zeros(len(paths), dtype=np.int64)
    for r in range(replicas):
        lab = sample_labels(patch, seed, r)
        for j, (pp, mask) in enumerate(zip(paths, regions)):
            comp = _components_for(patch, lab.labels, p, region_mask=mask)
            counts[j] += comp[pp[0]] == comp[pp[-1]]
    j = int(np.argmin(counts))
    est = proportion_estimate(int(counts[j]), replicas, seed, radius)
    est.extra = {"path": [int(x) for x in paths[j]],
                 "upper_bound_of_infimum": True,
                 "paths_tested": len(paths)}
    return est


# --- pivotal annulus events ------------------------------------------------


def _piv_indicator(patch: GraphPatch, labels: np.ndarray, p: float,
                   m: int, n: int) -> bool:
    comp = _components_for(patch, labels, p, level=n)
    on_sm = np.unique(comp[patch.sphere(m)])
    on_sn = np.unique(comp[patch.sphere(n)])
    return np.intersect1d(on_sm, on_sn, assume_unique=True).size >= 2


def est_piv(family: GraphFamily, radius: int, p: float, m: int, n: int,
            replicas: int = 1000, seed: int = 0,
            ceiling_C: Optional[float] = None,
            ceiling_eps: float = 0.0,
            method: str = "monte_carlo") -> McEstimate:
    """P_p(two distinct clusters of B_n each touch S_m and S_n).

    With ceiling_C given, the analytic comparison value
    C * (log Gr(n) / n)^(1/2 - eps) rides along in the extras.
    """
    if not 1 <= m <= n <= radius:
        raise ValueError("need 1 <= m <= n <= radius")
    patch = patch_for(family, radius)
    extra = {}
    if ceiling_C is not None:
        gr = patch.ball_size(n)
        extra["ceiling"] = ceiling_C * (math.log(gr) / n) ** (0.5 - ceiling_eps)

    if method == "exact_enumeration":
        sub = np.flatnonzero(patch.edge_levels() <= n)

        def pred(mask):
            return _piv_indicator(patch, np.where(mask, 0.0, 1.0), 0.5, m, n)

        val = _exact_event_probability(patch, p, sub, pred)
        return McEstimate(val, 0.0, 1, seed, radius, "exact_enumeration", extra)

    k = 0
    for r in range(replicas):
        lab = sample_labels(patch, seed, r)
        k += _piv_indicator(patch, lab.labels, p, m, n)
    return proportion_estimate(k, replicas, seed, radius, extra=extra)


# --- two-ghost -------------------------------------------------------------


@njit(cache=True)
def _two_ghost_stat(eu, ev, lab, p, eidx, is_bnd, V):
    """(closed, distinct, size_u, size_v, touches_u, touches_v) at one edge."""
    parent = np.arange(V)
    rank = np.zeros(V, dtype=np.int8)
    for i in range(eu.shape[0]):
        if lab[i] > p:
            continue
        ru = eu[i]
        while parent[ru] != ru:
            ru = parent[ru]
        rv = ev[i]
        while parent[rv] != rv:
            rv = parent[rv]
        if ru == rv:
            continue
        if rank[ru] < rank[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        if rank[ru] == rank[rv]:
            rank[ru] += 1
    size = np.zeros(V, dtype=np.int64)
    touch = np.zeros(V, dtype=np.bool_)
    for v in range(V):
        r = v
        while parent[r] != r:
            r = parent[r]
        parent[v] = r
        size[r] += 1
        if is_bnd[v]:
            touch[r] = True
    u0 = parent[eu[eidx]]
    v0 = parent[ev[eidx]]
    return (lab[eidx] > p, u0 != v0, size[u0], size[v0],
            touch[u0], touch[v0])


def root_edge(patch: GraphPatch) -> int:
    """The canonical probe edge: the root's first incident edge."""
    indptr, _, nbr_e = patch.csr()
    if indptr[1] == indptr[0]:
        raise ValueError("root has no incident edge")
    return int(nbr_e[indptr[0]])


def _two_ghost_counts(patch: GraphPatch, p: float, ns: Sequence[int],
                      replicas: int, seed: int) -> np.ndarray:
    edge = root_edge(patch)
    is_bnd = np.zeros(patch.n_vertices, dtype=np.bool_)
    is_bnd[patch.boundary] = True
    eu = patch.edges[:, 0]
    ev = patch.edges[:, 1]
    ns = np.asarray(ns, dtype=np.int64)
    rows = np.zeros((replicas, len(ns)), dtype=np.bool_)

    def one(r):
        lab = rng.uniforms(seed, r, patch.n_edges)
        closed, distinct, su, sv, tu, tv = _two_ghost_stat(
            eu, ev, lab, p, edge, is_bnd, patch.n_vertices)
        if closed and distinct and not (tu and tv):
            lo = min(su, sv)
            return ns <= lo
        return np.zeros(len(ns), dtype=np.bool_)

    _replica_fill(rows, 0, one)
    return rows.sum(axis=0)


def est_two_ghost(family: GraphFamily, radius: int, p: float, n: int,
                  replicas: int = 10000, seed: int = 0) -> McEstimate:
    """P_p of the two-sided large-cluster event at the root edge.

    The probe edge is the root's first incident edge; by transitivity
    any edge would do.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    patch = patch_for(family, radius)
    k = int(_two_ghost_counts(patch, p, [n], replicas, seed)[0])
    return proportion_estimate(k, replicas, seed, radius,
                               extra={"edge": root_edge(patch), "n": n})


def two_ghost_slope(family: GraphFamily, radius: int, p: float,
                    ns: Sequence[int], replicas: int = 10 ** 5,
                    seed: int = 0):
    """Fit log P(event) against log n over a shared-label sweep.

    Returns (estimates, slope). The theorem's ceiling scales like
    n^(-1/2), so healthy data slopes at -1/2 or steeper.
    """
    patch = patch_for(family, radius)
    counts = _two_ghost_counts(patch, p, ns, replicas, seed)
    ests = [proportion_estimate(int(k), replicas, seed, radius,
                                extra={"n": int(n)})
            for n, k in zip(ns, counts)]
    if any(k == 0 for k in counts):
        return ests, math.nan
    xs = np.log(np.asarray(ns, dtype=float))
    ys = np.log(counts / replicas)
    slope = float(np.polyfit(xs, ys, 1)[0])
    return ests, slope


# --- sphere connection and threshold ---------------------------------------


def _connection_values(connectable, marks: np.ndarray, replicas: int,
                       seed: int, start: int = 0,
                       out: Optional[np.ndarray] = None) -> np.ndarray:
    """Per replica, the exact label at which side 1 first meets side 2."""
    eu = np.ascontiguousarray(connectable.edges[:, 0])
    ev = np.ascontiguousarray(connectable.edges[:, 1])
    V = connectable.n_vertices
    E = connectable.n_edges
    if out is None:
        out = np.empty(replicas, dtype=np.float64)

    def one(r):
        lab = rng.uniforms(seed, r, E)
        order = np.argsort(lab, kind="stable")
        return _crossing_value(order, lab, eu, ev, marks, V)

    _replica_fill(out, start, one)
    return out


def est_sphere_connection(family: GraphFamily, radius: int, p: float, r: int,
                          replicas: int = 2000, seed: int = 0) -> McEstimate:
    """P_p(root joined to the sphere S_r), on a patch of radius >= r."""
    if not 0 <= r <= radius:
        raise ValueError("need 0 <= r <= radius")
    patch = patch_for(family, radius)
    if r == 0:
        return McEstimate(1.0, 0.0, 1, seed, radius, "exact_enumeration")
    marks = np.zeros(patch.n_vertices, dtype=np.int8)
    marks[0] = 1
    marks[patch.sphere(r)] = 2
    values = _connection_values(patch, marks, replicas, seed)
    k = int(np.count_nonzero(values <= p))
    return proportion_estimate(k, replicas, seed, radius)


def _resolve_criterion(family: GraphFamily, criterion):
    if criterion is None:
        criterion = ("box_crossing" if family.is_planar_embeddable
                     else "root_to_sphere")
    if isinstance(criterion, tuple):
        name, theta = criterion
    elif isinstance(criterion, str) and ":" in criterion:
        name, _, theta = criterion.partition(":")
        theta = float(theta)
    else:
        name, theta = criterion, None
    if name == "box_crossing":
        if not family.is_planar_embeddable:
            raise ValueError(f"box_crossing needs a planar family, not {family}")
        return name, (0.5 if theta is None else theta)
    if name == "root_to_sphere":
        return name, (0.05 if theta is None else theta)
    raise ValueError(f"unknown criterion {criterion!r}")


def est_pc(family: GraphFamily, L: int, criterion=None,
           tolerance: float = 0.005, confidence: float = 0.95,
           seed: int = 0, replicas: int = 20000,
           cap: int = 10 ** 6) -> PcEstimate:
    """Locate the finite-size threshold of a crossing criterion.

    Each replica is one shared-label sweep, whose sorted pass yields the
    exact density at which the criterion's event switches on. Bisection
    then walks the empirical distribution of these crossing values: a
    probe density is resolved when the Wilson interval of the empirical
    crossing frequency separates from the criterion threshold, and more
    replicas are drawn (doubling, up to the cap) when it straddles.
    p_hat is the threshold quantile of the crossing values; the bracket
    endpoints carry the stated confidence.
    """
    name, theta = _resolve_criterion(family, criterion)
    if name == "box_crossing":
        box = _box(repr(family), L)
        marks = np.zeros(box.n_vertices, dtype=np.int8)
        marks[box.left] = 1
        marks[box.right] = 2
        host = box
    else:
        patch = patch_for(family, L)
        marks = np.zeros(patch.n_vertices, dtype=np.int8)
        marks[0] = 1
        marks[patch.sphere(L)] = 2
        host = patch

    values = _connection_values(host, marks, replicas, seed)

    def decide(x):
        k = int(np.count_nonzero(values <= x))
        wlo, whi = wilson_interval(k, len(values), confidence)
        if whi < theta:
            return -1
        if wlo > theta:
            return 1
        return 0

    lo, hi = 0.0, 1.0
    while hi - lo > tolerance:
        width = hi - lo
        mid = lo + 0.5 * width
        side = decide(mid)
        if side < 0:
            lo = mid
            continue
        if side > 0:
            hi = mid
            continue
        # The mid probe straddles the threshold (it always will once the
        # bracket closes in on the true value), so try flanking probes at
        # an offset set by the bracket width alone. Runs that differ only
        # in tolerance therefore probe the same sequence of points, and
        # their brackets nest.
        a, b = mid - width / 8.0, mid + width / 8.0
        moved = False
        da, db = decide(a), decide(b)
        if da < 0:
            lo, moved = a, True
        elif da > 0:
            hi, moved = a, True
        if db > 0:
            hi, moved = min(hi, b), True
        elif db < 0:
            lo, moved = max(lo, b), True
        if moved:
            continue
        if len(values) >= cap:
            break
        grow = min(len(values), cap - len(values))
        bigger = np.empty(len(values) + grow)
        bigger[:len(values)] = values
        values = _connection_values(host, marks, len(bigger), seed,
                                    start=len(values), out=bigger)
    p_hat = float(np.clip(np.quantile(values, theta), lo, hi))
    return PcEstimate(family, L, f"{name}:{theta}", p_hat, (lo, hi),
                      len(values), seed, confidence)


# --- burn-in ---------------------------------------------------------------


def burnin_b(family: GraphFamily, radius: int, m: int, p: float,
             replicas: int = 400, seed: int = 0) -> int:
    """Largest b in [1, m^(1/3)/8] with a certifiably small Piv[4b, m^(1/3)].

    The threshold is (log m)^(-1), compared against the upper confidence
    bound of the estimated probability, which keeps the result an
    underestimate of the true largest b and hence the burn-in an
    overestimate. Returns 0 when the candidate range is empty.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    outer = int(round(m ** (1.0 / 3.0), 9))
    if outer > radius:
        raise ValueError("need m^(1/3) <= radius")
    b_max = outer // 8
    if b_max < 1:
        return 0
    ubs = _piv_upper_bounds(repr(family), outer, p, b_max, replicas, seed)
    thresh = 1.0 / math.log(m)
    best = 0
    for b in range(1, b_max + 1):
        if ubs[b - 1] <= thresh:
            best = b
    return best


@lru_cache(maxsize=256)
def _piv_upper_bounds(family_str: str, outer: int, p: float, b_max: int,
                      replicas: int, seed: int) -> tuple:
    """Upper Wilson bounds of P(Piv[4b, outer]) for b = 1..b_max.

    One shared-label pass per replica evaluates every b at once.
    """
    patch = _patch(family_str, outer)
    counts = np.zeros(b_max, dtype=np.int64)
    for r in range(replicas):
        lab = sample_labels(patch, seed, r)
        comp = _components_for(patch, lab.labels, p, level=outer)
        on_outer = np.unique(comp[patch.sphere(outer)])
        for b in range(1, b_max + 1):
            on_inner = np.unique(comp[patch.sphere(4 * b)])
            if np.intersect1d(on_inner, on_outer, assume_unique=True).size >= 2:
                counts[b - 1] += 1
    return tuple(wilson_interval(int(k), replicas)[1] for k in counts)


def _growth_counts(family: GraphFamily, n_max: int) -> np.ndarray:
    """Gr(0..n_max) without materializing a patch.

    Product families get the exact generating-function count; trees the
    closed form; everything else a frontier-only breadth first search
    (two frontiers suffice, since neighbours of S_r live in S_{r-1},
    S_r, or S_{r+1}).
    """
    kind = family.kind
    if kind in ("HyperCubic", "Slab", "Cylinder"):
        if kind == "HyperCubic":
            free, cyc, mmod = family.params[0], 0, 1
        elif kind == "Slab":
            d, k, mmod = family.params
            free, cyc = d - k, k
        else:
            free, cyc, mmod = 1, 1, family.params[0]
        # distance generating polynomial per factor, truncated at n_max
        line = np.zeros(n_max + 1)
        line[0] = 1.0
        line[1:] = 2.0
        poly = np.zeros(n_max + 1)
        poly[0] = 1.0
        for _ in range(free):
            poly = np.convolve(poly, line)[:n_max + 1]
        if cyc:
            ring = np.zeros(n_max + 1)
            for c in range(mmod):
                dd = min(c, mmod - c)
                if dd <= n_max:
                    ring[dd] += 1.0
            for _ in range(cyc):
                poly = np.convolve(poly, ring)[:n_max + 1]
        return np.cumsum(poly).astype(np.int64)
    if kind == "RegularTree":
        b = family.params[0]
        out = [1]
        sphere = b
        for _ in range(n_max):
            out.append(out[-1] + sphere)
            sphere *= b - 1
        return np.asarray(out, dtype=np.int64)
    # generic: frontier BFS keeping two shells only
    prev, cur = set(), {family.root}
    out = [1]
    for _ in range(n_max):
        nxt = set()
        for c in cur:
            for nb in family.neighbors(c):
                if nb not in cur and nb not in prev:
                    nxt.add(nb)
        out.append(out[-1] + len(nxt))
        prev, cur = cur, nxt
    return np.asarray(out, dtype=np.int64)


def burnin_total(family: GraphFamily, radius: int, n: int, p: float,
                 D: float = 20.0, replicas: int = 400,
                 seed: int = 0) -> float:
    """The burn-in value at scale n: a max over low-growth scales.

    For each m in the low-growth window [(log n)^(1/2), n], takes
    (log log m / min(log m, log Gr(b(m))))^(1/4) with b(m) the burn-in
    radius; 0 when the window is empty, infinity when some b(m) <= 1.
    Growth counts are exact and patch-free; `radius` caps the patches
    used for the Piv estimates inside b(m) and must cover n^(1/3).
    """
    if n < 16:
        raise ValueError("n must be >= 16")
    if int(round(n ** (1.0 / 3.0), 9)) > radius:
        raise ValueError("need n^(1/3) <= radius for the Piv patches")
    gr = _growth_counts(family, n)
    logs = np.log(gr.astype(float))
    js = np.arange(n + 1)
    ok = np.ones(n + 1, dtype=bool)
    ok[2:] = logs[2:] <= np.log(js[2:]) ** D
    # last_bad[m] = largest j <= m failing the growth test (-1 if none)
    last_bad = np.maximum.accumulate(np.where(ok, -1, js))
    lo_m = math.ceil(math.sqrt(math.log(n)) - 1e-9)
    window = []
    for m in range(max(2, lo_m), n + 1):
        lo = math.ceil(m ** (1.0 / 3.0) - 1e-9)
        if last_bad[m] < lo:
            window.append(m)
    if not window:
        return 0.0
    best = 0.0
    for m in window:
        outer = int(round(m ** (1.0 / 3.0), 9))
        b = burnin_b(family, outer, m, p, replicas, seed)
        if b <= 1:
            return math.inf
        denom = min(math.log(m), float(logs[b]))
        best = max(best, (math.log(math.log(m)) / denom) ** 0.25)
    return best


# --- Cerf-style annulus comparison ----------------------------------------


class CerfReport:
    """Both sides of the annulus comparison, with the CI verdict."""

    def __init__(self, lhs: McEstimate, rhs: float, rhs_interval: tuple,
                 parts: dict):
        self.lhs = lhs
        self.rhs = float(rhs)
        self.rhs_interval = rhs_interval
        self.parts = parts

    @property
    def holds_within_ci(self) -> bool:
        lhs_lo = self.lhs.mean - self.lhs.ci_halfwidth
        return lhs_lo <= self.rhs_interval[1]

    def __repr__(self) -> str:
        return (f"CerfReport(lhs={self.lhs.mean:.4g}, rhs={self.rhs:.4g}, "
                f"holds={self.holds_within_ci})")


def cerf_check(family: GraphFamily, radius: int, p: float, r: int, m: int,
               n: int, replicas: int = 2000, seed: int = 0) -> CerfReport:
    """Compare P(Piv[r, n]) against its coarse-graining ceiling.

    rhs = P(Piv[1, n/2]) * |S_r|^2 * Gr(m) / min pair connection in B_m
    over S_r. All estimates run on the same replicas of shared labels.
    """
    if not (1 < r <= m <= n // 2):
        raise ValueError("need 1 < r <= m <= n/2")
    if n > radius:
        raise ValueError("need n <= radius")
    patch = patch_for(family, radius)
    sr = patch.sphere(r)
    pairs = [(int(a), int(b)) for i, a in enumerate(sr) for b in sr[i + 1:]]
    k_lhs = 0
    k_half = 0
    pair_counts = np.zeros(len(pairs), dtype=np.int64)
    for rep in range(replicas):
        lab = sample_labels(patch, seed, rep)
        k_lhs += _piv_indicator(patch, lab.labels, p, r, n)
        k_half += _piv_indicator(patch, lab.labels, p, 1, n // 2)
        comp_m = _components_for(patch, lab.labels, p, level=m)
        for j, (a, b) in enumerate(pairs):
            pair_counts[j] += comp_m[a] == comp_m[b]
    lhs = proportion_estimate(k_lhs, replicas, seed, radius)
    piv_half = proportion_estimate(k_half, replicas, seed, radius)
    j = int(np.argmin(pair_counts))
    two_pt = proportion_estimate(int(pair_counts[j]), replicas, seed, radius)
    geom = len(sr) ** 2 * patch.ball_size(m)
    if two_pt.mean == 0.0:
        rhs = math.inf
        rhs_iv = (math.inf, math.inf)
    else:
        rhs = piv_half.mean * geom / two_pt.mean
        tp_hi = min(1.0, two_pt.mean + two_pt.ci_halfwidth)
        tp_lo = max(two_pt.mean - two_pt.ci_halfwidth, 1e-300)
        rhs_iv = (max(0.0, piv_half.mean - piv_half.ci_halfwidth) * geom / tp_hi,
                  (piv_half.mean + piv_half.ci_halfwidth) * geom / tp_lo)
    return CerfReport(lhs, rhs, rhs_iv,
                      {"piv_inner_1": piv_half, "two_point_min": two_pt,
                       "sphere_size": len(sr), "ball_m": patch.ball_size(m)})
