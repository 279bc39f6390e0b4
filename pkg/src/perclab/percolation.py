"""Coupled Bernoulli bond percolation on patches.

One uniform label per edge drives every density at once: the open set at
density p is {e : label(e) <= p}, so configurations at different p are
monotonically coupled and a single sorted pass prices a whole sweep of
densities. All cluster work runs through a union-find forest with
path compression, compiled with numba.

Density bookkeeping uses the sprinkling scale: sprinkling rate lambda
maps p to 1 - (1-p)^(exp(lambda)), which composes additively in lambda.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import rng
from .graphs import GraphPatch

GENERATOR_ID = "philox-edge-v1"


# --- sprinkling calculus ---------------------------------------------------


def sprinkle(p: float, lam: float) -> float:
    """Density after sprinkling at rate lam on top of density p.

    sprinkle(p, lam) = 1 - (1-p)^(exp(lam)). Additive in lam:
    sprinkle(sprinkle(p, a), b) == sprinkle(p, a + b), and lam = 0 is
    the identity. Negative rates undo positive ones.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return -math.expm1(math.exp(lam) * math.log1p(-p))


def delta(p: float, q: float) -> float:
    """The sprinkling rate separating two densities.

    Returns the lam >= 0 with sprinkle(min(p,q), lam) = max(p,q).
    """
    for x in (p, q):
        if not 0.0 < x < 1.0:
            raise ValueError(f"densities must lie in (0, 1), got {x}")
    lo, hi = min(p, q), max(p, q)
    return math.log(math.log1p(-hi) / math.log1p(-lo))


# --- labels and configurations ---------------------------------------------


class EdgeLabels:
    """Uniform [0,1) labels on the edges of a patch.

    The labels are a pure function of (seed, replica, edge indexing):
    they come from a counter-based stream, so any worker can regenerate
    any replica bit for bit.
    """

    def __init__(self, patch: GraphPatch, labels: np.ndarray,
                 seed: int, replica: int):
        self.patch = patch
        self.labels = labels
        self.seed = int(seed)
        self.replica = int(replica)
        self.generator_id = GENERATOR_ID
        self._order = None

    @property
    def n_edges(self) -> int:
        return self.labels.shape[0]

    def order(self) -> np.ndarray:
        """Edge indices sorted by label; cached, stable sort."""
        if self._order is None:
            self._order = np.argsort(self.labels, kind="stable")
        return self._order

    def __repr__(self) -> str:
        return (f"EdgeLabels({self.patch.family}, radius={self.patch.radius}, "
                f"seed={self.seed}, replica={self.replica})")


def sample_labels(patch: GraphPatch, seed: int, replica: int = 0) -> EdgeLabels:
    """Draw the edge labels for one (seed, replica) cell."""
    u = rng.uniforms(seed, replica, patch.n_edges, rng.EDGE_STREAM)
    return EdgeLabels(patch, u, seed, replica)


class Configuration:
    """The open set at a single density, with provenance."""

    def __init__(self, labels: EdgeLabels, p: float):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {p}")
        self.labels = labels
        self.p = float(p)
        self.open_mask = labels.labels <= p

    @property
    def open_edges(self) -> np.ndarray:
        return np.flatnonzero(self.open_mask).astype(np.int64)

    def dump(self, fp) -> None:
        """Line format for replaying a configuration elsewhere.

        Header carries the stream address and density, then the sorted
        open-edge indices, one per line.
        """
        own = isinstance(fp, str)
        f = open(fp, "w") if own else fp
        try:
            lab = self.labels
            f.write("perclab-config 1\n")
            f.write(f"patch {lab.patch.family!r}/{lab.patch.radius}\n")
            f.write(f"generator {lab.generator_id}\n")
            f.write(f"seed {lab.seed}\n")
            f.write(f"replica {lab.replica}\n")
            f.write(f"p {self.p!r}\n")
            open_edges = self.open_edges
            f.write(f"open {len(open_edges)}\n")
            for e in open_edges:
                f.write(f"{int(e)}\n")
        finally:
            if own:
                f.close()

    @staticmethod
    def load(fp):
        """Parse a dump into (header dict, open edge index array)."""
        own = isinstance(fp, str)
        f = open(fp, "r") if own else fp
        try:
            if f.readline().strip() != "perclab-config 1":
                raise ValueError("not a configuration dump")
            header = {}
            for _ in range(6):
                key, _, val = f.readline().strip().partition(" ")
                header[key] = val
            count = int(header.pop("open"))
            edges = np.asarray([int(f.readline()) for _ in range(count)],
                               dtype=np.int64)
            return header, edges
        finally:
            if own:
                f.close()


def configuration(labels: EdgeLabels, p: float) -> Configuration:
    return Configuration(labels, p)


# --- union-find kernels ----------------------------------------------------


@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def _merge_masked(parent, rank, eu, ev, take):
    for i in range(eu.shape[0]):
        if not take[i]:
            continue
        ru = _find(parent, eu[i])
        rv = _find(parent, ev[i])
        if ru == rv:
            continue
        if rank[ru] < rank[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        if rank[ru] == rank[rv]:
            rank[ru] += 1


@njit(cache=True)
def _resolve(parent):
    comp = np.empty_like(parent)
    for v in range(parent.shape[0]):
        comp[v] = _find(parent, v)
    return comp


@njit(cache=True)
def _crossing_value(order, lab, eu, ev, mark, V):
    """First label at which a mark-1 vertex joins a mark-2 vertex.

    Edges are visited in increasing label order; the returned value is
    the exact breakpoint of the crossing event under the coupling.
    Returns 2.0 when the sides never meet.
    """
    parent = np.arange(V)
    rank = np.zeros(V, dtype=np.int8)
    flag = mark.copy()
    for i in range(order.shape[0]):
        e = order[i]
        ru = _find(parent, eu[e])
        rv = _find(parent, ev[e])
        if ru == rv:
            continue
        merged = flag[ru] | flag[rv]
        if rank[ru] < rank[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        if rank[ru] == rank[rv]:
            rank[ru] += 1
        flag[ru] = merged
        if merged == 3:
            return lab[e]
    return 2.0


@njit(cache=True)
def _component_stats(comp, dist, is_boundary):
    """Per-root size, boundary contact, min and max root distance."""
    V = comp.shape[0]
    size = np.zeros(V, dtype=np.int64)
    touches = np.zeros(V, dtype=np.bool_)
    mind = np.full(V, np.iinfo(np.int64).max, dtype=np.int64)
    maxd = np.full(V, -1, dtype=np.int64)
    for v in range(V):
        r = comp[v]
        size[r] += 1
        if is_boundary[v]:
            touches[r] = True
        if dist[v] < mind[r]:
            mind[r] = dist[v]
        if dist[v] > maxd[r]:
            maxd[r] = dist[v]
    return size, touches, mind, maxd


# --- cluster forests -------------------------------------------------------


class ClusterForest:
    """Finished union-find state for one configuration.

    ``comp[v]`` is the representative of v's cluster. Per-cluster
    aggregates are indexed by representative: vertex count, whether the
    cluster touches the patch boundary, and the smallest and largest
    distance-to-root over the cluster.
    """

    def __init__(self, patch: GraphPatch, comp: np.ndarray):
        self.patch = patch
        self.comp = comp
        is_b = np.zeros(patch.n_vertices, dtype=np.bool_)
        is_b[patch.boundary] = True
        self._size, self._touches, self._mind, self._maxd = _component_stats(
            comp, patch.dist, is_b)

    def find(self, v: int) -> int:
        return int(self.comp[v])

    def same(self, u: int, v: int) -> bool:
        return self.comp[u] == self.comp[v]

    def size(self, v: int) -> int:
        return int(self._size[self.comp[v]])

    def touches_boundary(self, v: int) -> bool:
        return bool(self._touches[self.comp[v]])

    def min_dist(self, v: int) -> int:
        return int(self._mind[self.comp[v]])

    def max_dist(self, v: int) -> int:
        return int(self._maxd[self.comp[v]])

    @property
    def roots(self) -> np.ndarray:
        return np.unique(self.comp)

    @property
    def n_components(self) -> int:
        return len(self.roots)

    def __repr__(self) -> str:
        return f"ClusterForest(V={len(self.comp)}, components={self.n_components})"


def _restricted_components(labels: EdgeLabels, p: float,
                           level: Optional[int] = None) -> np.ndarray:
    patch = labels.patch
    take = labels.labels <= p
    if level is not None:
        take = take & (patch.edge_levels() <= level)
    parent = np.arange(patch.n_vertices, dtype=np.int64)
    rank = np.zeros(patch.n_vertices, dtype=np.int8)
    _merge_masked(parent, rank, patch.edges[:, 0], patch.edges[:, 1], take)
    return _resolve(parent)


def clusters(labels: EdgeLabels, p: float) -> ClusterForest:
    """Cluster decomposition of the configuration at density p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return ClusterForest(labels.patch, _restricted_components(labels, p))


# --- connection events -----------------------------------------------------


def connected(labels: EdgeLabels, p: float, A: Sequence[int], B: Sequence[int],
              region: Optional[Sequence[int]] = None) -> bool:
    """Is some vertex of A joined to some vertex of B at density p?

    With a region, the connecting path must stay inside it: only edges
    with both endpoints in the region count, and A, B must be subsets of
    the region.
    """
    patch = labels.patch
    A = np.asarray(A, dtype=np.int64)
    B = np.asarray(B, dtype=np.int64)
    if A.size == 0 or B.size == 0:
        raise ValueError("A and B must be nonempty")
    take = labels.labels <= p
    if region is not None:
        inside = np.zeros(patch.n_vertices, dtype=bool)
        inside[np.asarray(region, dtype=np.int64)] = True
        if not (inside[A].all() and inside[B].all()):
            raise ValueError("A and B must lie inside the region")
        take = take & inside[patch.edges[:, 0]] & inside[patch.edges[:, 1]]
    parent = np.arange(patch.n_vertices, dtype=np.int64)
    rank = np.zeros(patch.n_vertices, dtype=np.int8)
    _merge_masked(parent, rank, patch.edges[:, 0], patch.edges[:, 1], take)
    comp = _resolve(parent)
    return bool(np.isin(comp[A], comp[B]).any())


def piv_event(labels: EdgeLabels, p: float, m: int, n: int) -> bool:
    """Sphere-to-sphere pivotal geometry inside B_n at one density.

    True when at least two distinct clusters of the configuration
    restricted to B_n each touch both S_m and S_n.
    """
    patch = labels.patch
    if not 0 <= m <= n <= patch.radius:
        raise ValueError("need 0 <= m <= n <= patch_radius")
    comp = _restricted_components(labels, p, level=n)
    on_sm = np.unique(comp[patch.sphere(m)])
    on_sn = np.unique(comp[patch.sphere(n)])
    both = np.intersect1d(on_sm, on_sn, assume_unique=True)
    return both.size >= 2


def piv_two_param(labels: EdgeLabels, p: float, q: float, m: int, n: int) -> bool:
    """Two-density pivotal geometry inside B_n.

    True when at least two clusters of the sparse configuration (density
    p) restricted to B_n each meet both the ball B_m and the sphere S_n,
    and at least two of those clusters are still not joined to each
    other in the dense configuration (density q) restricted to B_n.

    Note the asymmetry against piv_event: the inner contact set here is
    the ball B_m, not the sphere S_m. With p == q the event implies the
    single-density one with inner sphere contact replaced by ball
    contact; both conventions are exercised in the tests.
    """
    patch = labels.patch
    if not 0 <= m <= n <= patch.radius:
        raise ValueError("need 0 <= m <= n <= patch_radius")
    if q < p:
        raise ValueError("need p <= q")
    comp_p = _restricted_components(labels, p, level=n)
    on_bm = np.unique(comp_p[patch.ball(m)])
    on_sn = np.unique(comp_p[patch.sphere(n)])
    cands = np.intersect1d(on_bm, on_sn, assume_unique=True)
    if cands.size < 2:
        return False
    comp_q = _restricted_components(labels, q, level=n)
    # a p-cluster's root is one of its vertices, so comp_q[root] names
    # the q-cluster that swallowed it
    return len(np.unique(comp_q[cands])) >= 2


def two_ghost_event(labels: EdgeLabels, p: float, edge: int, n: int) -> bool:
    """The two-sided large-cluster event at a closed edge.

    True when the edge is closed at density p and its endpoints lie in
    distinct clusters, each holding at least n vertices, with at least
    one of the two clusters clear of the patch boundary. The boundary
    condition is the finite-patch surrogate for finiteness of a cluster.
    """
    patch = labels.patch
    if not 0 <= edge < patch.n_edges:
        raise ValueError("edge index out of range")
    if n < 1:
        raise ValueError("n must be >= 1")
    if labels.labels[edge] <= p:
        return False
    forest = clusters(labels, p)
    u, v = map(int, patch.edges[edge])
    if forest.same(u, v):
        return False
    if forest.size(u) < n or forest.size(v) < n:
        return False
    return not (forest.touches_boundary(u) and forest.touches_boundary(v))


def wired_connected(labels: EdgeLabels, p: float, u: int, v: int) -> bool:
    """Connection with the boundary glued into a single hub.

    True when u and v are joined, or both are joined to the patch
    boundary. On a finite patch this is the wired analogue of sharing a
    cluster with the point at infinity.
    """
    forest = clusters(labels, p)
    if forest.same(u, v):
        return True
    return forest.touches_boundary(u) and forest.touches_boundary(v)
