"""Finite patches of infinite transitive graphs.

Each supported family is described by a local rule: vertices are integer
coordinate tuples and a function lists the coordinates adjacent to a given
one. A patch is the closed ball of a chosen radius around a fixed root,
grown level by level. Vertex indexing is deterministic: vertices are
ordered by (graph distance, coordinate), so two builds of the same patch
agree bit for bit, on any platform.

Families:

* ``HyperCubic(d)``   the grid Z^d, degree 2d
* ``Slab(d, k, m)``   Z^(d-k) x (Z/mZ)^k, a slab of thickness m
* ``Cylinder(m)``     Z x (Z/mZ)
* ``Triangular``      triangular lattice, degree 6
* ``Hexagonal``       honeycomb lattice, degree 3
* ``Kagome312``       the 3-12 lattice (truncated honeycomb), degree 3
* ``RegularTree(b)``  infinite b-regular tree
* ``Heisenberg3``     Cayley graph of the discrete Heisenberg group with
                      generators x, y and inverses, degree 4
* ``MacroGrid(n)``    cliques K_{4n} glued along the bonds of Z^2 by a
                      perfect rotation of bridge vertices, degree 4n

Small cyclic factors collapse honestly: a (Z/1Z) factor contributes no
edges and a (Z/2Z) factor contributes a single neighbour, because the
patch is a simple graph and parallel edges are merged.
"""

from __future__ import annotations

import io
import math
import re
from typing import Iterable, Optional, Sequence

import numpy as np

Coord = tuple

_FAMILY_RE = re.compile(r"^([A-Za-z][A-Za-z0-9]*)\s*(?:\(\s*([0-9,\s]*)\))?$")

_KINDS = {
    "HyperCubic": 1,
    "Slab": 3,
    "Cylinder": 1,
    "Triangular": 0,
    "Hexagonal": 0,
    "Kagome312": 0,
    "RegularTree": 1,
    "Heisenberg3": 0,
    "MacroGrid": 1,
}

# Planar unit-distance embeddings exist for these kinds; used for the
# crossing boxes and for plotting, never for adjacency.
_PLANAR = ("HyperCubic2", "Triangular", "Hexagonal", "Kagome312")

# Shrink factor placing truncation vertices so that every bond of the
# 3-12 tiling has the same euclidean length.
_TRUNC = 1.0 / (2.0 + math.sqrt(3.0))


class GraphFamily:
    """A named transitive graph together with its integer parameters."""

    def __init__(self, kind: str, *params: int):
        if kind not in _KINDS:
            raise ValueError(f"unknown graph family {kind!r}")
        if len(params) != _KINDS[kind]:
            raise ValueError(
                f"{kind} takes {_KINDS[kind]} parameter(s), got {len(params)}"
            )
        params = tuple(int(p) for p in params)
        if kind == "HyperCubic" and params[0] < 1:
            raise ValueError("HyperCubic needs dimension >= 1")
        if kind == "Slab":
            d, k, m = params
            if not (1 <= k < d) or m < 1:
                raise ValueError("Slab(d, k, m) needs 1 <= k < d and m >= 1")
        if kind == "Cylinder" and params[0] < 1:
            raise ValueError("Cylinder needs m >= 1")
        if kind == "RegularTree" and params[0] < 3:
            raise ValueError("RegularTree needs degree >= 3")
        if kind == "MacroGrid" and params[0] < 1:
            raise ValueError("MacroGrid needs n >= 1")
        self.kind = kind
        self.params = params

    # --- identity ---

    def __repr__(self) -> str:
        if self.params:
            return f"{self.kind}({','.join(map(str, self.params))})"
        return self.kind

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GraphFamily)
            and self.kind == other.kind
            and self.params == other.params
        )

    def __hash__(self) -> int:
        return hash((self.kind, self.params))

    @classmethod
    def parse(cls, text: str) -> "GraphFamily":
        """Parse a family from its canonical string, e.g. ``Slab(3,1,4)``."""
        m = _FAMILY_RE.match(text.strip())
        if not m:
            raise ValueError(f"cannot parse graph family from {text!r}")
        kind, args = m.group(1), m.group(2)
        params = []
        if args is not None and args.strip():
            params = [int(tok) for tok in args.split(",")]
        return cls(kind, *params)

    # --- local structure ---

    @property
    def degree(self) -> int:
        k = self.kind
        if k == "HyperCubic":
            return 2 * self.params[0]
        if k == "Slab":
            d, kk, m = self.params
            return 2 * (d - kk) + kk * _cyclic_degree(m)
        if k == "Cylinder":
            return 2 + _cyclic_degree(self.params[0])
        if k == "Triangular":
            return 6
        if k in ("Hexagonal", "Kagome312"):
            return 3
        if k == "RegularTree":
            return self.params[0]
        if k == "Heisenberg3":
            return 4
        if k == "MacroGrid":
            return 4 * self.params[0]
        raise AssertionError(k)

    @property
    def root(self) -> Coord:
        k = self.kind
        if k == "HyperCubic":
            return (0,) * self.params[0]
        if k == "Slab":
            return (0,) * self.params[0]
        if k == "Cylinder":
            return (0, 0)
        if k == "Triangular":
            return (0, 0)
        if k == "Hexagonal":
            return (0, 0, 0)
        if k == "Kagome312":
            return (0, 0, 0, 0)
        if k == "RegularTree":
            return ()
        if k == "Heisenberg3":
            return (0, 0, 0)
        if k == "MacroGrid":
            return (0, 0, 0)
        raise AssertionError(k)

    def neighbors(self, c: Coord) -> list:
        """Coordinates adjacent to c (no duplicates, order unspecified)."""
        k = self.kind
        if k == "HyperCubic":
            return _grid_neighbors(c, self.params[0], 0, 1)
        if k == "Slab":
            d, kk, m = self.params
            return _grid_neighbors(c, d, kk, m)
        if k == "Cylinder":
            return _grid_neighbors(c, 2, 1, self.params[0])
        if k == "Triangular":
            a, b = c
            return [
                (a + 1, b), (a - 1, b), (a, b + 1), (a, b - 1),
                (a + 1, b - 1), (a - 1, b + 1),
            ]
        if k == "Hexagonal":
            a, b, s = c
            if s == 0:
                return [(a, b, 1), (a - 1, b, 1), (a, b - 1, 1)]
            return [(a, b, 0), (a + 1, b, 0), (a, b + 1, 0)]
        if k == "Kagome312":
            return _kagome312_neighbors(c)
        if k == "RegularTree":
            b = self.params[0]
            kids = b if c == () else b - 1
            out = [c + (i,) for i in range(kids)]
            if c != ():
                out.append(c[:-1])
            return out
        if k == "Heisenberg3":
            x, y, z = c
            # Right multiplication by x, x^-1, y, y^-1 in the discrete
            # Heisenberg group, coordinates (x, y, z) with [x, y] = z.
            return [
                (x + 1, y, z), (x - 1, y, z),
                (x, y + 1, z + x), (x, y - 1, z - x),
            ]
        if k == "MacroGrid":
            return _macrogrid_neighbors(c, self.params[0])
        raise AssertionError(k)

    # --- planar embedding ---

    @property
    def is_planar_embeddable(self) -> bool:
        tag = self.kind + (str(self.params[0]) if self.kind == "HyperCubic" else "")
        return tag in _PLANAR

    @property
    def bond_length(self) -> float:
        """Euclidean bond length of the unit-distance embedding."""
        if self.kind == "Kagome312":
            return math.sqrt(3.0) * _TRUNC
        return 1.0

    @property
    def lattice_constant(self) -> float:
        """Length of a shortest primitive translation of the embedding."""
        if self.kind in ("Hexagonal", "Kagome312"):
            return math.sqrt(3.0)
        return 1.0

    def position(self, c: Coord) -> tuple:
        """Euclidean position of a vertex, planar families only."""
        k = self.kind
        if k == "HyperCubic" and self.params[0] == 2:
            return (float(c[0]), float(c[1]))
        if k == "Triangular":
            a, b = c
            return (a + 0.5 * b, 0.5 * math.sqrt(3.0) * b)
        if k == "Hexagonal":
            return _hex_position(c)
        if k == "Kagome312":
            a, b, s, j = c
            here = _hex_position((a, b, s))
            there = _hex_position(_hex_bridge((a, b, s), j))
            return (
                here[0] + _TRUNC * (there[0] - here[0]),
                here[1] + _TRUNC * (there[1] - here[1]),
            )
        raise ValueError(f"{self} has no planar embedding")


def _cyclic_degree(m: int) -> int:
    if m >= 3:
        return 2
    return m - 1  # m=2 gives one neighbour, m=1 gives none


def _grid_neighbors(c: Coord, d: int, k: int, m: int) -> list:
    """Neighbours in Z^(d-k) x (Z/mZ)^k, duplicates merged."""
    out = []
    free = d - k
    for i in range(free):
        out.append(c[:i] + (c[i] + 1,) + c[i + 1:])
        out.append(c[:i] + (c[i] - 1,) + c[i + 1:])
    for i in range(free, d):
        if m == 1:
            continue
        up = c[:i] + ((c[i] + 1) % m,) + c[i + 1:]
        out.append(up)
        if m > 2:
            out.append(c[:i] + ((c[i] - 1) % m,) + c[i + 1:])
    return out


def _hex_position(c: Coord) -> tuple:
    a, b, s = c
    return (1.5 * (a + b) + s, 0.5 * math.sqrt(3.0) * (b - a))


def _hex_bridge(v: Coord, j: int) -> Coord:
    """The j-th honeycomb neighbour of honeycomb vertex v, j in 0..2."""
    a, b, s = v
    if s == 0:
        return ((a, b, 1), (a - 1, b, 1), (a, b - 1, 1))[j]
    return ((a, b, 0), (a + 1, b, 0), (a, b + 1, 0))[j]


def _kagome312_neighbors(c: Coord) -> list:
    # Vertices of the 3-12 lattice are flags (a, b, s, j): corner j of the
    # small triangle that truncation grew at honeycomb vertex (a, b, s).
    # Two triangle mates plus the bridge into the matching flag across
    # honeycomb edge j.
    a, b, s, j = c
    va, vb, vs = _hex_bridge((a, b, s), j)
    # On the far side, the edge pointing back at us carries the same j;
    # this holds for all three directions on both sublattices.
    return [
        (a, b, s, (j + 1) % 3),
        (a, b, s, (j + 2) % 3),
        (va, vb, vs, j),
    ]


def _macrogrid_neighbors(c: Coord, n: int) -> list:
    i, j, t = c
    out = [(i, j, u) for u in range(4 * n) if u != t]
    r = t % 4
    if r == 0:
        out.append((i + 1, j, t + 2))
    elif r == 1:
        out.append((i, j + 1, t + 2))
    elif r == 2:
        out.append((i - 1, j, t - 2))
    else:
        out.append((i, j - 1, t - 2))
    return out


# --- patches ---


class GraphPatch:
    """The ball of a given radius around the root of a family.

    Vertices are indexed 0..V-1 in (distance, coordinate) order, the root
    is always index 0. ``dist[v]`` is the exact graph distance to the
    root. ``edges`` is the lexicographically sorted (E, 2) array of all
    induced edges, which fixes the edge indexing used by every labelling
    and every stream in the laboratory.
    """

    def __init__(self, family: GraphFamily, radius: int,
                 coords: Optional[list], dist: np.ndarray, edges: np.ndarray):
        self.family = family
        self.radius = int(radius)
        self.coords = coords
        self.dist = dist
        self.edges = edges
        self.degree = family.degree
        self.n_vertices = int(dist.shape[0])
        self.n_edges = int(edges.shape[0])
        self._csr = None
        self._sphere_start = None
        self._edge_levels = None

    # --- basic queries ---

    @property
    def root(self) -> int:
        return 0

    @property
    def boundary(self) -> np.ndarray:
        """Indices of the boundary sphere, distance == radius."""
        return self.sphere(self.radius)

    def _starts(self) -> np.ndarray:
        if self._sphere_start is None:
            # dist is nondecreasing by construction
            self._sphere_start = np.searchsorted(self.dist, np.arange(self.radius + 2))
        return self._sphere_start

    def sphere(self, r: int) -> np.ndarray:
        """Vertex indices at distance exactly r (contiguous by layout)."""
        if not 0 <= r <= self.radius:
            raise ValueError(f"sphere radius {r} outside patch of radius {self.radius}")
        s = self._starts()
        return np.arange(s[r], s[r + 1], dtype=np.int64)

    def ball(self, r: int) -> np.ndarray:
        if not 0 <= r <= self.radius:
            raise ValueError(f"ball radius {r} outside patch of radius {self.radius}")
        return np.arange(0, self._starts()[r + 1], dtype=np.int64)

    def ball_size(self, r: int) -> int:
        if not 0 <= r <= self.radius:
            raise ValueError(f"ball radius {r} outside patch of radius {self.radius}")
        return int(self._starts()[r + 1])

    def edge_levels(self) -> np.ndarray:
        """Per edge, the larger of the two endpoint distances.

        An edge belongs to the induced subgraph on B_n exactly when its
        level is at most n.
        """
        if self._edge_levels is None:
            self._edge_levels = np.maximum(self.dist[self.edges[:, 0]],
                                           self.dist[self.edges[:, 1]])
        return self._edge_levels

    def csr(self):
        """(indptr, nbr_vertex, nbr_edge) adjacency in edge-sorted order."""
        if self._csr is None:
            V, E = self.n_vertices, self.n_edges
            deg = np.zeros(V + 1, dtype=np.int64)
            np.add.at(deg, self.edges[:, 0] + 1, 1)
            np.add.at(deg, self.edges[:, 1] + 1, 1)
            indptr = np.cumsum(deg)
            nbr_v = np.empty(2 * E, dtype=np.int64)
            nbr_e = np.empty(2 * E, dtype=np.int64)
            cursor = indptr[:-1].copy()
            for eid in range(E):
                u, v = self.edges[eid]
                nbr_v[cursor[u]] = v
                nbr_e[cursor[u]] = eid
                cursor[u] += 1
                nbr_v[cursor[v]] = u
                nbr_e[cursor[v]] = eid
                cursor[v] += 1
            self._csr = (indptr, nbr_v, nbr_e)
        return self._csr

    def neighbors(self, v: int) -> np.ndarray:
        indptr, nbr_v, _ = self.csr()
        return nbr_v[indptr[v]:indptr[v + 1]]

    def __repr__(self) -> str:
        return (f"GraphPatch({self.family}, radius={self.radius}, "
                f"V={self.n_vertices}, E={self.n_edges})")

    # --- text round trip ---

    def export_text(self, fp) -> None:
        """Write the patch in the line-oriented interchange format.

        The format is exact: family string, radius, degree, counts, then
        one ``v index distance`` line per vertex and one ``e i j`` line
        per edge in index order. Importing and re-exporting reproduces
        the bytes.
        """
        own = isinstance(fp, str)
        f = open(fp, "w") if own else fp
        try:
            f.write("perclab-patch 1\n")
            f.write(f"family {self.family!r}\n")
            f.write(f"radius {self.radius}\n")
            f.write(f"degree {self.degree}\n")
            f.write(f"vertices {self.n_vertices}\n")
            f.write(f"edges {self.n_edges}\n")
            for i in range(self.n_vertices):
                f.write(f"v {i} {int(self.dist[i])}\n")
            for i in range(self.n_edges):
                f.write(f"e {int(self.edges[i, 0])} {int(self.edges[i, 1])}\n")
        finally:
            if own:
                f.close()

    @classmethod
    def import_text(cls, fp) -> "GraphPatch":
        own = isinstance(fp, str)
        f = open(fp, "r") if own else fp
        try:
            head = f.readline().split()
            if head[:1] != ["perclab-patch"]:
                raise ValueError("not a patch file")
            fields = {}
            for _ in range(5):
                key, _, val = f.readline().partition(" ")
                fields[key.strip()] = val.strip()
            family = GraphFamily.parse(fields["family"])
            radius = int(fields["radius"])
            nv = int(fields["vertices"])
            ne = int(fields["edges"])
            dist = np.empty(nv, dtype=np.int64)
            for i in range(nv):
                tag, idx, d = f.readline().split()
                if tag != "v" or int(idx) != i:
                    raise ValueError(f"bad vertex line {i}")
                dist[i] = int(d)
            edges = np.empty((ne, 2), dtype=np.int64)
            for i in range(ne):
                tag, a, b = f.readline().split()
                if tag != "e":
                    raise ValueError(f"bad edge line {i}")
                edges[i, 0] = int(a)
                edges[i, 1] = int(b)
            patch = cls(family, radius, None, dist, edges)
            if patch.degree != int(fields["degree"]):
                raise ValueError("degree mismatch in patch file")
            return patch
        finally:
            if own:
                f.close()

    def export_string(self) -> str:
        buf = io.StringIO()
        self.export_text(buf)
        return buf.getvalue()


def build_patch(family: GraphFamily, radius: int) -> GraphPatch:
    """Grow the ball of the given radius around the family's root.

    Level-by-level breadth first search; each new level is sorted by
    coordinate before it is assigned indices, so the indexing depends
    only on (family, radius).
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    root = family.root
    coords = [root]
    index = {root: 0}
    dist = [0]
    frontier = [root]
    for r in range(1, radius + 1):
        seen = set()
        for c in frontier:
            for nb in family.neighbors(c):
                if nb not in index:
                    seen.add(nb)
        frontier = sorted(seen)
        for c in frontier:
            index[c] = len(coords)
            coords.append(c)
            dist.append(r)
    pairs = set()
    for u, c in enumerate(coords):
        for nb in family.neighbors(c):
            v = index.get(nb)
            if v is not None and v != u:
                pairs.add((u, v) if u < v else (v, u))
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return GraphPatch(family, radius, coords,
                      np.asarray(dist, dtype=np.int64), edges)


# --- growth ---


def growth(patch: GraphPatch, n: int) -> int:
    """Gr(n): the number of vertices in the closed ball of radius n."""
    if n < 0 or n > patch.radius:
        raise ValueError(f"growth radius {n} outside patch of radius {patch.radius}")
    return patch.ball_size(n)


def growth_profile(patch: GraphPatch) -> np.ndarray:
    """Gr(0..radius) as an array."""
    return np.asarray([patch.ball_size(r) for r in range(patch.radius + 1)],
                      dtype=np.int64)


# --- exposed spheres ---


def exposed_sphere(patch: GraphPatch, r: int, escape_radius: int):
    """Vertices of S_r with an escape route that never re-enters B_r.

    A vertex u of the sphere S_r is exposed when some path leaves u,
    steps immediately outside the ball B_r and reaches S_escape_radius
    without ever touching B_r again. Inside a finite patch the escape
    radius is a proxy for escaping to infinity, so the result also
    carries a stabilization flag: True when shrinking the escape radius
    by one does not change the answer, which is evidence (not proof)
    that the escape radius has stopped mattering.

    Returns (sorted vertex index array, stabilized flag).
    """
    if not (0 <= r < escape_radius <= patch.radius):
        raise ValueError("need 0 <= r < escape_radius <= patch_radius")
    exposed = _exposed_at(patch, r, escape_radius)
    if escape_radius - 1 > r:
        stable = np.array_equal(exposed, _exposed_at(patch, r, escape_radius - 1))
    else:
        stable = False
    return exposed, stable


def _exposed_at(patch: GraphPatch, r: int, R: int) -> np.ndarray:
    dist = patch.dist
    indptr, nbr_v, _ = patch.csr()
    outside = dist > r
    # flood from S_R through the outside region
    reach = np.zeros(patch.n_vertices, dtype=bool)
    stack = [int(v) for v in patch.sphere(R)]
    for v in stack:
        reach[v] = True
    while stack:
        v = stack.pop()
        for w in nbr_v[indptr[v]:indptr[v + 1]]:
            if outside[w] and not reach[w]:
                reach[w] = True
                stack.append(int(w))
    hits = []
    for u in patch.sphere(r):
        for w in nbr_v[indptr[u]:indptr[u + 1]]:
            if outside[w] and reach[w]:
                hits.append(int(u))
                break
    return np.asarray(hits, dtype=np.int64)


def crossing_hits_exposed(patch: GraphPatch, r: int, path: Sequence[int]) -> bool:
    """Does a path from S_r out to S_{2r+1} meet the exposed part of S_r?

    The input path must start at distance exactly r and end at distance
    exactly 2r + 1. The answer should always be True; the checker exists
    so that the claim can be exercised on arbitrary paths.
    """
    path = list(path)
    if not path:
        raise ValueError("empty path")
    if 2 * r + 1 > patch.radius:
        raise ValueError("patch too small for the outer sphere")
    if patch.dist[path[0]] != r:
        raise ValueError("path must start on S_r")
    if patch.dist[path[-1]] != 2 * r + 1:
        raise ValueError("path must end on S_{2r+1}")
    exposed, _ = exposed_sphere(patch, r, patch.radius)
    marked = set(int(v) for v in exposed)
    return any(int(v) in marked for v in path)


# --- boundary-to-volume pigeonhole ---


def edge_boundary_size(patch: GraphPatch, m: int) -> int:
    """Number of edges from B_m to its complement in the patch."""
    if not (0 <= m < patch.radius):
        raise ValueError("edge boundary needs m < patch_radius")
    du = patch.dist[patch.edges[:, 0]]
    dv = patch.dist[patch.edges[:, 1]]
    lo = np.minimum(du, dv)
    hi = np.maximum(du, dv)
    return int(np.count_nonzero((lo <= m) & (hi > m)))


def boundary_ratio_scale(patch: GraphPatch, n: int):
    """The radius in [n, 2n-1] with the smallest boundary-to-volume ratio.

    Returns (m, ratio) where ratio = |edge boundary of B_m| / |B_m|.
    Needs patch_radius >= 2n so that every candidate boundary is fully
    visible inside the patch.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if 2 * n > patch.radius:
        raise ValueError("need patch_radius >= 2n to see every boundary")
    best = None
    for m in range(n, 2 * n):
        ratio = edge_boundary_size(patch, m) / patch.ball_size(m)
        if best is None or ratio < best[1]:
            best = (m, ratio)
    return best


# --- low growth scales ---


def low_growth_scales(patch: GraphPatch, D: float, n_max: int) -> np.ndarray:
    """Scales n <= n_max with log Gr(m) <= (log m)^D on [n^(1/3), n].

    The window is the integer range from ceil(n^(1/3)) to n. Note that
    n = 1 never qualifies on a graph with at least one edge, because the
    window is {1} and (log 1)^D = 0 < log Gr(1).
    """
    if n_max > patch.radius:
        raise ValueError("n_max exceeds patch radius")
    prof = growth_profile(patch)
    ok = np.zeros(n_max + 1, dtype=bool)
    for m in range(1, n_max + 1):
        ok[m] = math.log(prof[m]) <= math.log(m) ** D
    out = []
    for n in range(1, n_max + 1):
        lo = math.ceil(n ** (1.0 / 3.0) - 1e-9)
        if all(ok[m] for m in range(lo, n + 1)):
            out.append(n)
    return np.asarray(out, dtype=np.int64)


# --- geodesics and tubes ---


def geodesic(patch: GraphPatch, u: int, v: int) -> np.ndarray:
    """The canonical geodesic from u to v.

    Breadth first search from u with the frontier processed in increasing
    index order; each vertex takes the smallest-index predecessor. This
    makes the geodesic a pure function of (patch, u, v).
    """
    V = patch.n_vertices
    if not (0 <= u < V and 0 <= v < V):
        raise ValueError("vertex out of range")
    indptr, nbr_v, _ = patch.csr()
    parent = np.full(V, -1, dtype=np.int64)
    depth = np.full(V, -1, dtype=np.int64)
    depth[u] = 0
    frontier = [u]
    while frontier and depth[v] < 0:
        nxt = set()
        for x in frontier:
            for w in nbr_v[indptr[x]:indptr[x + 1]]:
                w = int(w)
                if depth[w] < 0 and w not in nxt:
                    parent[w] = x
                    nxt.add(w)
        for w in nxt:
            depth[w] = depth[frontier[0]] + 1
        frontier = sorted(nxt)
    if depth[v] < 0:
        raise ValueError("vertices not connected inside the patch")
    path = [v]
    while path[-1] != u:
        path.append(int(parent[path[-1]]))
    return np.asarray(path[::-1], dtype=np.int64)


def distances_from(patch: GraphPatch, u: int) -> np.ndarray:
    """Graph distances from u to every patch vertex (-1 if unreachable)."""
    indptr, nbr_v, _ = patch.csr()
    depth = np.full(patch.n_vertices, -1, dtype=np.int64)
    depth[u] = 0
    frontier = [u]
    while frontier:
        nxt = []
        for x in frontier:
            for w in nbr_v[indptr[x]:indptr[x + 1]]:
                w = int(w)
                if depth[w] < 0:
                    depth[w] = depth[x] + 1
                    nxt.append(w)
        frontier = nxt
    return depth


class TubeSpec:
    """A path together with the tube of a given thickness around it."""

    def __init__(self, path: np.ndarray, thickness: int, vertex_set: np.ndarray):
        self.path = np.asarray(path, dtype=np.int64)
        self.thickness = int(thickness)
        self.vertex_set = np.asarray(vertex_set, dtype=np.int64)

    @property
    def length(self) -> int:
        return len(self.path) - 1

    def __repr__(self) -> str:
        return (f"TubeSpec(length={self.length}, thickness={self.thickness}, "
                f"|tube|={len(self.vertex_set)})")


def tube(patch: GraphPatch, path: Sequence[int], thickness: int) -> TubeSpec:
    """Union of the balls B_thickness(x) over the path vertices x.

    Computed by a multi-source breadth first search, clipped to the
    patch.
    """
    if thickness < 0:
        raise ValueError("thickness must be nonnegative")
    path = np.asarray(path, dtype=np.int64)
    if path.size == 0:
        raise ValueError("empty path")
    indptr, nbr_v, _ = patch.csr()
    level = np.full(patch.n_vertices, -1, dtype=np.int64)
    frontier = []
    for x in np.unique(path):
        level[x] = 0
        frontier.append(int(x))
    for depth in range(1, thickness + 1):
        nxt = []
        for x in frontier:
            for w in nbr_v[indptr[x]:indptr[x + 1]]:
                w = int(w)
                if level[w] < 0:
                    level[w] = depth
                    nxt.append(w)
        frontier = nxt
    members = np.flatnonzero(level >= 0).astype(np.int64)
    return TubeSpec(path, thickness, members)


# --- planar crossing boxes ---


class BoxPatch:
    """A finite planar region with marked left and right sides.

    Used by the crossing-probability estimators. Not a ball: vertices
    are indexed in sorted coordinate order and distances to a root are
    not tracked.
    """

    def __init__(self, family: GraphFamily, L: int, coords: list,
                 edges: np.ndarray, left: np.ndarray, right: np.ndarray):
        self.family = family
        self.L = int(L)
        self.coords = coords
        self.edges = edges
        self.left = left
        self.right = right
        self.n_vertices = len(coords)
        self.n_edges = int(edges.shape[0])

    def __repr__(self) -> str:
        return (f"BoxPatch({self.family}, L={self.L}, V={self.n_vertices}, "
                f"E={self.n_edges})")


def build_box(family: GraphFamily, L: int) -> BoxPatch:
    """An L x L crossing region for a planar family.

    For the square lattice this is the self-dual bond rectangle: vertices
    (x, y) with 0 <= x <= L and 0 <= y < L, crossing from the x = 0
    column to the x = L column. At p = 1/2 the crossing probability is
    exactly 1/2 at every L, which makes the crossing-value median an
    unbiased probe of the threshold.

    For the other planar families the region is the euclidean square of
    side L lattice constants, so the linear resolution matches the
    square-lattice box. The left and right sides are the vertices within
    half a bond of the extreme x values.
    """
    if not family.is_planar_embeddable:
        raise ValueError(f"{family} is not planar; no crossing box")
    if L < 2:
        raise ValueError("L must be >= 2")
    if family.kind == "HyperCubic":
        coords = [(x, y) for x in range(L + 1) for y in range(L)]
        coords.sort()
        index = {c: i for i, c in enumerate(coords)}
        pairs = set()
        for u, c in enumerate(coords):
            for nb in family.neighbors(c):
                v = index.get(nb)
                if v is not None:
                    pairs.add((u, v) if u < v else (v, u))
        edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        left = np.asarray([i for i, c in enumerate(coords) if c[0] == 0],
                          dtype=np.int64)
        right = np.asarray([i for i, c in enumerate(coords) if c[0] == L],
                           dtype=np.int64)
        return BoxPatch(family, L, coords, edges, left, right)

    side = L * family.lattice_constant
    lo, hi = -1e-9, side + 1e-9
    coords = []
    for c in _planar_candidates(family, side):
        x, y = family.position(c)
        if lo <= x <= hi and lo <= y <= hi:
            coords.append(c)
    coords.sort()
    index = {c: i for i, c in enumerate(coords)}
    pairs = set()
    for u, c in enumerate(coords):
        for nb in family.neighbors(c):
            v = index.get(nb)
            if v is not None:
                pairs.add((u, v) if u < v else (v, u))
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    xs = np.asarray([family.position(c)[0] for c in coords])
    cut = 0.5 * family.bond_length
    left = np.flatnonzero(xs <= xs.min() + cut).astype(np.int64)
    right = np.flatnonzero(xs >= xs.max() - cut).astype(np.int64)
    return BoxPatch(family, L, coords, edges, left, right)


def _planar_candidates(family: GraphFamily, side: float) -> Iterable[Coord]:
    k = family.kind
    if k == "Triangular":
        # x = a + b/2, y = b sqrt(3)/2
        bmax = int(side / (0.5 * math.sqrt(3.0))) + 2
        for b in range(-1, bmax):
            for a in range(-bmax, int(side) + 2):
                yield (a, b)
    elif k == "Hexagonal":
        # x = 1.5 (a+b) + s, y = (b-a) sqrt(3)/2
        smax = int(side / 1.5) + 2
        dmax = int(side / (0.5 * math.sqrt(3.0))) + 2
        for tot in range(-1, smax + 1):
            for diff in range(-1, dmax + 1):
                if (tot + diff) % 2:
                    continue
                b = (tot + diff) // 2
                a = tot - b
                yield (a, b, 0)
                yield (a, b, 1)
    elif k == "Kagome312":
        scale = 1.0  # honeycomb parent has bond length 1
        smax = int(side / 1.5 / scale) + 2
        dmax = int(side / (0.5 * math.sqrt(3.0)) / scale) + 2
        for tot in range(-2, smax + 2):
            for diff in range(-2, dmax + 2):
                if (tot + diff) % 2:
                    continue
                b = (tot + diff) // 2
                a = tot - b
                for s in (0, 1):
                    for j in range(3):
                        yield (a, b, s, j)
    else:
        raise AssertionError(k)
