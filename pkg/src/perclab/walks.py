"""Lazy random walks on patches, exact heat kernels, and walk tubes.

The lazy walk stays put with probability 1/2 and otherwise crosses a
uniformly random edge of the ambient transitive graph. On a finite
patch the walk is exact as long as it never visits the boundary, so
every kernel routine enforces a no-truncation precondition and the
sampling routines abort loudly instead of silently reflecting.

Built on the exact kernels are the classical bounds this laboratory
checks by direct evaluation (transition bound, ball escape, the
entropy-increment inequality, entropy versus growth, kernel decay),
the ironing coarse-graining with its tube containments, maximal
coupling of two walk endpoints, and the radial and annular tube
builders with their deterministic verifier.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from . import rng
from .graphs import GraphPatch, distances_from, geodesic, growth, tube


class TruncationError(RuntimeError):
    """A walk or kernel touched the patch boundary; enlarge the patch."""


# --- exact kernels ---------------------------------------------------------


class WalkDistribution:
    """The law of the lazy walk at one time, as mass per patch vertex."""

    def __init__(self, patch: GraphPatch, start: int, t: int,
                 mass: np.ndarray, truncation_mass: float = 0.0):
        mass = np.asarray(mass, dtype=np.float64)
        if mass.min() < 0.0:
            raise ValueError("negative mass")
        if abs(mass.sum() + truncation_mass - 1.0) > 1e-12:
            raise ValueError("mass does not sum to 1")
        self.patch = patch
        self.start = int(start)
        self.t = int(t)
        self.mass = mass
        self.truncation_mass = float(truncation_mass)

    def __repr__(self) -> str:
        return (f"WalkDistribution(start={self.start}, t={self.t}, "
                f"support={int(np.count_nonzero(self.mass))}, "
                f"truncated={self.truncation_mass:.3g})")


@lru_cache(maxsize=64)
def _transition(patch: GraphPatch):
    """Lazy transition matrix, boundary mass allowed to leak."""
    V, d = patch.n_vertices, patch.degree
    rows = np.concatenate([patch.edges[:, 0], patch.edges[:, 1]])
    cols = np.concatenate([patch.edges[:, 1], patch.edges[:, 0]])
    vals = np.full(2 * patch.n_edges, 0.5 / d)
    P = sparse.csr_matrix((vals, (rows, cols)), shape=(V, V))
    return P + sparse.identity(V, format="csr") * 0.5


def heat_kernel_exact(patch: GraphPatch, start: int, t: int) -> WalkDistribution:
    """The time-t law of the lazy walk, by t sparse transition steps.

    Exactness requires the ball of radius t around the start to sit
    inside the patch, so no mass can reach the boundary.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t + patch.dist[start] > patch.radius:
        raise TruncationError(
            f"kernel at t={t} from a vertex at distance {patch.dist[start]} "
            f"does not fit in a radius-{patch.radius} patch")
    P = _transition(patch)
    mass = np.zeros(patch.n_vertices)
    mass[start] = 1.0
    for _ in range(t):
        mass = P @ mass
    if mass[distances_from(patch, start) > t].any():
        raise RuntimeError("kernel mass escaped the time-t ball")
    return WalkDistribution(patch, start, t, mass)


def _kernel_sequence(patch: GraphPatch, start: int, t: int) -> list:
    """Mass vectors at every time 0..t (same precondition as above)."""
    if t + patch.dist[start] > patch.radius:
        raise TruncationError("kernel sequence does not fit in the patch")
    P = _transition(patch)
    out = [np.zeros(patch.n_vertices)]
    out[0][start] = 1.0
    for _ in range(t):
        out.append(P @ out[-1])
    return out


def entropy(dist: WalkDistribution) -> float:
    """Shannon entropy of a walk law, with 0 log 0 = 0."""
    if dist.truncation_mass != 0.0:
        raise ValueError("entropy of a truncated distribution is undefined")
    m = dist.mass[dist.mass > 0]
    return float(-(m * np.log(m)).sum())


# --- walk sampling ---------------------------------------------------------


def lazy_walk(patch: GraphPatch, start: int, t: int, seed: int,
              replica: int = 0) -> np.ndarray:
    """Sample a lazy walk trajectory of t steps from the walk stream.

    One uniform drives each step: the lower half stays put, the upper
    half indexes a uniformly random neighbour in the ambient graph. A
    step onto a vertex outside the patch aborts with TruncationError.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    d = patch.degree
    indptr, nbr_v, _ = patch.csr()
    u = rng.uniforms(seed, replica, t, purpose=rng.WALK_STREAM)
    path = np.empty(t + 1, dtype=np.int64)
    path[0] = start
    v = int(start)
    for s in range(t):
        if u[s] >= 0.5:
            j = int((u[s] - 0.5) * 2.0 * d)
            lo, hi = indptr[v], indptr[v + 1]
            if j >= hi - lo:
                raise TruncationError(
                    f"walk stepped outside the patch at time {s + 1}")
            v = int(nbr_v[lo + j])
        path[s + 1] = v
    return path


# --- bound reports ---------------------------------------------------------


class BoundReport:
    """Outcome of checking one family of inequalities on exact kernels.

    ``violations`` lists every (t, where, lhs, rhs) with lhs > rhs;
    ``worst_ratio`` is max lhs/rhs over all comparisons, so a clean
    report has worst_ratio <= 1.
    """

    def __init__(self, kind: str, n_checked: int, violations: list,
                 worst_ratio: float, extra: Optional[dict] = None):
        self.kind = kind
        self.n_checked = int(n_checked)
        self.violations = violations
        self.worst_ratio = float(worst_ratio)
        self.extra = extra or {}

    @property
    def ok(self) -> bool:
        return not self.violations

    def __repr__(self) -> str:
        return (f"BoundReport({self.kind}, checked={self.n_checked}, "
                f"violations={len(self.violations)}, "
                f"worst_ratio={self.worst_ratio:.4g})")


def vc_check(patch: GraphPatch, t_max: int,
             keep_margins: bool = False) -> BoundReport:
    """Check the transition bound and the ball-escape bound exactly.

    Transitivity reduces the all-pairs transition bound
    p_t(u,v) <= 2 sqrt(deg v / deg u) exp(-d(u,v)^2 / 2t) to the root
    row, where the degree ratio is 1. The escape probability
    P(max_{k<=t} d(o, X_k) >= n) is computed by an absorbing recursion
    and compared with 2 (t+1) Gr(n) exp(-n^2 / 2t). With keep_margins
    the per-vertex transition slack at every t rides along in extra.
    """
    if t_max > patch.radius:
        raise TruncationError("t_max exceeds the patch radius")
    P = _transition(patch)
    dist = patch.dist
    violations = []
    worst = 0.0
    checked = 0
    slack = []
    escape_slack = []
    mass = np.zeros(patch.n_vertices)
    mass[patch.root] = 1.0
    # survive[n] carries the mass that has never reached distance n
    survive = {n: mass.copy() for n in range(1, t_max + 1)}
    for t in range(1, t_max + 1):
        mass = P @ mass
        bound = 2.0 * np.exp(-dist.astype(np.float64) ** 2 / (2.0 * t))
        checked += patch.n_vertices
        ratios = mass / bound
        worst = max(worst, float(ratios.max()))
        if keep_margins:
            slack.append(bound - mass)
        for v in np.flatnonzero(mass > bound):
            violations.append({"check": "transition", "t": t, "where": int(v),
                               "lhs": float(mass[v]), "rhs": float(bound[v])})
        for n in range(1, t_max + 1):
            survive[n] = P @ survive[n]
            survive[n][dist >= n] = 0.0
            escape = 1.0 - float(survive[n].sum())
            rhs = 2.0 * (t + 1) * growth(patch, n) * math.exp(-n * n / (2.0 * t))
            checked += 1
            if rhs > 0:
                worst = max(worst, escape / rhs)
            if keep_margins:
                escape_slack.append((t, n, rhs - escape))
            if escape > rhs:
                violations.append({"check": "escape", "t": t, "where": n,
                                   "lhs": escape, "rhs": rhs})
    extra = None
    if keep_margins:
        extra = {"transition_slack": slack, "escape_slack": escape_slack}
    return BoundReport("varopoulos_carne", checked, violations, worst, extra)


def _tv(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(a - b).sum())


def cool_inequality_check(patch: GraphPatch, t_max: int) -> BoundReport:
    """Entropy increments dominate the averaged squared TV step.

    For each t <= t_max this computes
    deg(o)^{-1} sum_{x ~ o} TV(P_o(X_t = .), P_x(X_{t-1} = .))^2 and
    H_t - H_{t-1} from exact kernels and records any violation. The
    minimal constant C with H_t <= C (log Gr(ceil(sqrt(t))))^2 rides
    along in ``extra``.
    """
    if t_max + 1 > patch.radius:
        raise TruncationError("need t_max + 1 <= patch radius")
    root_seq = _kernel_sequence(patch, patch.root, t_max)
    nbrs = patch.neighbors(patch.root)
    d = patch.degree
    if len(nbrs) != d:
        raise TruncationError("root is missing ambient neighbours")
    nbr_seq = [_kernel_sequence(patch, int(x), t_max - 1) for x in nbrs]
    ents = [0.0]
    for t in range(1, t_max + 1):
        m = root_seq[t][root_seq[t] > 0]
        ents.append(float(-(m * np.log(m)).sum()))
    violations = []
    worst = 0.0
    entropy_c = 0.0
    for t in range(1, t_max + 1):
        lhs = sum(_tv(root_seq[t], ks[t - 1]) ** 2 for ks in nbr_seq) / d
        rhs = ents[t] - ents[t - 1]
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        if lhs > rhs:
            violations.append({"check": "cool", "t": t,
                               "where": patch.root, "lhs": lhs, "rhs": rhs})
        gr = growth(patch, math.ceil(math.sqrt(t)))
        entropy_c = max(entropy_c, ents[t] / math.log(gr) ** 2)
    return BoundReport("cool_inequality", t_max, violations, worst,
                       extra={"entropy_growth_constant": entropy_c,
                              "entropies": ents})


VACUOUS = "bound vacuous"


def kernel_decay_constant(patch: GraphPatch, t_set: Sequence[int],
                          uncapped: bool = False) -> dict:
    """Largest c in (0, 1] making the growth kernel bound hold, per t.

    The bound is max_{u,v} p_t(u,v) <= 1 / Gr(ceil(c sqrt(t) /
    sqrt(log Gr(ceil(sqrt(t)))))), evaluated on the root row (the max
    over pairs, by transitivity). When the bound only holds with inner
    radius 0, where it is trivial, the value is the string
    ``"bound vacuous"``. With ``uncapped`` the raw feasibility ratio is
    reported instead of clamping into (0, 1]; graphs whose kernels
    decay faster than the bound demands then separate cleanly even
    when both clamp to 1.
    """
    out = {}
    for t in t_set:
        t = int(t)
        if t < 4:
            raise ValueError("kernel decay needs t >= 4")
        peak = float(heat_kernel_exact(patch, patch.root, t).mass.max())
        rho = 0
        while rho + 1 <= patch.radius and growth(patch, rho + 1) <= 1.0 / peak:
            rho += 1
        if rho == 0:
            out[t] = VACUOUS
            continue
        a = math.sqrt(t) / math.sqrt(
            math.log(growth(patch, math.ceil(math.sqrt(t)))))
        out[t] = rho / a if uncapped else min(1.0, rho / a)
    return out


# --- ironing ---------------------------------------------------------------


class IronedPath:
    """A path, its crease decomposition, and the geodesic rewrite."""

    def __init__(self, original: np.ndarray, thickness: int,
                 crease_times: list, crease_points: np.ndarray,
                 ironed: np.ndarray):
        original = np.asarray(original, dtype=np.int64)
        ironed = np.asarray(ironed, dtype=np.int64)
        cr = len(crease_times) - 1
        if crease_times[0] != 0 or crease_times[-1] != len(original) - 1:
            raise ValueError("crease times must span the path")
        if original[0] != ironed[0] or original[-1] != ironed[-1]:
            raise ValueError("ironing moved an endpoint")
        if cr > 0 and len(ironed) - 1 > thickness * cr:
            raise ValueError("ironed path longer than thickness * creases")
        self.original = original
        self.thickness = int(thickness)
        self.crease_times = list(crease_times)
        self.crease_points = np.asarray(crease_points, dtype=np.int64)
        self.ironed = ironed

    @property
    def crease_number(self) -> int:
        return len(self.crease_times) - 1

    def __repr__(self) -> str:
        return (f"IronedPath(len={len(self.original) - 1}, "
                f"r={self.thickness}, creases={self.crease_number}, "
                f"ironed_len={len(self.ironed) - 1})")


def iron(path: Sequence[int], r: int, patch: GraphPatch) -> IronedPath:
    """Coarse-grain a path by geodesics between radius-r crease points.

    Crease times start at 0; each next one is the first time the path
    reaches distance r from the previous crease point, or the path end
    when it never does. The rewritten path concatenates the canonical
    geodesics between consecutive crease points; both tube containments
    (the thickness-r tube of each path inside the thickness-2r tube of
    the other) are verified before returning.
    """
    if r < 1:
        raise ValueError("thickness must be at least 1")
    path = np.asarray(path, dtype=np.int64)
    if path.size == 0:
        raise ValueError("empty path")
    times = [0]
    while times[-1] < path.size - 1:
        here = int(path[times[-1]])
        dists = distances_from(patch, here)[path[times[-1]:]]
        hits = np.flatnonzero(dists >= r)
        if hits.size == 0:
            times.append(path.size - 1)
        else:
            times.append(times[-1] + int(hits[0]))
    points = path[times]
    pieces = [np.array([points[0]], dtype=np.int64)]
    for a, b in zip(points[:-1], points[1:]):
        if a == b:
            continue
        pieces.append(geodesic(patch, int(a), int(b))[1:])
    ironed = np.concatenate(pieces)
    out = IronedPath(path, r, times, points, ironed)
    inner = tube(patch, ironed, r).vertex_set
    cover = tube(patch, path, 2 * r).vertex_set
    if not np.isin(inner, cover).all():
        raise RuntimeError("tube containment failed: iron escaped the path")
    inner = tube(patch, path, r).vertex_set
    cover = tube(patch, ironed, 2 * r).vertex_set
    if not np.isin(inner, cover).all():
        raise RuntimeError("tube containment failed: path escaped the iron")
    return out


# --- maximal coupling ------------------------------------------------------


def _pick(weights: np.ndarray, u: float) -> int:
    c = np.cumsum(weights)
    return int(np.searchsorted(c, u * c[-1], side="right").clip(0, len(c) - 1))


def _bridge(patch: GraphPatch, seq: list, endpoint: int,
            u: np.ndarray) -> np.ndarray:
    """Walk conditioned to end at ``endpoint``, sampled backwards.

    seq[s] is the exact time-s law from the start; the reversed chain
    picks X_{s-1} proportional to seq[s-1](w) P(w -> endpoint_s).
    """
    t = len(seq) - 1
    d = patch.degree
    out = np.empty(t + 1, dtype=np.int64)
    out[t] = endpoint
    for s in range(t, 0, -1):
        v = int(out[s])
        cand = np.concatenate([[v], patch.neighbors(v)])
        w = seq[s - 1][cand] * np.concatenate([[0.5],
                                               np.full(cand.size - 1, 0.5 / d)])
        out[s - 1] = cand[_pick(w, float(u[s - 1]))]
    return out


def coupled_pair(patch: GraphPatch, x: int, y: int, t: int, seed: int,
                 replica: int = 0):
    """Two lazy walks whose time-t endpoints are maximally coupled.

    The endpoints coalesce with probability exactly 1 - TV of the two
    time-t laws; the trajectories are then filled in as independent
    exact bridges, so each walk's marginal law is untouched.
    Returns (walk_x, walk_y, coalesced).
    """
    sx = _kernel_sequence(patch, int(x), t)
    sy = _kernel_sequence(patch, int(y), t)
    overlap = np.minimum(sx[t], sy[t])
    w = float(overlap.sum())
    u = rng.uniforms(seed, replica, 2 * t + 3, purpose=rng.WALK_STREAM)
    if u[0] < w:
        z = _pick(overlap, float(u[1]))
        zx = zy = z
        coalesced = True
    else:
        zx = _pick(sx[t] - overlap, float(u[1]))
        zy = _pick(sy[t] - overlap, float(u[2]))
        coalesced = False
    wx = _bridge(patch, sx, zx, u[3:3 + t])
    wy = _bridge(patch, sy, zy, u[3 + t:3 + 2 * t])
    return wx, wy, coalesced


# --- tube families ---------------------------------------------------------


class TubeFamily:
    """Kept tubes from a builder run, with the declared target."""

    def __init__(self, tubes: list, thickness: int, target: tuple,
                 mode: str, scale: int, patch: GraphPatch,
                 endpoint_sets: Optional[tuple] = None):
        if mode not in ("radial", "annular"):
            raise ValueError("mode must be radial or annular")
        self.tubes = list(tubes)
        self.thickness = int(thickness)
        self.target = target
        self.mode = mode
        self.scale = int(scale)
        self.patch = patch
        self.endpoint_sets = endpoint_sets

    @property
    def achieved_k(self) -> int:
        return len(self.tubes)

    @property
    def achieved_ell(self) -> int:
        return max((tb.length for tb in self.tubes), default=0)

    @property
    def construction_failed(self) -> bool:
        return not self.tubes

    def __repr__(self) -> str:
        return (f"TubeFamily({self.mode}, scale={self.scale}, "
                f"k'={self.achieved_k}/{self.target[0]}, "
                f"r={self.thickness}, ell'={self.achieved_ell})")


def _clip_radial(patch: GraphPatch, path: np.ndarray, n: int):
    """Segment of a path from its first exit of B_n to its first exit
    of B_4n, or None when it never makes both exits. Distances change
    by at most one per step, so the segment runs from S_n to S_4n."""
    d = patch.dist[path]
    past = np.flatnonzero(d > n)
    if past.size == 0 or past[0] == 0:
        return None
    i0 = int(past[0]) - 1
    far = np.flatnonzero(d[i0:] > 4 * n)
    if far.size == 0:
        return None
    return path[i0:i0 + int(far[0])]


def build_radial_tubes(patch: GraphPatch, n: int, k: int, r: int, t: int,
                       seed: int, attempts: int = 3) -> TubeFamily:
    """Disjoint thickness-r tubes crossing from S_n to S_4n.

    Walks launch from k equidistant points on a root geodesic inside
    B_n, are ironed at thickness r, clipped between the first exit of
    B_n and the first arrival on S_4n, and kept greedily when their
    tubes avoid everything kept so far. Walks that leave the patch or
    never cross simply fail their slot; attempts redraw every slot
    until k tubes are kept. An empty result is a construction failure,
    reported, not raised.
    """
    if 4 * n >= patch.radius:
        raise ValueError("need 4n strictly inside the patch radius")
    ray = geodesic(patch, patch.root, int(patch.sphere(n)[0]))
    anchors = [int(ray[int(round(p))])
               for p in np.linspace(0, n, k + 2)[1:-1]] or [patch.root]
    occupied = np.zeros(patch.n_vertices, dtype=bool)
    kept = []
    for attempt in range(attempts):
        for j, a in enumerate(anchors):
            if len(kept) >= k:
                break
            try:
                walk = lazy_walk(patch, a, t, seed,
                                 replica=attempt * len(anchors) + j)
            except TruncationError:
                continue
            flat = iron(walk, r, patch).ironed if r >= 1 else walk
            clipped = _clip_radial(patch, flat, n)
            if clipped is None:
                continue
            tb = tube(patch, clipped, r)
            if occupied[tb.vertex_set].any():
                continue
            occupied[tb.vertex_set] = True
            kept.append(tb)
    return TubeFamily(kept, r, (k, r, math.inf), "radial", n, patch)


def _crossing_anchor(patch: GraphPatch, cross: np.ndarray, target: float) -> int:
    d = patch.dist[cross]
    return int(cross[int(np.argmin(np.abs(d - target)))])


def _check_crossing(patch: GraphPatch, cross: np.ndarray, n: int, name: str):
    """A crossing must contain a path from S_n to S_3n inside itself."""
    d = patch.dist
    member = np.zeros(patch.n_vertices, dtype=bool)
    member[cross] = True
    indptr, nbr_v, _ = patch.csr()
    seen = np.zeros(patch.n_vertices, dtype=bool)
    frontier = [int(v) for v in cross if d[v] == n]
    for v in frontier:
        seen[v] = True
    while frontier:
        nxt = []
        for v in frontier:
            if d[v] == 3 * n:
                return
            for w in nbr_v[indptr[v]:indptr[v + 1]]:
                if member[w] and not seen[w]:
                    seen[w] = True
                    nxt.append(int(w))
        frontier = nxt
    raise ValueError(f"{name} contains no path from S_n to S_3n")


def build_annular_tubes(patch: GraphPatch, A: Sequence[int], B: Sequence[int],
                        n: int, k: int, r: int, t: int, seed: int,
                        attempts: int = 3) -> TubeFamily:
    """Disjoint thickness-r tubes joining two crossings of the annulus.

    Anchor pairs sit in interleaved distance bands across (n, 3n); each
    pair launches a maximally coupled walk pair, and a pair that
    coalesces contributes the concatenation of its two ironed walks,
    kept greedily under the same disjointness rule as the radial
    builder. All pairs failing to coalesce across all attempts is a
    construction failure, reported, not raised.
    """
    A = np.unique(np.asarray(A, dtype=np.int64))
    B = np.unique(np.asarray(B, dtype=np.int64))
    _check_crossing(patch, A, n, "A")
    _check_crossing(patch, B, n, "B")
    occupied = np.zeros(patch.n_vertices, dtype=bool)
    kept = []
    for attempt in range(attempts):
        for j in range(k):
            if len(kept) >= k:
                break
            center = n + (2 * j + 1) * n / k
            a = _crossing_anchor(patch, A, center)
            b = _crossing_anchor(patch, B, center)
            try:
                wa, wb, met = coupled_pair(patch, a, b, t, seed,
                                           replica=attempt * k + j)
            except TruncationError:
                continue
            if not met:
                continue
            fore = iron(wa, r, patch).ironed if r >= 1 else wa
            back = iron(wb, r, patch).ironed if r >= 1 else wb
            joined = np.concatenate([fore, back[::-1][1:]])
            tb = tube(patch, joined, r)
            if occupied[tb.vertex_set].any():
                continue
            occupied[tb.vertex_set] = True
            kept.append(tb)
    return TubeFamily(kept, r, (k, r, math.inf), "annular", n, patch,
                      endpoint_sets=(A, B))


def polylog_parameters(c: float, lam: float, n: int) -> tuple:
    """The (k, r, ell) triple of the polylog tube parameterization."""
    ln = math.log(n)
    return ln ** (c * lam), n * ln ** (-lam / c), n * ln ** (lam / c)


def verify_plentiful(tubes: TubeFamily, k: float, r: int, ell: float) -> bool:
    """Deterministically recheck a tube family against (k, r, ell).

    Recomputes every thickness-r tube from its path, scans all pairs
    for intersections, bounds each path length by ell, and checks the
    mode's endpoint condition: radial paths run from S_n to S_4n,
    annular paths from one crossing to the other. Use
    ``polylog_parameters`` to produce the (k, r, ell) targets of the
    polylog parameterization.
    """
    fam = tubes
    if len(fam.tubes) < k:
        return False
    sets = [tube(fam.patch, tb.path, r).vertex_set for tb in fam.tubes]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            if np.isin(sets[i], sets[j]).any():
                return False
    for tb in fam.tubes:
        if tb.length > ell:
            return False
        first, last = int(tb.path[0]), int(tb.path[-1])
        if fam.mode == "radial":
            if fam.patch.dist[first] != fam.scale:
                return False
            if fam.patch.dist[last] != 4 * fam.scale:
                return False
        else:
            A, B = fam.endpoint_sets
            if first not in A or last not in B:
                return False
    return True
