"""Ghost fields and the sharp-threshold instrumentation built on them.

A ghost field marks each vertex of a support set independently with
probability h. Smoothing connection events through ghosts is what makes
the threshold machinery quantitative: this module samples the fields,
prices ghost connection events, estimates pivotal influence and the
Russo derivative by resampling both states of each edge, runs the
coupled two-ghost check, prices the gluing event at a certified radius,
and instruments the snowballing chain inequality.

Ghost bits are drawn from a stream disjoint from the edge-label stream,
keyed by (seed, replica) and indexed by position in the sorted support,
so every estimator here is a pure function of its arguments.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import rng
from .estimators import (McEstimate, _components_for, est_piv, patch_for,
                         proportion_estimate, wilson_interval)
from .graphs import GraphPatch, distances_from, tube
from .percolation import delta as sprinkle_delta
from .percolation import sample_labels


# --- ghost fields ----------------------------------------------------------


class GhostField:
    """One sampled marking of a support set at intensity h."""

    def __init__(self, support: np.ndarray, intensity: float,
                 included: np.ndarray, seed: int):
        support = np.asarray(support, dtype=np.int64)
        included = np.asarray(included, dtype=np.int64)
        if not 0.0 <= intensity <= 1.0:
            raise ValueError("intensity must lie in [0, 1]")
        if not np.isin(included, support).all():
            raise ValueError("included vertices must lie in the support")
        self.support = support
        self.intensity = float(intensity)
        self.included = included
        self.seed = int(seed)

    def __repr__(self) -> str:
        return (f"GhostField(|support|={len(self.support)}, "
                f"h={self.intensity}, |included|={len(self.included)})")


def sample_ghost(support: Sequence[int], h: float, seed: int,
                 replica: int = 0) -> GhostField:
    """Mark each support vertex independently with probability h.

    Bit i of the (seed, replica) ghost stream belongs to the i-th vertex
    of the sorted support, so fields at different intensities with the
    same seed are coupled monotonically.
    """
    if not 0.0 <= h <= 1.0:
        raise ValueError("h must lie in [0, 1]")
    sup = np.unique(np.asarray(support, dtype=np.int64))
    u = rng.uniforms(seed, replica, len(sup), purpose=rng.GHOST_STREAM)
    return GhostField(sup, h, sup[u < h], seed)


# --- bits encoding ---------------------------------------------------------


class BitsEncoding:
    """Edge and ghost bit counts splitting (p1, p2, h) into fair coins.

    m_E independent bits of rate q_i reassemble one edge state at
    density p_i; m_G bits of rate q1 cover one ghost mark of intensity
    h. Construction verifies the defining identities to 1e-12.
    """

    def __init__(self, m_E: int, q1: float, q2: float, m_G: int,
                 p1: float, p2: float, h: float, d: int):
        if abs((1.0 - q1) ** m_E - (1.0 - p1)) > 1e-12:
            raise ValueError("q1 does not reassemble p1")
        if abs((1.0 - q2) ** m_E - (1.0 - p2)) > 1e-12:
            raise ValueError("q2 does not reassemble p2")
        if not 1.0 / d - 1e-12 <= q1 <= 2.0 / d + 1e-12:
            raise ValueError("q1 escaped [1/d, 2/d]")
        if h <= 1.0 / d and m_G < 1:
            raise ValueError("m_G must be positive for h <= 1/d")
        if q1 ** m_G < h - 1e-12:
            raise ValueError("ghost bits fail to cover h")
        self.m_E = int(m_E)
        self.q1 = float(q1)
        self.q2 = float(q2)
        self.m_G = int(m_G)

    def __repr__(self) -> str:
        return (f"BitsEncoding(m_E={self.m_E}, q1={self.q1:.6f}, "
                f"q2={self.q2:.6f}, m_G={self.m_G})")


def bits_encoding(p1: float, p2: float, h: float, d: int) -> BitsEncoding:
    """Decompose densities p1 < p2 and intensity h into independent bits."""
    if d < 2:
        raise ValueError("degree must be >= 2")
    if not 1.0 / d <= p1 < p2 < 1.0:
        raise ValueError("need 1/d <= p1 < p2 < 1")
    if not 0.0 < h <= 1.0 / d:
        raise ValueError("need 0 < h <= 1/d")
    # the ratios are exact integers at the domain boundaries (p1 = 1/d,
    # h = q1^k), where the two logs differ by an ulp; nudge before
    # flooring so the count never collapses to zero there
    m_E = max(1, int(math.log(1.0 - p1) / math.log((d - 1.0) / d) + 1e-9))
    q1 = 1.0 - (1.0 - p1) ** (1.0 / m_E)
    q2 = 1.0 - (1.0 - p2) ** (1.0 / m_E)
    m_G = max(1, int(math.log(h) / math.log(q1) + 1e-9))
    if m_G > 1 and q1 ** m_G < h - 1e-12:
        m_G -= 1
    return BitsEncoding(m_E, q1, q2, m_G, p1, p2, h, d)


# --- ghost connection ------------------------------------------------------


def _region_mask(patch: GraphPatch, region) -> Optional[np.ndarray]:
    if region is None:
        return None
    mask = np.zeros(patch.n_vertices, dtype=bool)
    mask[np.asarray(region, dtype=np.int64)] = True
    return mask


def _ghost_hit(comp: np.ndarray, probes: np.ndarray,
               marked: np.ndarray) -> bool:
    """Does any probe vertex share a component with a marked vertex?"""
    if probes.size == 0 or marked.size == 0:
        return False
    return bool(np.isin(comp[probes], comp[marked]).any())


def est_ghost_connection(family, radius: int, p: float,
                         A: Sequence[int], B: Sequence[int], h: float,
                         region: Optional[Sequence[int]] = None,
                         replicas: int = 1000, seed: int = 0) -> McEstimate:
    """P(some included vertex of A joins some included vertex of B).

    Independent ghost fields on A and B, independent of the edge
    labels; the connection must stay inside the region when one is
    given. Shared streams make the estimate pointwise monotone in p, h,
    and the region on a fixed seed.
    """
    patch = patch_for(family, radius)
    supA = np.unique(np.asarray(A, dtype=np.int64))
    supB = np.unique(np.asarray(B, dtype=np.int64))
    if supA.size == 0 or supB.size == 0:
        raise ValueError("A and B must be nonempty")
    mask = _region_mask(patch, region)
    k = 0
    for r in range(replicas):
        lab = sample_labels(patch, seed, r)
        comp = _components_for(patch, lab.labels, p, region_mask=mask)
        u = rng.uniforms(seed, r, supA.size + supB.size,
                         purpose=rng.GHOST_STREAM)
        gA = supA[u[:supA.size] < h]
        gB = supB[u[supA.size:] < h]
        if mask is not None:
            # out-of-region vertices sit in singleton components, so a
            # marked vertex only counts as an endpoint inside the region
            gA = gA[mask[gA]]
            gB = gB[mask[gB]]
        k += _ghost_hit(comp, gA, gB)
    return proportion_estimate(k, replicas, seed, radius)


# --- pivotal influence and Russo derivative --------------------------------


_MONOTONE_EVENTS = ("point_connection", "ghost_connection")


class PivotalInfluence:
    """Per-edge pivotality estimates with the Russo derivative."""

    def __init__(self, per_edge: np.ndarray, max_edge: int,
                 max_estimate: McEstimate, russo: McEstimate):
        self.per_edge = per_edge
        self.max_edge = int(max_edge)
        self.max_estimate = max_estimate
        self.russo = russo

    def __repr__(self) -> str:
        return (f"PivotalInfluence(max={self.max_estimate.mean:.4g} at edge "
                f"{self.max_edge}, russo={self.russo.mean:.4g})")


def _event_evaluator(patch: GraphPatch, event_spec, h: float):
    """Build (evaluator, ghost_bit_count) for a monotone event spec."""
    if not isinstance(event_spec, tuple) or not event_spec or \
            event_spec[0] not in _MONOTONE_EVENTS:
        raise ValueError(
            f"event_spec must name a monotone event {_MONOTONE_EVENTS}")
    if event_spec[0] == "point_connection":
        _, u, v = event_spec
        u, v = int(u), int(v)

        def ev(open_mask, ghost_u):
            comp = _components_for(patch, np.where(open_mask, 0.0, 1.0), 0.5)
            return comp[u] == comp[v]

        return ev, 0
    _, A, B = event_spec
    supA = np.unique(np.asarray(A, dtype=np.int64))
    supB = np.unique(np.asarray(B, dtype=np.int64))

    def ev(open_mask, ghost_u):
        comp = _components_for(patch, np.where(open_mask, 0.0, 1.0), 0.5)
        gA = supA[ghost_u[:supA.size] < h]
        gB = supB[ghost_u[supA.size:] < h]
        return _ghost_hit(comp, gA, gB)

    return ev, supA.size + supB.size


def est_pivotal_influence(family, radius: int, p: float, h: float,
                          event_spec, replicas: int = 500,
                          seed: int = 0) -> PivotalInfluence:
    """Resample both states of every edge to price its pivotality.

    An edge is pivotal when the event holds with it open and fails with
    it closed; for monotone events the sum over edges estimates the
    Russo derivative dP/dp.
    """
    patch = patch_for(family, radius)
    ev, n_ghost = _event_evaluator(patch, event_spec, h)
    E = patch.n_edges
    counts = np.zeros(E, dtype=np.int64)
    per_replica_total = np.zeros(replicas, dtype=np.int64)
    for r in range(replicas):
        lab = sample_labels(patch, seed, r)
        base = lab.labels <= p
        gu = (rng.uniforms(seed, r, n_ghost, purpose=rng.GHOST_STREAM)
              if n_ghost else None)
        for e in range(E):
            saved = base[e]
            base[e] = True
            up = ev(base, gu)
            if up:
                base[e] = False
                if not ev(base, gu):
                    counts[e] += 1
                    per_replica_total[r] += 1
            base[e] = saved
    means = counts / replicas
    worst = int(np.argmax(counts))
    max_est = proportion_estimate(int(counts[worst]), replicas, seed, radius,
                                  extra={"edge": worst})
    total_mean = float(per_replica_total.mean())
    spread = float(per_replica_total.std(ddof=1)) if replicas > 1 else 0.0
    russo = McEstimate(total_mean, 1.959964 * spread / math.sqrt(replicas),
                       replicas, seed, radius)
    return PivotalInfluence(means, worst, max_est, russo)


# --- coupled two-ghost check -----------------------------------------------


DEFAULT_SWEEP = (1.0 / 64.0, 1.0 / 16.0, 1.0 / 4.0)


def two_ghost_coupled_check(family, radius: int, p: float, h: float,
                            replicas: int = 4000, seed: int = 0,
                            sweep: Sequence[float] = DEFAULT_SWEEP):
    """Two neighbours hooked to separate ghosts but not to each other.

    lhs estimates P(x joins ghost A, y joins ghost B, x and y in
    distinct clusters, at least one cluster boundary-avoiding) at the
    root edge with both supports the whole patch. The comparison value
    is C*sqrt((1-p)h/p) with C fitted over the intensity sweep; the
    fitted log-log slope in h rides along (the theorem's ceiling gives
    1/2).
    """
    if not 0.0 <= h <= 1.0:
        raise ValueError("h must lie in [0, 1]")
    patch = patch_for(family, radius)
    indptr, nbr_v, nbr_e = patch.csr()
    x = 0
    y = int(nbr_v[indptr[0]])
    V = patch.n_vertices
    hs = sorted(set(sweep) | {h})
    counts = dict.fromkeys(hs, 0)
    is_bnd = np.zeros(V, dtype=bool)
    is_bnd[patch.boundary] = True
    for rep in range(replicas):
        lab = sample_labels(patch, seed, rep)
        comp = _components_for(patch, lab.labels, p)
        if comp[x] == comp[y]:
            continue
        touch = np.zeros(V, dtype=bool)
        np.maximum.at(touch, comp, is_bnd)
        if touch[comp[x]] and touch[comp[y]]:
            continue
        u = rng.uniforms(seed, rep, 2 * V, purpose=rng.GHOST_STREAM)
        minA = np.full(V, np.inf)
        np.minimum.at(minA, comp, u[:V])
        minB = np.full(V, np.inf)
        np.minimum.at(minB, comp, u[V:])
        for hh in hs:
            if minA[comp[x]] < hh and minB[comp[y]] < hh:
                counts[hh] += 1
    lhs = proportion_estimate(counts[h], replicas, seed, radius)
    xs, ys = [], []
    for hh in sweep:
        if counts[hh] > 0:
            xs.append(math.sqrt((1.0 - p) * hh / p))
            ys.append(counts[hh] / replicas)
    C = (sum(xx * yy for xx, yy in zip(xs, ys))
         / sum(xx * xx for xx in xs)) if xs else math.nan
    slope = math.nan
    if len(xs) >= 2:
        lx = np.log([hh for hh in sweep if counts[hh] > 0])
        ly = np.log([counts[hh] / replicas for hh in sweep if counts[hh] > 0])
        slope = float(np.polyfit(lx, ly, 1)[0])
    lhs.extra = {"C": C, "slope": slope,
                 "sweep": {hh: counts[hh] / replicas for hh in hs},
                 "edge": (x, y)}
    rhs = C * math.sqrt((1.0 - p) * h / p) if not math.isnan(C) else math.nan
    return lhs, rhs


# --- gluing ----------------------------------------------------------------


def gluing_radius(family, radius: int, p1: float, p2: float, h: float,
                  replicas: int = 400, seed: int = 0) -> int:
    """Smallest r whose annulus event is certifiably rarer than h.

    Scans r upward from 1/h and returns the first r with the upper
    confidence bound of P(Piv[1, floor(h r)]) below h across the density
    grid {p1, midpoint, p2}. Flooring the outer radius only enlarges the
    event, so the certificate is conservative.
    """
    if not 0.0 < h <= 1.0:
        raise ValueError("h must lie in (0, 1]")
    grid = sorted({p1, 0.5 * (p1 + p2), p2})
    cache = {}
    r = max(1, math.ceil(1.0 / h - 1e-9))
    while True:
        outer = int(h * r)
        if outer >= 1:
            if outer > radius:
                raise ValueError(
                    f"no certifiable gluing radius within the patch "
                    f"(needs Piv outer radius > {radius})")
            if outer not in cache:
                ubs = []
                for p in grid:
                    e = est_piv(family, radius, p, 1, outer,
                                replicas=replicas, seed=seed)
                    k = int(round(e.mean * e.replicas))
                    ubs.append(wilson_interval(k, e.replicas)[1])
                cache[outer] = max(ubs)
            if cache[outer] < h:
                return r
        r += 1


def gluing_event_prob(family, radius: int, p1: float, p2: float, h: float,
                      A: Sequence[int], X: Sequence[int], Y: Sequence[int],
                      region: Optional[Sequence[int]] = None,
                      replicas: int = 1000, seed: int = 0,
                      r: Optional[int] = None) -> McEstimate:
    """The bad event the gluing lemma bounds, on shared labels.

    X reaches the ghost inside the r-fattened region at the higher
    density, Y reaches the same ghost inside the region at the lower
    density, yet X and Y fail to join inside the fattened region at the
    higher density.
    """
    if p1 > p2:
        raise ValueError("need p1 <= p2")
    patch = patch_for(family, radius)
    if r is None:
        r = gluing_radius(family, radius, p1, p2, h, seed=seed)
    region_idx = (np.arange(patch.n_vertices, dtype=np.int64)
                  if region is None else
                  np.unique(np.asarray(region, dtype=np.int64)))
    fat_idx = tube(patch, region_idx, int(r)).vertex_set
    mask_in = _region_mask(patch, region_idx)
    mask_fat = _region_mask(patch, fat_idx)
    supA = np.unique(np.asarray(A, dtype=np.int64))
    Xs = np.unique(np.asarray(X, dtype=np.int64))
    Ys = np.unique(np.asarray(Y, dtype=np.int64))
    X_fat = Xs[mask_fat[Xs]]
    Y_fat = Ys[mask_fat[Ys]]
    Y_in = Ys[mask_in[Ys]]
    A_fat = supA[mask_fat[supA]]
    A_in = supA[mask_in[supA]]
    k = 0
    for rep in range(replicas):
        lab = sample_labels(patch, seed, rep)
        u = rng.uniforms(seed, rep, supA.size, purpose=rng.GHOST_STREAM)
        marked = supA[u < h]
        comp2 = _components_for(patch, lab.labels, p2, region_mask=mask_fat)
        if _ghost_hit(comp2, X_fat, marked[np.isin(marked, A_fat)]):
            if not _ghost_hit(comp2, X_fat, Y_fat):
                comp1 = _components_for(patch, lab.labels, p1,
                                        region_mask=mask_in)
                if _ghost_hit(comp1, Y_in, marked[np.isin(marked, A_in)]):
                    k += 1
    return proportion_estimate(k, replicas, seed, radius,
                               extra={"r": int(r)})


# --- snowballing -----------------------------------------------------------


def _min_pair_counts(compA: np.ndarray, A: np.ndarray,
                     B: np.ndarray) -> np.ndarray:
    return compA[A][:, None] == compA[B][None, :]


def snowball_chain(family, radius: int, p1: float, p2: float,
                   centers: Sequence, b: int, h: float,
                   replicas: int = 600, seed: int = 0):
    """Endpoint connection at p2 against the product of endpoint taus.

    lhs estimates the worst cross-pair connection probability between
    the balls around the first and last centers at the higher density;
    rhs multiplies the two within-ball worst-pair probabilities at the
    lower density. Their ratio is the empirical snowballing constant.
    Consecutive ball taus at p1 and the density distance ride along for
    checking the chain hypothesis at intensity h.
    """
    patch = patch_for(family, radius)
    cs = [int(c) for c in np.atleast_1d(np.asarray(centers, dtype=np.int64))]
    if not cs:
        raise ValueError("need at least one center")
    dists = [distances_from(patch, c) for c in cs]
    balls = [np.flatnonzero(dv <= b).astype(np.int64) for dv in dists]
    for i in range(len(cs) - 1):
        if dists[i][cs[i + 1]] > 2 * b + 1:
            raise ValueError(
                f"centers {i} and {i + 1} too far apart for radius-{b} "
                f"balls to chain")
    first, last = balls[0], balls[-1]
    cross = np.zeros((first.size, last.size), dtype=np.int64)
    within = [np.zeros((bb.size, bb.size), dtype=np.int64)
              for bb in (first, last)]
    consec_pairs = [np.union1d(balls[i], balls[i + 1])
                    for i in range(len(cs) - 1)]
    consec = [np.zeros((uu.size, uu.size), dtype=np.int64)
              for uu in consec_pairs]
    for rep in range(replicas):
        lab = sample_labels(patch, seed, rep)
        comp2 = _components_for(patch, lab.labels, p2)
        comp1 = _components_for(patch, lab.labels, p1)
        cross += _min_pair_counts(comp2, first, last)
        for mat, bb in zip(within, (first, last)):
            mat += _min_pair_counts(comp1, bb, bb)
        for mat, union in zip(consec, consec_pairs):
            mat += _min_pair_counts(comp1, union, union)
    lhs = proportion_estimate(int(cross.min()), replicas, seed, radius)
    tau_first = within[0].min() / replicas
    tau_last = within[1].min() / replicas
    rhs = tau_first * tau_last
    ratio = lhs.mean / rhs if rhs > 0 else math.inf
    lhs.extra = {
        "ratio": ratio,
        "tau_p1_first": tau_first,
        "tau_p1_last": tau_last,
        "consecutive_union_taus": [int(m.min()) / replicas for m in consec],
        "delta": sprinkle_delta(p1, p2) if 0 < p1 < p2 < 1 else None,
        "h": h,
    }
    return lhs, rhs
