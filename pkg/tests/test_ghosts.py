"""Ghost field checks: exact oracles, independence, the coupled bounds.

The product-space oracles here integrate the ghost marks analytically
once the edge configuration is fixed (inclusion-exclusion over
components), so tiny instances have exact event probabilities and
Monte Carlo must land within 3 CI half-widths. The coupled two-ghost
scaling is pinned on a patch large enough that near-critical clusters
are not truncated by the boundary.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perclab.estimators import patch_for
from perclab.ghosts import (GhostField, bits_encoding, est_ghost_connection,
                            est_pivotal_influence, gluing_event_prob,
                            gluing_radius, sample_ghost, snowball_chain,
                            two_ghost_coupled_check)
from perclab.graphs import GraphFamily, distances_from

Z1 = GraphFamily.parse("HyperCubic(1)")
Z2 = GraphFamily.parse("HyperCubic(2)")

Z = 1.959963984540054  # two-sided 95%


# --- oracle helpers --------------------------------------------------------


def flood_components(n_vertices, edges, open_mask):
    adj = [[] for _ in range(n_vertices)]
    for k in np.flatnonzero(open_mask):
        u, v = int(edges[k, 0]), int(edges[k, 1])
        adj[u].append(v)
        adj[v].append(u)
    comp = np.full(n_vertices, -1, dtype=np.int64)
    nxt = 0
    for s in range(n_vertices):
        if comp[s] >= 0:
            continue
        comp[s] = nxt
        stack = [s]
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if comp[y] < 0:
                    comp[y] = nxt
                    stack.append(y)
        nxt += 1
    return comp


def line_indices(patch):
    """Vertex indices of the radius-2 path in end-to-end order."""
    d0 = distances_from(patch, 0)
    ends = np.flatnonzero(d0 == 2)
    left2 = int(ends[0])
    dl = distances_from(patch, left2)
    order = [int(np.flatnonzero(dl == k)[0]) for k in range(5)]
    assert order[2] == 0
    return order


def ghost_hit_probability(comp, marks_a, marks_b, h):
    """P(some marked A-vertex shares a component with a marked B one).

    Marks are independent across vertices and between the two fields,
    so condition on the components and multiply per component: the hit
    misses only if every component fails to collect a mark on both
    sides.
    """
    miss = 1.0
    for c in np.unique(comp):
        na = int(np.count_nonzero(comp[marks_a] == c))
        nb = int(np.count_nonzero(comp[marks_b] == c))
        alpha = 1.0 - (1.0 - h) ** na
        beta = 1.0 - (1.0 - h) ** nb
        miss *= 1.0 - alpha * beta
    return 1.0 - miss


# --- ghost field sampling --------------------------------------------------


def test_ghost_field_validates():
    with pytest.raises(ValueError):
        GhostField(np.array([1, 2, 3]), 0.5, np.array([2, 4]), 0)
    with pytest.raises(ValueError):
        GhostField(np.array([1, 2]), 1.5, np.array([1]), 0)
    with pytest.raises(ValueError):
        sample_ghost([0, 1], -0.1, 0)


def test_inclusion_rate_is_h():
    total, n = 0, 2000
    for r in range(n):
        total += len(sample_ghost(range(8), 0.3, seed=11, replica=r).included)
    rate = total / (8 * n)
    sigma = math.sqrt(0.3 * 0.7 / (8 * n))
    assert abs(rate - 0.3) <= 4 * sigma


def test_fields_couple_monotonically_in_h():
    for r in range(50):
        lo = sample_ghost(range(12), 0.2, seed=3, replica=r).included
        hi = sample_ghost(range(12), 0.6, seed=3, replica=r).included
        assert np.isin(lo, hi).all()


def test_disjoint_restrictions_independent():
    n = 10 ** 4
    table = np.zeros((2, 2), dtype=np.int64)
    for r in range(n):
        inc = sample_ghost(range(8), 0.3, seed=5, replica=r).included
        a = int((inc < 4).any())
        b = int((inc >= 4).any())
        table[a, b] += 1
    row = table.sum(axis=1)
    col = table.sum(axis=0)
    expected = np.outer(row, col) / n
    chi2 = ((table - expected) ** 2 / expected).sum()
    p_value = math.erfc(math.sqrt(chi2 / 2.0))
    assert p_value >= 0.01


# --- bits encoding ---------------------------------------------------------


def test_bits_encoding_pinned_example():
    enc = bits_encoding(0.5, 0.7, 0.25, 4)
    assert enc.m_E == 2
    assert enc.q1 == pytest.approx(1.0 - math.sqrt(0.5), abs=1e-12)
    assert enc.q2 == pytest.approx(1.0 - math.sqrt(0.3), abs=1e-12)
    assert enc.m_G == 1


def test_bits_encoding_rejects_bad_domains():
    with pytest.raises(ValueError):
        bits_encoding(0.5, 0.7, 0.25, 1)
    with pytest.raises(ValueError):
        bits_encoding(0.1, 0.7, 0.25, 4)
    with pytest.raises(ValueError):
        bits_encoding(0.7, 0.5, 0.25, 4)
    with pytest.raises(ValueError):
        bits_encoding(0.5, 0.7, 0.6, 4)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 12), st.floats(0.0, 1.0), st.floats(0.0, 1.0),
       st.floats(1e-4, 1.0))
def test_bits_encoding_identities(d, t1, t2, th):
    p1 = 1.0 / d + t1 * (0.98 - 1.0 / d)
    p2 = p1 + max(t2, 1e-3) * (0.995 - p1)
    h = th / d
    enc = bits_encoding(p1, p2, h, d)
    assert enc.m_E >= 1
    assert abs((1.0 - enc.q1) ** enc.m_E - (1.0 - p1)) < 1e-12
    assert abs((1.0 - enc.q2) ** enc.m_E - (1.0 - p2)) < 1e-12
    assert 1.0 / d - 1e-12 <= enc.q1 <= 2.0 / d + 1e-12
    assert enc.m_G >= 1
    assert enc.q1 ** enc.m_G >= h - 1e-12


# --- ghost connection ------------------------------------------------------


def test_ghost_connection_rejects_empty_support():
    with pytest.raises(ValueError):
        est_ghost_connection(Z1, 1, 0.5, [], [0], 0.3, replicas=10)


def test_ghost_connection_trivials():
    assert est_ghost_connection(Z1, 2, 0.5, [0, 1], [2], 0.0,
                                replicas=50).mean == 0.0
    # at full intensity and density every vertex is marked and joined
    full = est_ghost_connection(Z1, 2, 1.0, [0], [4], 1.0, replicas=50)
    assert full.mean == 1.0


def test_ghost_connection_matches_exact_oracle():
    patch = patch_for(Z1, 2)
    order = line_indices(patch)
    p, h = 0.6, 0.35
    A = np.array([order[1], order[3], order[4]])
    B = np.array([order[0], order[3]])
    exact = 0.0
    for bits in range(1 << patch.n_edges):
        mask = np.array([bits >> j & 1 for j in range(patch.n_edges)],
                        dtype=bool)
        comp = flood_components(patch.n_vertices, patch.edges, mask)
        w = p ** mask.sum() * (1.0 - p) ** (patch.n_edges - int(mask.sum()))
        exact += w * ghost_hit_probability(comp, A, B, h)
    est = est_ghost_connection(Z1, 2, p, A, B, h, replicas=4000, seed=7)
    assert abs(est.mean - exact) <= 3 * est.ci_halfwidth


def test_ghost_connection_region_matches_exact_oracle():
    patch = patch_for(Z1, 2)
    order = line_indices(patch)
    region = np.array(order[1:4])
    in_region = np.zeros(patch.n_vertices, dtype=bool)
    in_region[region] = True
    keep = in_region[patch.edges[:, 0]] & in_region[patch.edges[:, 1]]
    p, h = 0.7, 0.4
    A = np.array(order)  # full line; only the middle three can count
    B = np.array([order[2]])
    exact = 0.0
    for bits in range(1 << patch.n_edges):
        mask = np.array([bits >> j & 1 for j in range(patch.n_edges)],
                        dtype=bool)
        comp = flood_components(patch.n_vertices, patch.edges, mask & keep)
        w = p ** mask.sum() * (1.0 - p) ** (patch.n_edges - int(mask.sum()))
        exact += w * ghost_hit_probability(comp, A[in_region[A]], B, h)
    est = est_ghost_connection(Z1, 2, p, A, B, h, region=region,
                               replicas=4000, seed=8)
    assert abs(est.mean - exact) <= 3 * est.ci_halfwidth


def test_ghost_connection_monotone_in_p_h_region():
    patch = patch_for(Z2, 3)
    A = patch.sphere(2)
    B = [0]
    kw = dict(replicas=250, seed=4)
    by_p = [est_ghost_connection(Z2, 3, p, A, B, 0.3, **kw).mean
            for p in (0.35, 0.5, 0.65)]
    assert by_p[0] <= by_p[1] <= by_p[2]
    by_h = [est_ghost_connection(Z2, 3, 0.5, A, B, h, **kw).mean
            for h in (0.1, 0.25, 0.5)]
    assert by_h[0] <= by_h[1] <= by_h[2]
    inner = np.flatnonzero(distances_from(patch, 0) <= 2)
    small = est_ghost_connection(Z2, 3, 0.5, A, B, 0.3, region=inner, **kw)
    assert small.mean <= by_p[1]


# --- pivotal influence and Russo -------------------------------------------


def test_bridge_edge_always_pivotal():
    patch = patch_for(Z1, 1)
    v = int(np.flatnonzero(distances_from(patch, 0) == 1)[0])
    pi = est_pivotal_influence(Z1, 1, 0.37, 0.0, ("point_connection", 0, v),
                               replicas=200, seed=0)
    assert pi.per_edge.max() == 1.0
    assert pi.russo.mean == 1.0
    assert pi.russo.ci_halfwidth == 0.0


def test_full_density_two_connected_all_zero():
    patch = patch_for(Z2, 2)
    indptr = patch.csr()[0]
    deg = np.diff(indptr)
    d0 = distances_from(patch, 0)
    v = int(np.flatnonzero((d0 == 2) & (deg >= 2))[0])
    pi = est_pivotal_influence(Z2, 2, 1.0, 0.0, ("point_connection", 0, v),
                               replicas=50, seed=0)
    assert pi.per_edge.max() == 0.0
    assert pi.russo.mean == 0.0


def test_russo_matches_finite_difference_on_path():
    patch = patch_for(Z1, 2)
    order = line_indices(patch)
    u, v = order[1], order[4]  # distance 3, one edge irrelevant
    p, eps = 0.45, 0.01

    def connect_prob(q):
        total = 0.0
        for bits in range(1 << patch.n_edges):
            mask = np.array([bits >> j & 1 for j in range(patch.n_edges)],
                            dtype=bool)
            comp = flood_components(patch.n_vertices, patch.edges, mask)
            if comp[u] == comp[v]:
                total += (q ** mask.sum()
                          * (1.0 - q) ** (patch.n_edges - int(mask.sum())))
        return total

    assert connect_prob(p) == pytest.approx(p ** 3, abs=1e-12)
    fd = (connect_prob(p + eps) - connect_prob(p - eps)) / (2 * eps)
    assert fd == pytest.approx(3 * p ** 2 + eps ** 2, abs=1e-10)
    pi = est_pivotal_influence(Z1, 2, p, 0.0, ("point_connection", u, v),
                               replicas=3000, seed=1)
    assert abs(pi.russo.mean - fd) <= 3 * pi.russo.ci_halfwidth + 1e-3


def test_ghost_event_pivotality_bounded():
    pi = est_pivotal_influence(Z1, 2, 0.5, 0.4,
                               ("ghost_connection", [0], [3, 4]),
                               replicas=300, seed=2)
    assert 0.0 <= pi.per_edge.min() and pi.per_edge.max() <= 1.0
    assert pi.russo.mean >= 0.0


def test_event_spec_rejected():
    with pytest.raises(ValueError):
        est_pivotal_influence(Z1, 1, 0.5, 0.0, ("unknown_event", 0, 1),
                              replicas=10)
    with pytest.raises(ValueError):
        est_pivotal_influence(Z1, 1, 0.5, 0.0, "point_connection",
                              replicas=10)


# --- coupled two-ghost check -----------------------------------------------


def test_two_ghost_coupled_trivials():
    lhs, _ = two_ghost_coupled_check(Z2, 3, 1.0, 0.25, replicas=50, seed=0)
    assert lhs.mean == 0.0
    lhs, _ = two_ghost_coupled_check(Z2, 3, 0.5, 0.0, replicas=50, seed=0)
    assert lhs.mean == 0.0


def test_two_ghost_coupled_scaling():
    # near-critical clusters must not be clipped by the patch boundary,
    # or the small-h probability degenerates to the h^2 regime and the
    # fitted slope drifts toward 2; radius 96 is deep enough
    lhs, rhs = two_ghost_coupled_check(Z2, 96, 0.5, 1.0 / 16.0,
                                       replicas=2000, seed=0)
    slope = lhs.extra["slope"]
    assert slope <= 0.6
    assert slope >= 0.4
    assert lhs.extra["C"] > 0.0
    assert rhs > 0.0
    sweep = lhs.extra["sweep"]
    hs = sorted(sweep)
    assert sweep[hs[0]] <= sweep[hs[1]] <= sweep[hs[2]]
    assert lhs.mean == sweep[1.0 / 16.0]


# --- gluing ----------------------------------------------------------------


def test_gluing_radius_pinned():
    assert gluing_radius(Z2, 12, 0.52, 0.58, 0.25, seed=0) == 28


def test_gluing_radius_outgrows_patch():
    with pytest.raises(ValueError):
        gluing_radius(Z2, 1, 0.3, 0.3, 0.9)


def test_gluing_event_trivials():
    patch = patch_for(Z1, 2)
    order = line_indices(patch)
    A = [order[1], order[3]]
    X, Y, region = [order[0]], [order[3]], order[1:4]
    zero = gluing_event_prob(Z1, 2, 0.6, 1.0, 0.4, A, X, Y, region=region,
                             replicas=100, seed=0, r=1)
    assert zero.mean == 0.0  # at p2 = 1 the non-connection clause fails
    zero = gluing_event_prob(Z1, 2, 0.5, 0.75, 0.0, A, X, Y, region=region,
                             replicas=100, seed=0, r=1)
    assert zero.mean == 0.0


def test_gluing_event_matches_exact_oracle():
    patch = patch_for(Z1, 2)
    order = line_indices(patch)
    A = np.array([order[1], order[3]])
    X, Y = np.array([order[0]]), np.array([order[3]])
    region = np.array(order[1:4])
    p1, p2, h = 0.5, 0.75, 0.35
    in_region = np.zeros(patch.n_vertices, dtype=bool)
    in_region[region] = True
    keep1 = in_region[patch.edges[:, 0]] & in_region[patch.edges[:, 1]]
    E = patch.n_edges
    weights = (1.0 - p2, p2 - p1, p1)  # closed, upper only, both
    exact = 0.0
    for code in range(3 ** E):
        states = np.array([code // 3 ** j % 3 for j in range(E)])
        w = math.prod(weights[s] for s in states)
        comp2 = flood_components(patch.n_vertices, patch.edges, states >= 1)
        comp1 = flood_components(patch.n_vertices, patch.edges,
                                 (states == 2) & keep1)
        if comp2[X[0]] == comp2[Y[0]]:
            continue
        for mbits in range(1 << len(A)):
            marked = A[[mbits >> j & 1 == 1 for j in range(len(A))]]
            wm = h ** len(marked) * (1.0 - h) ** (len(A) - len(marked))
            hit2 = (comp2[marked] == comp2[X[0]]).any() if len(marked) else 0
            m_in = marked[in_region[marked]]
            hit1 = (comp1[m_in] == comp1[Y[0]]).any() if len(m_in) else 0
            if hit2 and hit1:
                exact += w * wm
    est = gluing_event_prob(Z1, 2, p1, p2, h, A, X, Y, region=region,
                            replicas=3000, seed=3, r=1)
    assert est.extra["r"] == 1
    assert abs(est.mean - exact) <= 3 * est.ci_halfwidth


# --- snowballing -----------------------------------------------------------


def test_snowball_single_center():
    lhs, rhs = snowball_chain(Z2, 4, 0.45, 0.6, [0], 2, 0.2,
                              replicas=300, seed=2)
    tau = lhs.extra["tau_p1_first"]
    assert lhs.extra["tau_p1_last"] == tau
    assert rhs == pytest.approx(tau * tau, abs=1e-12)
    assert lhs.mean >= tau  # coarser components at p2, same labels
    assert lhs.extra["ratio"] >= 1.0


def test_snowball_full_density():
    lhs, rhs = snowball_chain(Z2, 4, 0.5, 1.0, [0], 2, 0.2,
                              replicas=100, seed=0)
    assert lhs.mean == 1.0
    assert lhs.mean >= rhs


def test_snowball_geodesic_chain_regression():
    patch = patch_for(Z2, 26)
    d0 = distances_from(patch, 0)
    centers = [0]
    for i in range(1, 5):
        dprev = distances_from(patch, centers[-1])
        centers.append(int(np.flatnonzero((dprev == 6) & (d0 == 6 * i))[0]))
    lhs, rhs = snowball_chain(Z2, 26, 0.55, 0.6, centers, 3, 0.25,
                              replicas=600, seed=0)
    assert lhs.extra["ratio"] >= 0.1
    assert lhs.extra["ratio"] == pytest.approx(2.097528606, abs=1e-6)
    assert lhs.extra["delta"] == pytest.approx(0.1376, abs=5e-4)
    assert len(lhs.extra["consecutive_union_taus"]) == 4


def test_snowball_rejects_distant_centers():
    patch = patch_for(Z2, 5)
    v = int(np.flatnonzero(distances_from(patch, 0) == 4)[0])
    with pytest.raises(ValueError):
        snowball_chain(Z2, 5, 0.5, 0.6, [0, v], 1, 0.2, replicas=10)
