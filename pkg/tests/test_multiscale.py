"""Schedule identities against closed forms at strict tolerance, the limit
density against a term-by-term chain, zone and separated-set procedures
against trivial densities and fixed-seed regressions, the union bound
against a hand-computable path graph, and the peel merge rule against a
literal set-of-frozensets re-implementation."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perclab import (
    GraphFamily,
    HammingReport,
    PeelTrace,
    Schedule,
    Verdict,
    build_patch,
    connection_threshold,
    eval_corridor,
    eval_full_space,
    hamming_bound_check,
    make_schedule,
    orange_peel_trace,
    p_infinity,
    two_point_zone,
    well_separated_set,
)
from perclab.estimators import est_corridor, patch_for, wilson_interval
from perclab.multiscale import LOG9, _pair_sample
from perclab.percolation import delta, sample_labels, sprinkle

Z2 = GraphFamily("HyperCubic", 2)
LINE = GraphFamily("HyperCubic", 1)

# n0 closest to exp(exp(e)), where log log n0 is e up to rounding of n0.
E_TOWER = round(math.exp(math.exp(math.e)))


@pytest.fixture(scope="module")
def z2_8():
    return build_patch(Z2, 8)


@pytest.fixture(scope="module")
def z2_10():
    return build_patch(Z2, 10)


@pytest.fixture(scope="module")
def z2_12():
    return build_patch(Z2, 12)


def coord_index(patch):
    return {tuple(c): i for i, c in enumerate(patch.coords)}


# --- schedules -------------------------------------------------------------


def test_schedule_triple_log_progression_exact():
    s = make_schedule(16, 0.3, 2.0, 0.125, 40)
    base = math.log(math.log(math.log(16)))
    for i in range(41):
        assert abs(s.logloglog_n[i] - (base + i * LOG9)) <= 1e-12
    assert s.logloglog_n[1] == pytest.approx(2.2168129076903185, abs=1e-12)
    # the first rung is the base triple log plus log 9
    assert s.logloglog_n[1] == pytest.approx(0.0196 + 2.1972, abs=5e-4)
    assert s.i_max == 40


def test_schedule_budget_geometric():
    s = make_schedule(16, 0.3, 2.0, 0.125, 30)
    x = 1.0 / math.sqrt(math.log(math.log(16)))
    assert abs(s.delta[0] - (x + 2.0 * 0.125)) <= 1e-15
    for i in range(1, 30):
        assert s.delta[i] / s.delta[i + 1] == pytest.approx(3.0, abs=1e-12)


def test_schedule_e_tower_burnin():
    s = make_schedule(E_TOWER, 0.4, 3.0, 0.2, 5)
    assert abs(s.delta[0] - (math.exp(-0.5) + 3.0 * 0.2)) < 1e-5


def test_schedule_density_chain_and_monotone():
    s = make_schedule(16, 0.3, 1.0, 0.1, 25)
    for i in range(25):
        assert abs(s.p[i + 1] - sprinkle(float(s.p[i]),
                                         float(s.delta[i]))) <= 1e-15
        assert s.p[i + 1] > s.p[i]
    assert s.p[-1] < 1.0


def test_schedule_constructor_rejects_tampering():
    s = make_schedule(16, 0.3, 2.0, 0.125, 10)
    Schedule(s.n0, s.K, s.burnin_value, s.logloglog_n, s.delta, s.p)
    for field in ("logloglog_n", "delta", "p"):
        bent = {"logloglog_n": s.logloglog_n.copy(),
                "delta": s.delta.copy(), "p": s.p.copy()}
        bent[field][4] += 1e-9
        with pytest.raises(ValueError):
            Schedule(s.n0, s.K, s.burnin_value, bent["logloglog_n"],
                     bent["delta"], bent["p"])
    with pytest.raises(ValueError):
        make_schedule(15, 0.3, 1.0, 0.0, 5)
    with pytest.raises(ValueError):
        Schedule(15, s.K, s.burnin_value, s.logloglog_n, s.delta, s.p)
    with pytest.raises(ValueError):
        make_schedule(16, 0.0, 1.0, 0.0, 5)
    with pytest.raises(ValueError):
        make_schedule(16, 1.0, 1.0, 0.0, 5)
    with pytest.raises(ValueError):
        make_schedule(16, 0.3, 1.0, 0.0, -1)


def test_schedule_json_export_round_trips():
    s = make_schedule(20, 0.45, 0.5, 0.3, 8)
    d = json.loads(s.to_json())
    assert set(d) == {"n0", "K", "burnin_value", "logloglog_n", "delta", "p"}
    back = Schedule(d["n0"], d["K"], d["burnin_value"],
                    d["logloglog_n"], d["delta"], d["p"])
    assert back.i_max == 8
    assert np.array_equal(back.p, s.p)


@given(st.integers(16, 10 ** 6), st.floats(0.01, 0.99),
       st.floats(0.0, 3.0), st.floats(0.0, 0.5), st.integers(0, 25))
@settings(max_examples=80, deadline=None)
def test_schedule_random_schedules_validate(n0, p0, K, b, i_max):
    s = make_schedule(n0, p0, K, b, i_max)
    pinf = p_infinity(s)
    assert pinf >= s.p[-1] - 1e-15
    x = 1.0 / math.sqrt(math.log(math.log(n0)))
    assert pinf <= sprinkle(p0, 2.0 * x + K * b) + 1e-12


# --- the limit density -----------------------------------------------------


def test_p_infinity_matches_deep_chain():
    s = make_schedule(16, 0.3, 1.5, 0.25, 60)
    q = 0.3
    for i in range(60):
        q = sprinkle(q, float(s.delta[i]))
    assert q == s.p[-1]
    assert abs(p_infinity(s) - s.p[-1]) <= 1e-12
    assert all(p_infinity(s) >= s.p[i] - 1e-12 for i in range(61))


def test_p_infinity_closed_form_cases():
    a = make_schedule(16, 0.3, 0.0, 0.1, 5)
    b = make_schedule(16, 0.3, 0.0, 0.9, 5)
    assert p_infinity(a) == p_infinity(b)
    s = make_schedule(E_TOWER, 0.4, 0.0, 0.0, 3)
    assert abs(p_infinity(s) - sprinkle(0.4, 1.5 * math.exp(-0.5))) < 1e-5


# --- the per-scale floor ---------------------------------------------------


def test_connection_threshold_values():
    assert connection_threshold(1) == 1.0
    assert connection_threshold(2) == 1.0
    assert connection_threshold(3) == pytest.approx(
        0.7358917994636855, rel=1e-12)
    assert connection_threshold(8) == pytest.approx(
        0.4250161738107531, rel=1e-12)
    assert connection_threshold(10 ** 6) == pytest.approx(
        0.19781371068699002, rel=1e-12)
    vals = [connection_threshold(n) for n in (3, 8, 100, 10 ** 6)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        connection_threshold(0)


# --- ball-wide connection checks -------------------------------------------


def test_full_space_density_extremes():
    v1 = eval_full_space(Z2, 8, 3, 1.0, 50, 0)
    assert v1.holds and v1.decisive and bool(v1)
    assert v1.estimate.mean == 1.0
    v0 = eval_full_space(Z2, 8, 3, 0.0, 50, 0)
    assert not v0.holds and v0.decisive and not bool(v0)
    assert v0.estimate.mean == 0.0
    assert v0.margin == -v0.threshold


def test_full_space_pair_accounting(z2_8):
    v = eval_full_space(Z2, 6, 1, 0.5, 30, 0)
    assert v.estimate.extra["pairs"] == 10  # all pairs of the 5-ball
    big = eval_full_space(Z2, 6, 6, 0.5, 30, 0)
    assert big.estimate.extra["pairs"] >= 10
    ball = set(int(x) for x in build_patch(Z2, 6).ball(6))
    a, b = big.estimate.extra["pair"]
    assert a in ball and b in ball


def test_full_space_sampler_is_deterministic(z2_10):
    verts = z2_10.ball(8)
    assert _pair_sample(z2_10, verts) == _pair_sample(z2_10, verts)
    assert len(_pair_sample(z2_10, verts[:2])) == 1
    assert _pair_sample(z2_10, verts[:1]) == []


def test_full_space_verdict_stable_across_seeds():
    verdicts = [eval_full_space(Z2, 10, 8, 0.6, 300, s) for s in range(5)]
    assert all(v.holds for v in verdicts)
    assert all(v.decisive for v in verdicts)
    for v in verdicts:
        assert v.margin == pytest.approx(
            v.estimate.mean - v.threshold, abs=1e-15)
        assert v.threshold == connection_threshold(8)


def test_full_space_rejects():
    with pytest.raises(ValueError):
        eval_full_space(Z2, 6, 8, 0.5, 10, 0)
    with pytest.raises(ValueError):
        eval_full_space(Z2, 6, 0, 0.5, 10, 0)
    with pytest.raises(ValueError):
        eval_full_space(Z2, 6, 3, 1.5, 10, 0)
    with pytest.raises(ValueError):
        eval_full_space(Z2, 6, 3, 0.5, 0, 0)


# --- corridor checks at low-growth scales ----------------------------------


def test_corridor_empty_scale_set_is_vacuous():
    assert eval_corridor(Z2, 1, 8, 0.55, 2.0, 3, 50, 0) == {}


def test_corridor_full_density_holds():
    out = eval_corridor(Z2, 9, 10, 1.0, 13.0, 3, 40, 0)
    assert sorted(out) == [9, 10]
    for v in out.values():
        assert v.holds and v.estimate.mean == 1.0
        assert "cap" in v.caveat


def test_corridor_matches_direct_estimates():
    out = eval_corridor(Z2, 9, 10, 0.55, 13.0, 3, 200, 7)
    assert sorted(out) == [9, 10]
    for m, v in out.items():
        direct = est_corridor(Z2, 0.55, 3, n=m, replicas=200, seed=7)
        assert v.estimate.mean == direct.mean
        assert v.threshold == connection_threshold(10)


def test_corridor_scale_window():
    out = eval_corridor(Z2, 10, 10, 1.0, 13.0, 2, 20, 0)
    assert sorted(out) == [10]


# --- the two-point zone ----------------------------------------------------


def test_zone_density_extremes():
    assert two_point_zone(Z2, 8, 1.0, 6, 10 ** 6, 100, 0) == 6
    assert two_point_zone(Z2, 8, 0.0, 6, 10 ** 6, 100, 0) == 0


def test_zone_monotone_in_density_on_shared_labels():
    zones = [two_point_zone(Z2, 8, p, 6, 10 ** 6, 300, 3)
             for p in (0.5, 0.55, 0.6)]
    assert zones == [5, 6, 6]
    assert all(a <= b for a, b in zip(zones, zones[1:]))


def test_zone_grows_with_looser_threshold_scale():
    near = two_point_zone(Z2, 8, 0.55, 6, 10 ** 3, 300, 3)
    far = two_point_zone(Z2, 8, 0.55, 6, 10 ** 12, 300, 3)
    assert (near, far) == (5, 6)
    assert near <= far


def test_zone_rejects():
    with pytest.raises(ValueError):
        two_point_zone(Z2, 6, 0.5, 8, 10 ** 6, 10, 0)
    with pytest.raises(ValueError):
        two_point_zone(Z2, 6, 0.5, 4, 2, 10, 0)
    with pytest.raises(ValueError):
        two_point_zone(Z2, 6, -0.1, 4, 10 ** 6, 10, 0)


# --- well-separated sets ---------------------------------------------------


def test_separated_full_density_keeps_endpoints_only(z2_8):
    u = int(z2_8.root)
    v = int(z2_8.sphere(4)[0])
    out = well_separated_set(Z2, 8, 1.0, 8, 10 ** 6, 1.0, u, v, 60, 0)
    assert list(out) == [u, v]


def test_separated_zero_density_gates_on_the_zone(z2_8):
    root = int(z2_8.root)
    out = well_separated_set(Z2, 8, 0.0, 8, 10 ** 6, 1.0, root, root, 40, 0)
    assert list(out) == [root]
    with pytest.raises(ValueError):
        well_separated_set(Z2, 8, 0.0, 8, 10 ** 6, 1.0, root,
                           int(z2_8.sphere(1)[0]), 40, 0)


def test_separated_emits_everything_at_weak_density(z2_10):
    # At p = 0.35 the zone reaches radius 2 while every geodesic link is
    # below the loose drop threshold, so the whole geodesic is emitted.
    ix = coord_index(z2_10)
    u, v = ix[(0, 0)], ix[(2, 0)]
    out = well_separated_set(Z2, 10, 0.35, 10, 10 ** 9, 0.2, u, v, 800, 5)
    assert [tuple(z2_10.coords[i]) for i in out] == [(0, 0), (1, 0), (2, 0)]


def test_separated_links_recheck_below_threshold_fresh_seed(z2_10):
    ix = coord_index(z2_10)
    u, v = ix[(0, 0)], ix[(2, 0)]
    out = well_separated_set(Z2, 10, 0.35, 10, 10 ** 9, 0.2, u, v, 800, 5)
    thr = math.log(10 ** 9) ** -0.2
    from perclab.estimators import _components_for
    mask = np.zeros(z2_10.n_vertices, dtype=bool)
    mask[z2_10.ball(5)] = True
    reps = 400
    rows = np.empty((reps, z2_10.n_vertices), dtype=np.int64)
    for i in range(reps):
        rows[i] = _components_for(
            z2_10, sample_labels(z2_10, 91, i).labels, 0.35,
            region_mask=mask)
    for a, b in zip(out, out[1:]):
        k = int((rows[:, a] == rows[:, b]).sum())
        assert wilson_interval(k, reps)[1] <= thr


def test_separated_is_deterministic(z2_8):
    u = int(z2_8.root)
    v = int(z2_8.sphere(3)[0])
    args = (Z2, 8, 0.45, 8, 10 ** 6, 0.3, u, v, 200, 9)
    assert np.array_equal(well_separated_set(*args),
                          well_separated_set(*args))


def test_separated_rejects_out_of_range():
    with pytest.raises(ValueError):
        well_separated_set(Z2, 8, 0.5, 8, 10 ** 6, 1.0, 0, 10 ** 6, 20, 0)


# --- the sprinkled union bound ---------------------------------------------


def test_hamming_q1_saturates_and_unpacks(z2_8):
    root = int(z2_8.root)
    nbr = int(z2_8.sphere(1)[0])
    rep = hamming_bound_check(Z2, 8, 0.3, 1.0, [root, nbr],
                              z2_8.sphere(4), 200, 0)
    lhs, rhs = rep
    assert lhs.mean == 1.0
    assert rhs == 1.0 and rep.theta > 0.0
    assert math.isinf(rep.sprinkle_gap)
    assert rep.ok
    single = hamming_bound_check(Z2, 8, 0.3, 1.0, [root],
                                 z2_8.sphere(4), 200, 0)
    assert single.theta == 0.0 and single.rhs == 0.0
    assert single.max_pair.method == "exact_enumeration"


def test_hamming_rhs_formula_recheck(z2_8):
    A = [int(z2_8.root), int(z2_8.sphere(3)[0]), int(z2_8.sphere(3)[-1])]
    rep = hamming_bound_check(Z2, 8, 0.4, 0.55, A, z2_8.sphere(5), 500, 2)
    gap = delta(0.4, 0.55)
    assert rep.sprinkle_gap == gap
    want = -math.expm1(-gap * rep.theta * 3) if rep.theta > 0 else 0.0
    assert rep.rhs == pytest.approx(want, abs=1e-15)
    assert rep.hypothesis_met == (
        2 * 3 * rep.max_pair.mean <= rep.min_to_target.mean)
    assert rep.theta == min(rep.min_to_target.mean, 6 * rep.max_pair.mean)


def test_hamming_vanishing_gap_vanishing_floor(z2_8):
    rep = hamming_bound_check(Z2, 8, 0.5, 0.5 + 1e-9,
                              [int(z2_8.root)], z2_8.sphere(4), 200, 0)
    assert rep.rhs <= 1e-6
    assert rep.ok


def test_hamming_square_lattice_example_passes(z2_12):
    ix = coord_index(z2_12)
    A = [ix[c] for c in [(6, 0), (0, 6), (-6, 0), (0, -6), (3, 3), (-3, -3)]]
    rep = hamming_bound_check(Z2, 12, 0.55, 0.6, A, z2_12.sphere(10),
                              2000, 11)
    assert rep.ok
    assert rep.lhs.mean == 1.0
    assert rep.lhs.mean >= rep.rhs
    # at these supercritical densities the pairwise ceiling genuinely
    # fails, so the floor is reported but not certified
    assert not rep.hypothesis_met
    assert rep.rhs == pytest.approx(0.524698852593039, rel=1e-9)


def test_hamming_met_hypothesis_with_targets_inside(z2_8):
    ix = coord_index(z2_8)
    A = [ix[(1, 0)], ix[(-1, 0)]]
    rep = hamming_bound_check(Z2, 8, 0.3, 0.6, A, z2_8.sphere(1), 400, 4)
    assert rep.min_to_target.mean == 1.0  # both vertices sit in the target
    assert rep.hypothesis_met
    assert rep.rhs > 0.3
    assert rep.ok


def test_hamming_line_graph_against_hand_probabilities():
    # Path of three edges on each side of the root: the root joins the
    # two ends exactly when one arm is fully open, so the connection
    # probability is 1 - (1 - q^3)^2.
    line = build_patch(LINE, 3)
    root = int(line.root)
    ends = line.sphere(3)
    rep = hamming_bound_check(LINE, 3, 0.5, 0.7, [root], ends, 4000, 1)
    exact_q = 1.0 - (1.0 - 0.7 ** 3) ** 2
    exact_p = 1.0 - (1.0 - 0.5 ** 3) ** 2
    assert abs(rep.lhs.mean - exact_q) <= 3 * rep.lhs.ci_halfwidth
    assert abs(rep.min_to_target.mean
               - exact_p) <= 3 * rep.min_to_target.ci_halfwidth


def test_hamming_rejects(z2_8):
    root = int(z2_8.root)
    B = z2_8.sphere(3)
    with pytest.raises(ValueError):
        hamming_bound_check(Z2, 8, 0.6, 0.5, [root], B, 10, 0)
    with pytest.raises(ValueError):
        hamming_bound_check(Z2, 8, 0.0, 0.5, [root], B, 10, 0)
    with pytest.raises(ValueError):
        hamming_bound_check(Z2, 8, 0.3, 0.5, [], B, 10, 0)
    with pytest.raises(ValueError):
        hamming_bound_check(Z2, 8, 0.3, 0.5, [root, root], B, 10, 0)
    with pytest.raises(ValueError):
        hamming_bound_check(Z2, 8, 0.3, 0.5, [10 ** 6], B, 10, 0)


# --- the shrinking-shell merge trace ---------------------------------------


def peel_oracle(patch, m, p_start, D, seed, n_effective):
    """Literal re-implementation with frozensets and explicit subset checks."""
    lg = math.log(n_effective)
    k = 2 * int(math.floor(lg ** D))
    eps = lg ** (-(D + 1.0))
    R0 = m // 8
    region = set(int(x) for x in patch.ball(R0))
    labels = sample_labels(patch, seed).labels
    edges = [(int(a), int(b), float(l)) for (a, b), l in
             zip(patch.edges, labels)
             if int(a) in region and int(b) in region]

    def clusters_at(q):
        adj = {}
        for a, b, l in edges:
            if l <= q:
                adj.setdefault(a, []).append(b)
                adj.setdefault(b, []).append(a)
        seen, out = set(), []
        for start in adj:
            if start in seen:
                continue
            comp, stack = set(), [start]
            while stack:
                x = stack.pop()
                if x in comp:
                    continue
                comp.add(x)
                stack.extend(y for y in adj[x] if y not in comp)
            seen |= comp
            out.append(frozenset(comp))
        return out

    def sphere_at(s):
        return set(int(x) for x in patch.ball(R0)
                   if patch.dist[x] == s)

    sizes = []
    fam = None
    for i in range(k + 1):
        r = m / 8.0 - (i * m / 40.0) * lg ** (-D)
        if r < 1.0:
            break
        q = p_start if p_start in (0.0, 1.0) else sprinkle(p_start, i * eps)
        s = min(int(math.ceil(r - 1e-9)), R0)
        shell = sphere_at(s)
        cl = clusters_at(q)
        if fam is None:
            fam = [c for c in cl if c & shell]
        else:
            fam = [c for c in cl
                   if any(old <= c and old & shell for old in fam)]
        sizes.append(len(fam))
    return sizes


def test_peel_full_density_is_one_cluster():
    for seed in range(5):
        t = orange_peel_trace(Z2, 8, 64, 1.0, 1.0, 1.0, seed)
        assert set(t) == {1}
        assert len(t) == 25 and not t.truncated


def test_peel_zero_density_is_all_zeros():
    t = orange_peel_trace(Z2, 8, 64, 0.0, 0.0, 1.0, 3)
    assert set(t) == {0}
    assert len(t) == 25 and not t.truncated


def test_peel_trace_geometry_and_regression():
    t = orange_peel_trace(Z2, 8, 64, 0.55, 0.65, 1.0, 7)
    assert list(t) == [8, 8, 8, 8, 8, 7, 7, 7, 7, 7, 7, 7, 7, 7, 7, 7,
                       2, 2, 2, 2, 2, 2, 2, 2, 2]
    assert t.k == 24
    assert t.eps == pytest.approx(math.log(64 ** 3) ** -2.0, rel=1e-12)
    assert all(4.0 <= r <= 8.0 for r in t.radii)  # within [m/16, m/8]
    assert all(a >= b for a, b in zip(t.radii, t.radii[1:]))
    assert all(a >= b for a, b in zip(t.spheres, t.spheres[1:]))
    assert all(5 <= s <= 8 for s in t.spheres)
    assert t.densities[0] == 0.55
    assert t.densities[-1] == pytest.approx(0.6060831435770587, rel=1e-12)
    assert all(a <= b for a, b in zip(t.densities, t.densities[1:]))
    step, r0, q0, s0 = t.rows()[0]
    assert (step, r0, q0, s0) == (0, 8.0, 0.55, 8)
    assert "PeelTrace" in repr(t)


def test_peel_matches_frozenset_oracle(z2_8):
    for seed in (0, 7):
        t = orange_peel_trace(Z2, 8, 64, 0.55, 0.65, 1.0, seed)
        assert list(t) == peel_oracle(z2_8, 64, 0.55, 1.0, seed, 64 ** 3)


def test_peel_merge_frequency_regression():
    # Locked configuration: the budget-maximizing effective n for the
    # 0.55 -> 0.65 window with a fine step grid.  The fraction reaching
    # a single surviving family was recorded at first build.
    finals = [orange_peel_trace(Z2, 8, 64, 0.55, 0.65, 2.0, s,
                                n_effective=1500)[-1]
              for s in range(100)]
    assert sum(1 for f in finals if f <= 1) == 78
    assert all(f <= 5 for f in finals)


def test_peel_truncates_at_degenerate_radii():
    t = orange_peel_trace(Z2, 8, 8, 0.5, 0.7, 1.0, 0)
    assert t.truncated
    assert len(t) == 1
    assert t.radii == [1.0]
    assert list(t) == [1]


def test_peel_budget_guard():
    with pytest.raises(ValueError):
        orange_peel_trace(Z2, 8, 64, 0.55, 0.60, 1.0, 0)


def test_peel_nonincreasing_and_trace_contract():
    for seed in range(20):
        t = orange_peel_trace(Z2, 8, 64, 0.55, 0.65, 1.0, seed)
        assert all(a >= b for a, b in zip(t, list(t)[1:]))
    with pytest.raises(RuntimeError):
        PeelTrace([1, 2], [8.0, 7.0], [8, 7], [0.5, 0.6], 1, 0.1,
                  100, False, 0)
    with pytest.raises(ValueError):
        PeelTrace([1], [8.0, 7.0], [8], [0.5], 1, 0.1, 100, False, 0)


def test_peel_rejects():
    with pytest.raises(ValueError):
        orange_peel_trace(Z2, 8, 7, 0.5, 0.6, 1.0, 0)
    with pytest.raises(ValueError):
        orange_peel_trace(Z2, 4, 64, 0.5, 0.6, 1.0, 0)
    with pytest.raises(ValueError):
        orange_peel_trace(Z2, 8, 64, 0.6, 0.5, 1.0, 0)
    with pytest.raises(ValueError):
        orange_peel_trace(Z2, 8, 64, 0.5, 0.6, 1.0, 0, n_effective=2)
