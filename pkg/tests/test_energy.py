import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import gadget_cut_min, random_energy
from oracles import exhaustive_energy_min, gadget_min, pn_closed_form as closed_form

from avsep.energy import (
    ARTERY, ARTERY_LABEL, VEIN, VEIN_LABEL, Clique, EnergyParams, assemble, build_energy,
    decode, neighbor_pairs, pair_weight, pairwise_weights, pn_potts_gadget, robust_pn_value,
    to_label_volume, unary_costs,
)
from avsep.maxflow import INF_CAP, FlowGraph
from avsep.volume import Volume


# ------------------------------------------------------------------ clique

def test_clique_validation():
    with pytest.raises(ValueError):
        Clique([1, 2])
    with pytest.raises(ValueError):
        Clique([1, 2, 2])
    with pytest.raises(ValueError):
        Clique([1, 2, 3], w_artery=-1)
    with pytest.raises(ValueError):
        Clique([1, 2, 3], n_tol=4)


def test_robust_pn_examples():
    assert robust_pn_value([1, 1, 1, 1], 0, 2, 1) == 0
    assert robust_pn_value([1, 1, 1, 0], 0, 3, 3) == pytest.approx(1.0)
    assert robust_pn_value([1, 0, 0, 0], 0, 3, 3) == 3
    assert robust_pn_value([0, 0, 0, 0], 0, 3, 3) == 3


# ----------------------------------------------------------------- gadgets

def test_gadget_matches_closed_form_exhaustively():
    rng = np.random.default_rng(20)
    for _ in range(60):
        n = int(rng.integers(3, 11))
        n_tol = int(rng.choice([1, 3]))
        wa, wv = rng.uniform(0, 5, 2)
        for x in itertools.product((0, 1), repeat=n):
            ref = closed_form(x, wa, wv, n_tol)
            assert abs(gadget_cut_min(x, wa, wv, n_tol) - ref) <= 1e-9
            assert abs(gadget_min(x, wa, wv, n_tol) - ref) <= 1e-9
            assert abs(robust_pn_value(x, wa, wv, n_tol) - ref) <= 1e-9


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=3, max_size=8),
       st.floats(0, 5), st.floats(0, 5), st.integers(1, 3))
def test_gadget_property(x, wa, wv, n_tol):
    assert abs(gadget_cut_min(x, wa, wv, n_tol) - closed_form(x, wa, wv, n_tol)) <= 1e-9


def test_gadget_zero_weight_adds_nothing_and_rejects_negative():
    g = FlowGraph(3)
    assert pn_potts_gadget(g, [0, 1, 2], 0.0, 0.0, 1) == 0
    assert g.n_nodes == 3
    assert pn_potts_gadget(g, [0, 1, 2], 1.0, 0.0, 1) == 1
    with pytest.raises(ValueError):
        pn_potts_gadget(g, [0, 1, 2], -0.1, 0.0, 1)


# ------------------------------------------------------------------- unary

def test_unary_examples():
    params = EnergyParams()
    pa, pv = np.array([0.0, 0, 0]), np.array([100.0, 0, 0])
    assert unary_costs([pa], (pa, pv), params)[0].tolist() == [0, INF_CAP]
    assert unary_costs([[50, 50, 0]], (pa, pv), params)[0].tolist() == [0, 0]
    c = unary_costs([[95, 0, 0]], ([65, 0, 0], pv), params)[0]
    assert c.tolist() == [INF_CAP, 0]


# ---------------------------------------------------------------- pairwise

def test_pair_weight_examples():
    assert pair_weight(0, 0, 1) == pytest.approx(1.01 * 1.1)
    assert pair_weight(1e6, 0, 1) == pytest.approx(0.01 * 1.1)
    for g, h in [(0, 0), (30, 0.2), (80, 0.9)]:
        assert pair_weight(g, h, 8) == pytest.approx(pair_weight(g, h, 4) / 4)
    assert pair_weight(0, 0, 0.1) == pair_weight(0, 0, 1)   # floor at 1 mm


def test_pairwise_uses_rounded_midpoint_plateness():
    vol = Volume(np.zeros((4, 4, 4), np.float32), (1.0,) * 3)
    plate = np.zeros((4, 4, 4), np.float32)
    plate[2, 1, 1] = 0.3
    pw = pairwise_weights([vol.index(1, 1, 1)], [vol.index(2, 1, 1)], vol,
                          Volume(plate), ([100, 0, 0], [0, 100, 0]), EnergyParams())
    # midpoint x = 1.5 rounds up to voxel (2, 1, 1)
    d = np.linalg.norm(np.array([1.5, 1, 1]) - [100, 0, 0])
    assert pw[0] == pytest.approx(pair_weight(0, 0.3, min(d, np.linalg.norm(np.array([1.5, 1, 1]) - [0, 100, 0]))))


def test_neighbor_pairs_counts_each_pair_once():
    m = np.ones((3, 3, 3), bool)
    ia, ib = neighbor_pairs(m)
    vol = Volume(m)
    diff = np.abs(vol.coords(ia) - vol.coords(ib))
    assert (diff.max(axis=1) == 1).all() and (diff.sum(axis=1) <= 2).all()
    keys = set(zip(np.minimum(ia, ib).tolist(), np.maximum(ia, ib).tolist()))
    assert len(keys) == ia.size
    # 18-neighbourhood pairs in a 3^3 block: 54 face + 108 edge-diagonal / 2
    assert ia.size == 3 * 18 + 6 * 12


# --------------------------------------------------------- assembled energy

def test_global_optimum_matches_exhaustive():
    rng = np.random.default_rng(21)
    for _ in range(60):
        eg = random_energy(rng, n_max=10)
        x, e = eg.solve()
        best, _ = exhaustive_energy_min(eg.energy, eg.n_vars)
        assert abs(e - best) <= 1e-9
        assert abs(eg.energy(x) - e) <= 1e-9


def test_assembled_capacities_are_nonnegative():
    rng = np.random.default_rng(22)
    for _ in range(20):
        eg = random_energy(rng)
        _, _, c1, c2 = eg.graph.edges()
        cs, ct = eg.graph.terminal_caps()
        assert min(c1.min(initial=0), c2.min(initial=0), cs.min(), ct.min()) >= 0


def test_chain_cut_at_weakest_pairwise_link():
    unary = np.zeros((5, 2))
    unary[0, VEIN] = INF_CAP
    unary[4, ARTERY] = INF_CAP
    pairs = np.array([[0, 1], [1, 2], [2, 3], [3, 4]])
    for weakest in range(4):
        w = np.array([3.0, 2.5, 4.0, 3.5])
        w[weakest] = 0.7
        x, e = build_energy(unary, pairs, w).solve()
        assert x.tolist() == [0] * (weakest + 1) + [1] * (4 - weakest)
        assert e == pytest.approx(0.7)


def two_bar_energy(w_path):
    """Two 7-voxel bars side by side (14 variables) touching along their
    middle three voxels.  Only one end of each bar is seeded: bar A artery,
    bar B vein.  Cutting across the contact costs 1.5, cutting a bar 1.0."""
    n = 14
    unary = np.zeros((n, 2))
    unary[0, VEIN] = INF_CAP
    unary[7, ARTERY] = INF_CAP
    pairs = [(i, i + 1) for i in range(6)] + [(i, i + 1) for i in range(7, 13)]
    pairs += [(i, i + 7) for i in (2, 3, 4)]
    w = [1.0] * 12 + [0.5] * 3
    cliques = []
    if w_path > 0:
        cliques = [Clique(np.arange(7), w_path, w_path, 1), Clique(np.arange(7, 14), w_path, w_path, 1)]
    return build_energy(unary, np.array(pairs), np.array(w), cliques)


def test_first_order_cut_splits_a_bar():
    x, e = two_bar_energy(0.0).solve()
    assert e == pytest.approx(1.0)
    assert len(set(x[:7].tolist())) == 2 or len(set(x[7:].tolist())) == 2


def test_path_terms_keep_bars_whole_and_match_exhaustive():
    eg = two_bar_energy(2.0)
    x, e = eg.solve()
    assert x[:7].tolist() == [ARTERY] * 7 and x[7:].tolist() == [VEIN] * 7
    # each whole bar still pays its opposite-direction term once
    assert e == pytest.approx(1.5 + 2 * 2.0)
    best, arg = exhaustive_energy_min(eg.energy, 14)
    assert e == pytest.approx(best, abs=1e-9)
    assert np.array_equal(arg, x)


def test_empty_clique_set_is_first_order():
    rng = np.random.default_rng(23)
    eg = random_energy(rng, max_cliques=0)
    assert eg.n_aux == 0 and eg.graph.n_nodes == eg.n_vars


def test_removing_an_unchosen_term_lowers_energy_by_its_saturation():
    rng = np.random.default_rng(24)
    checked = 0
    for _ in range(200):
        eg = random_energy(rng, n_max=10)
        x, e = eg.solve()
        for k, c in enumerate(eg.cliques):
            vals = x[c.voxels]
            if c.n_tol != 1 or vals.min() == vals.max():
                continue
            sat = c.w_artery + c.w_vein
            assert robust_pn_value(vals, c.w_artery, c.w_vein, 1) == pytest.approx(sat)
            rest = [d for j, d in enumerate(eg.cliques) if j != k]
            _, e2 = build_energy(eg.unary, eg.pairs, eg.pair_w, rest).solve()
            assert e2 == pytest.approx(e - sat, abs=1e-9)
            checked += 1
    assert checked > 10


# ------------------------------------------------------ volume assembly

def small_scene():
    m = np.zeros((12, 5, 5), np.uint8)
    m[1:11, 2, 2] = 1
    vol = Volume(np.where(m, 100.0, -800.0).astype(np.float32), (1.0,) * 3)
    plate = Volume(np.zeros(m.shape, np.float32), (1.0,) * 3)
    roots = ([1.0, 2, 2], [10.0, 2, 2])
    return Volume(m, (1.0,) * 3), vol, plate, roots


def test_assemble_and_decode_round_trip():
    mask, vol, plate, roots = small_scene()
    params = EnergyParams(t_distance=2.5)
    cl = [Clique([vol.index(x, 2, 2) for x in range(3, 8)], 1.0, 1.0, 1)]
    eg = assemble(mask, vol, plate, roots, cl, params)
    assert eg.n_vars == 10 and eg.n_aux == 2
    x, e = eg.solve()
    assert decode(eg)[1] == e
    assert eg.energy(x) == pytest.approx(e, abs=1e-9)
    lab = to_label_volume(eg, x, vol.spacing).data
    assert lab[1, 2, 2] == ARTERY_LABEL and lab[10, 2, 2] == VEIN_LABEL
    assert lab[0, 2, 2] == 0
    # the path term keeps voxels 3..7 together
    assert len(set(lab[3:8, 2, 2].tolist())) == 1


def test_assemble_rejects_clique_outside_mask():
    mask, vol, plate, roots = small_scene()
    with pytest.raises(ValueError):
        assemble(mask, vol, plate, roots, [Clique([vol.index(x, 2, 3) for x in range(3, 6)], 1, 1, 1)])


def test_all_source_and_all_sink_decoding():
    unary = np.array([[0, INF_CAP]] * 3)
    x, _ = build_energy(unary, np.zeros((0, 2)), []).solve()
    assert (x == ARTERY).all()
    x, _ = build_energy(unary[:, ::-1], np.zeros((0, 2)), []).solve()
    assert (x == VEIN).all()
