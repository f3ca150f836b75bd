import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from avsep.energy import ARTERY_LABEL, VEIN_LABEL
from avsep.learn import (
    ALL_ARTERY, ALL_VEIN, MIXED, LikelihoodModel, SpatialMaps, av_measure, av_measure_from,
    av_measures, clique_features, fisher_criterion, fit_lda, fit_likelihood, fit_likelihood_2d,
    label_paths, path_features, weights_for,
)
from avsep.volume import Volume


def grid(n=12, spacing=0.75, fill=100.0):
    return Volume(np.full((n, n, n), fill, np.float32), (spacing,) * 3)


def loop_features(xyz, v, d, spacing):
    """Straightforward per-path feature computation used as an oracle."""
    p = np.asarray(xyz, float) * spacing
    steps = [p[i + 1] - p[i] for i in range(len(p) - 1)]
    length = sum(np.linalg.norm(s) for s in steps)
    chord = max(np.linalg.norm(p[-1] - p[0]), spacing)
    turns = []
    for a, b in zip(steps[:-1], steps[1:]):
        c = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
        turns.append(math.acos(max(-1.0, min(1.0, c))))
    dv = [v[i + 1] - v[i] for i in range(len(v) - 1)]
    sec = [dv[i + 1] - dv[i] for i in range(len(dv) - 1)]
    mean = sum(dv) / len(dv)
    std = math.sqrt(sum((x - mean) ** 2 for x in dv) / len(dv))
    dd = [abs(d[i + 1] - d[i]) for i in range(len(d) - 1)]
    return [max(length / chord, 1.0), sum(turns), max(turns), max(sec), std,
            sum(dd) / len(dd), max(d) - min(d)]


def random_walk(rng, n, start=(5, 5, 5), size=12):
    pts = [np.array(start)]
    seen = {tuple(start)}
    while len(pts) < n:
        step = rng.integers(-1, 2, 3)
        q = np.clip(pts[-1] + step, 0, size - 1)
        if tuple(q) in seen:
            continue
        pts.append(q)
        seen.add(tuple(q))
    return np.array(pts)


# ----------------------------------------------------------------- features

def test_straight_constant_path_features():
    vol = grid()
    bd = grid(fill=2.0)
    vox = vol.index(np.arange(2, 9), 5, 5)
    f = clique_features(vox, vol, bd)
    np.testing.assert_allclose(f, [1, 0, 0, 0, 0, 0, 0], atol=1e-12)


def test_right_angle_corner():
    vol = grid()
    f = clique_features(vol.index([4, 5, 5], [5, 5, 6], 5), vol, grid(fill=1.0))
    assert f[2] == pytest.approx(math.pi / 2)
    assert f[1] == pytest.approx(math.pi / 2)


def test_intensity_step_second_difference():
    data = np.full((12, 12, 12), 0.0, np.float32)
    data[6:] = 100
    vol = Volume(data, (0.75,) * 3)
    f = clique_features(vol.index(np.arange(3, 10), 5, 5), vol, grid(fill=1.0))
    assert f[3] >= 100


def test_features_match_loop_oracle():
    rng = np.random.default_rng(40)
    vol = Volume(rng.normal(0, 50, (12, 12, 12)).astype(np.float32), (0.75,) * 3)
    bd = Volume(rng.uniform(0, 5, (12, 12, 12)).astype(np.float32), (0.75,) * 3)
    paths = [random_walk(rng, int(rng.integers(3, 20))) for _ in range(50)]
    vox = [vol.index(p[:, 0], p[:, 1], p[:, 2]) for p in paths]
    offsets = np.concatenate([[0], np.cumsum([len(v) for v in vox])])
    F = path_features(offsets, np.concatenate(vox), vol, bd)
    for p, v, row in zip(paths, vox, F):
        ref = loop_features(p, vol.flat()[v].astype(float), bd.flat()[v].astype(float), 0.75)
        np.testing.assert_allclose(row, ref, rtol=1e-9, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 16))
def test_length_ratio_at_least_one(seed, n):
    rng = np.random.default_rng(seed)
    vol = grid()
    p = random_walk(rng, n)
    f = clique_features(vol.index(p[:, 0], p[:, 1], p[:, 2]), vol, grid(fill=1.0))
    assert f[0] >= 1.0
    assert np.all(np.isfinite(f))


def test_label_paths():
    lab = np.zeros((6, 1, 1), np.uint8)
    lab[:3] = ARTERY_LABEL
    lab[3:] = VEIN_LABEL
    cls = label_paths([0, 3, 6, 9], [0, 1, 2, 3, 4, 5, 1, 2, 3], Volume(lab))
    assert cls.tolist() == [ALL_ARTERY, ALL_VEIN, MIXED]


# ------------------------------------------------------ arrangement measure

def test_av_measure_examples():
    assert av_measure_from(1.0, 1.0) == pytest.approx(math.pi / 4)
    assert av_measure_from(0.0, 1.0) == 0
    assert av_measure_from(2.0, 1.0) == pytest.approx(1.1071487177940904)
    assert av_measure_from(1.0, 0.0) == pytest.approx(math.pi / 2)


def test_av_measure_normalises_by_map_spread():
    a = np.zeros((4, 1, 1), np.float32)
    b = np.zeros((4, 1, 1), np.float32)
    a[:, 0, 0] = [0, 2, 4, 6]
    b[:, 0, 0] = [0, 1, 2, 3]
    sp = SpatialMaps(Volume(a), Volume(b))
    assert sp.sigma_b == pytest.approx(2 * sp.sigma_v)
    # mean distances 4 and 2 for voxels 1..3, scaled by sigma_b = 2 sigma_v
    assert av_measure([1, 2, 3], sp) == pytest.approx(math.atan((4 / sp.sigma_b) / (2 / sp.sigma_v)))
    assert av_measures([0, 3], [1, 2, 3], sp)[0] == pytest.approx(math.pi / 4)


def test_spatial_maps_validation():
    with pytest.raises(ValueError):
        SpatialMaps(grid(fill=1.0), grid(fill=1.0))


# --------------------------------------------------------------------- LDA

def test_lda_recovers_the_separating_axis():
    # full +-1 factorial design: exactly diagonal within-class scatter
    base = np.array(np.meshgrid(*[[-1.0, 1.0]] * 7, indexing="ij")).reshape(7, -1).T
    X = np.vstack([base + 3.0 * np.eye(7)[1], base])
    same = np.arange(len(X)) < len(base)
    w, offset = fit_lda(X, same)
    assert abs(w[1]) > 0.99
    assert np.linalg.norm(w) == pytest.approx(1.0)
    assert (X[same] @ w).mean() < offset < (X[~same] @ w).mean()
    w2, _ = fit_lda(X, ~same)
    np.testing.assert_allclose(w2, -w, atol=1e-9)


def test_lda_beats_random_directions():
    rng = np.random.default_rng(42)
    for _ in range(5):
        X = rng.normal(size=(300, 7)) @ rng.normal(size=(7, 7))
        same = rng.random(300) < 0.4
        X[same] += rng.normal(size=7)
        w, _ = fit_lda(X, same)
        best = fisher_criterion(w, X, same)
        dirs = rng.normal(size=(1000, 7))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        assert all(best >= fisher_criterion(d, X, same) for d in dirs)


def test_lda_needs_both_classes():
    with pytest.raises(ValueError):
        fit_lda(np.zeros((5, 7)), np.ones(5, bool))


# --------------------------------------------------------------- histograms

def test_histogram_log_ratio_examples():
    proj = np.r_[np.zeros(90), np.ones(10), np.zeros(10), np.ones(90)]
    same = np.r_[np.ones(100, bool), np.zeros(100, bool)]
    edges, lr = fit_likelihood(proj, same, nbins=2)
    # add-one smoothing: (91/102) / (11/102)
    assert lr[0] == pytest.approx(math.log(91 / 11))
    assert lr[1] == pytest.approx(-math.log(91 / 11))
    _, lr = fit_likelihood(np.r_[np.zeros(5), np.ones(5), np.zeros(5), np.ones(5)],
                           np.r_[np.ones(10, bool), np.zeros(10, bool)], nbins=2)
    np.testing.assert_allclose(lr, 0, atol=1e-15)


def test_2d_equal_counts_give_zero():
    proj = np.tile([0.0, 1.0], 30)
    av = np.tile([0.2, 1.2], 30)
    classes = np.repeat([MIXED, ALL_ARTERY, ALL_VEIN], 20)
    xe, ye, art, vein = fit_likelihood_2d(proj, av, classes, (2, 2))
    assert ye[0] == 0 and ye[-1] == pytest.approx(math.pi / 2)
    np.testing.assert_allclose(art, 0, atol=1e-15)
    np.testing.assert_allclose(vein, 0, atol=1e-15)


def make_model(logratio, with_2d=False):
    m = LikelihoodModel(np.eye(7)[0], 0.0, np.linspace(0, 2, len(logratio) + 1), np.asarray(logratio),
                        params={"S": 15})
    if with_2d:
        m.xedges = np.linspace(0, 2, 3)
        m.yedges = np.linspace(0, math.pi / 2, 3)
        m.arteryness = np.array([[1.2, -0.4], [0.3, -1.0]])
        m.veinness = np.array([[-0.5, 0.9], [0.0, 0.2]])
    return m


def test_weights_for_lookup_and_clipping():
    m = make_model([1.7, -2.3])
    f = np.zeros(7)
    f[0] = 0.5
    assert weights_for(f, m) == (1.7, 1.7)
    f[0] = 1.5
    assert weights_for(f, m) == (0.0, 0.0)
    f[0] = 99.0   # beyond the last edge clamps into the last bin
    assert weights_for(f, m) == (0.0, 0.0)
    m2 = make_model([1.7, -2.3], with_2d=True)
    f[0] = 0.5
    assert weights_for(f, m2, av=0.1) == (1.2, 0.0)
    assert weights_for(f, m2, av=1.5) == (0.0, 0.9)
    with pytest.raises(ValueError):
        weights_for(f, m, av=0.1)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, (5, 7), elements=st.floats(-1e6, 1e6)),
       hnp.arrays(np.float64, 5, elements=st.floats(0, math.pi / 2)))
def test_weights_are_never_negative(F, av):
    m = make_model(np.linspace(-3, 3, 8), with_2d=True)
    for wa, wv in (weights_for(F, m), weights_for(F, m, av)):
        assert (wa >= 0).all() and (wv >= 0).all()


def test_model_json_round_trip(tmp_path):
    m = make_model(np.random.default_rng(43).normal(size=64) / 3, with_2d=True)
    m.params["alpha_path"] = 0.1 + 0.2
    m.save(tmp_path / "m.json")
    back = LikelihoodModel.load(tmp_path / "m.json")
    assert back.to_json() == m.to_json()
    for a in ("w", "edges", "logratio", "xedges", "yedges", "arteryness", "veinness"):
        assert np.array_equal(getattr(back, a), getattr(m, a))
    assert back.params["alpha_path"] == 0.1 + 0.2
    bad = m.to_dict()
    bad["version"] = 99
    with pytest.raises(ValueError):
        LikelihoodModel.from_dict(bad)
