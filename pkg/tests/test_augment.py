import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flashgan import augment as aug
from flashgan.errors import AugmentationStallError, ConfigError, DegenerateSmoteError, NothingToAddError
from flashgan.gan import FlashGAN
from flashgan.hetgraph import TRAIN, build_graph

from conftest import TINY_GAN

OPEN = {"uu": 0.49, "up": 0.49}


@pytest.fixture(scope="module")
def untrained(planted_small):
    return FlashGAN(planted_small.schema, TINY_GAN, seed=0)


def train_counts(g):
    c = g.class_counts(TRAIN)
    return c[g.minority_class], c[g.majority_class]


def test_plan_examples():
    assert aug.plan_synthetic_count(1000, 100, 0.25) == 150
    assert aug.plan_synthetic_count(1000, 100, 0.1) == 0
    assert aug.plan_synthetic_count(1000, 10, 0.2) == 190
    with pytest.raises(NothingToAddError):
        aug.plan_synthetic_count(1000, 100, 0.05)
    with pytest.raises(ConfigError):
        aug.plan_synthetic_count(1000, 100, -1)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 5000), st.integers(0, 5000), st.floats(0, 3))
def test_plan_reaches_ratio(majority, minority, alpha):
    if alpha * majority < minority:
        with pytest.raises(NothingToAddError):
            aug.plan_synthetic_count(majority, minority, alpha)
        return
    n = aug.plan_synthetic_count(majority, minority, alpha)
    assert abs(minority + n - alpha * majority) <= 0.5


@pytest.mark.parametrize("method", aug.METHODS)
def test_methods_hit_ratio_and_keep_originals(planted_small, untrained, method):
    g = planted_small
    res = aug.augment(g, method, 0.5, seed=1, model=untrained, thresholds=OPEN)
    out = res.graph
    mn, mj = train_counts(out)
    assert abs(mn - 0.5 * mj) <= 1
    n = g.num_nodes("user")
    assert res.added == out.num_nodes("user") - n
    assert np.array_equal(out.nodes["user"].features[:n], g.nodes["user"].features)
    assert np.array_equal(out.nodes["user"].labels[:n], g.nodes["user"].labels)
    assert np.all(out.nodes["user"].labels[n:] == g.minority_class)
    assert np.all(out.nodes["user"].split[n:] == TRAIN)
    for r in g.schema.relations:
        old = {tuple(p) for p in g.edges[r.name].T.tolist()}
        assert old <= {tuple(p) for p in out.edges[r.name].T.tolist()}
    assert [p.new_id for p in res.provenance] == list(range(n, n + res.added))


def test_oversample_clones_match_source_degree(planted_small):
    g = planted_small
    res = aug.oversample(g, 0.5, np.random.default_rng(0))
    out = res.graph
    deg_old = {r: np.bincount(g.edges[r][0], minlength=g.num_nodes("user")) for r in ("uu", "up")}
    deg_new = {r: np.bincount(out.edges[r][0], minlength=out.num_nodes("user")) for r in ("uu", "up")}
    for p in res.provenance:
        (src,) = p.sources
        assert np.array_equal(out.nodes["user"].features[p.new_id], g.nodes["user"].features[src])
        for r in ("uu", "up"):
            assert deg_new[r][p.new_id] == deg_old[r][src]


def test_smote_points_lie_on_segments(planted_small):
    g = planted_small
    res = aug.smote(g, 0.5, np.random.default_rng(0))
    x_new = res.graph.nodes["user"].features
    x = g.nodes["user"].features
    minority = set(aug.minority_train_nodes(g).tolist())
    for p in res.provenance:
        a, b = p.sources
        assert a in minority and b in minority and a != b
        d = x[b] - x[a]
        u = float(np.dot(x_new[p.new_id] - x[a], d) / np.dot(d, d))
        assert 0.0 <= u <= 1.0
        assert np.allclose(x[a] + u * d, x_new[p.new_id], atol=1e-12)


def test_smote_needs_two_minority_nodes(planted_small):
    g = planted_small
    labels = g.nodes["user"].labels.copy()
    pool = aug.minority_train_nodes(g)
    labels[pool[1:]] = g.majority_class
    nodes = {
        "user": {"features": g.nodes["user"].features, "labels": labels, "split": g.nodes["user"].split},
        "product": {"features": g.nodes["product"].features},
    }
    one = build_graph(g.schema, nodes, {r: g.canonical_edges(r).T for r in ("uu", "up", "pp")}, 1, 0)
    with pytest.raises(DegenerateSmoteError):
        aug.smote(one, 0.5, np.random.default_rng(0))


def test_reweight_weights():
    w = aug.reweight_weights(np.array([0] * 90 + [1] * 10))
    assert w[0] == pytest.approx(100 / 180, rel=1e-15) and w[1] == 5.0
    split = np.array([TRAIN] * 50 + [2] * 50)
    labels = np.array([0] * 40 + [1] * 10 + [1] * 50)
    assert aug.reweight_weights(labels, split) == {0: 50 / 80, 1: 2.5}


def test_flashgan_edges_connect_to_sampled_neighborhoods(planted_small, untrained):
    g = planted_small
    res = aug.flashgan_augment(g, untrained, 0.4, OPEN, seed=0)
    out = res.graph
    n = g.num_nodes("user")
    uu = out.edges["uu"]
    new_uu = uu[:, uu[0] >= n]
    # synthetic nodes only connect to real nodes
    assert np.all(new_uu[1] < n)
    assert all(p.subgraph_id >= 0 for p in res.provenance)
    again = aug.flashgan_augment(g, untrained, 0.4, OPEN, seed=0)
    assert np.array_equal(again.graph.nodes["user"].features, out.nodes["user"].features)


def test_flashgan_stalls_when_nothing_survives(planted_small, untrained):
    with pytest.raises(AugmentationStallError):
        aug.flashgan_augment(planted_small, untrained, 0.5, {"uu": 0.99, "up": 0.99}, max_idle=5)


def test_provenance_round_trip(planted_small, tmp_path):
    res = aug.smote(planted_small, 0.3, np.random.default_rng(0))
    p = aug.write_provenance(res.provenance, tmp_path / "prov.csv")
    assert aug.read_provenance(p) == res.provenance


def test_unknown_method(planted_small):
    with pytest.raises(ConfigError):
        aug.augment(planted_small, "mixup", 0.5)
    with pytest.raises(ConfigError):
        aug.augment(planted_small, "flashgan", 0.5)
