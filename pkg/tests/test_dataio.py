import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score

from flashgan import dataio
from flashgan.errors import ConfigError, ParseError
from flashgan.hetgraph import TEST, TRAIN, VAL, imbalance_ratio

from conftest import graphs, random_graph


def test_planted_graph_counts(planted_default):
    g = planted_default
    labels = g.nodes["user"].labels
    assert g.num_nodes("user") == 1000 and g.num_nodes("product") == 200
    assert int((labels == 1).sum()) == 100
    assert imbalance_ratio(g) == pytest.approx(100 / 900, rel=1e-15)
    split = g.nodes["user"].split
    for c in (0, 1):
        n = int((labels == c).sum())
        assert int(((labels == c) & (split == TRAIN)).sum()) == round(0.7 * n)
        assert int(((labels == c) & (split == VAL)).sum()) == round(0.2 * n)
    assert set(np.unique(split).tolist()) == {TRAIN, VAL, TEST}


def test_planted_graph_is_homophilous(planted_default):
    g = planted_default
    y = g.nodes["user"].labels
    a, b = g.canonical_edges("uu")
    same_minority = np.mean((y[a] == 1) & (y[b] == 1))
    # random wiring would put about 1% of edges between two minority users
    assert same_minority > 0.04


def test_features_are_separable_but_not_trivially(planted_default):
    g = planted_default
    t = g.nodes["user"]
    tr, te = t.split == TRAIN, t.split == TEST
    clf = LogisticRegression(max_iter=1000).fit(t.features[tr], t.labels[tr])
    auc = roc_auc_score(t.labels[te], clf.decision_function(t.features[te]))
    assert 0.6 < auc < 0.99


def test_generation_is_seeded():
    a = dataio.generate(dataio.SynthConfig(n_users=80, n_products=10, seed=4))
    b = dataio.generate(dataio.SynthConfig(n_users=80, n_products=10, seed=4))
    c = dataio.generate(dataio.SynthConfig(n_users=80, n_products=10, seed=5))
    assert dataio.graphs_equal(a, b) and not dataio.graphs_equal(a, c)


def test_config_validation():
    with pytest.raises(ConfigError):
        dataio.SynthConfig(fraud_fraction=0.9)
    with pytest.raises(ConfigError):
        dataio.SynthConfig(splits=(0.5, 0.5, 0.5))
    with pytest.raises(ConfigError):
        dataio.SynthConfig.from_dict({"n_user": 5})
    assert dataio.SynthConfig.from_dict({"splits": [0.6, 0.2, 0.2]}).splits == (0.6, 0.2, 0.2)


@settings(max_examples=40, deadline=None)
@given(graphs())
def test_container_round_trip(g):
    with tempfile.TemporaryDirectory() as d:
        stats = dataio.save_graph(g, d)
        back = dataio.load_graph(d)
        assert stats["size_bytes"] == dataio.serialized_size(g) == dataio.directory_size(d)
    assert dataio.graphs_equal(g, back)


def test_empty_edge_type_round_trip(tmp_path):
    g = random_graph(np.random.default_rng(0), 4, 2, density=0.0)
    dataio.save_graph(g, tmp_path)
    assert (tmp_path / "edges_uu.csv").read_text() == "src,dst\n"
    assert dataio.graphs_equal(g, dataio.load_graph(tmp_path))


def test_unlabeled_rows_round_trip(tmp_path):
    g = random_graph(np.random.default_rng(0), 5, 2, labeled=False)
    dataio.save_graph(g, tmp_path)
    assert dataio.graphs_equal(g, dataio.load_graph(tmp_path))


def test_truncated_csv_is_parse_error(tmp_path, planted_small):
    dataio.save_graph(planted_small, tmp_path)
    path = tmp_path / "nodes_user.csv"
    lines = path.read_text().splitlines()
    lines[5] = lines[5].rsplit(",", 3)[0]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match=r"nodes_user\.csv:6"):
        dataio.load_graph(tmp_path)


def test_bad_manifest(tmp_path, planted_small):
    with pytest.raises(ParseError):
        dataio.load_graph(tmp_path)
    dataio.save_graph(planted_small, tmp_path)
    (tmp_path / "manifest.json").write_text("{")
    with pytest.raises(ParseError):
        dataio.load_graph(tmp_path)
