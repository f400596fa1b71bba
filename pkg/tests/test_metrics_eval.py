import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score, roc_auc_score

from flashgan import evalsuite as ev
from flashgan.errors import ConfigError, UndefinedMetricError
from flashgan.hetgraph import build_graph
from flashgan.metrics import auc_prc, auc_roc, threshold_metrics

from oracles import pairwise_auc, sweep_average_precision

FAST = ev.ClassifierConfig(widths=(8, 4), epochs=15)

score_sets = st.integers(2, 8).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 4), min_size=n, max_size=n), st.lists(st.integers(0, 1), min_size=n, max_size=n))
)


@settings(max_examples=400, deadline=None)
@given(score_sets)
def test_ranking_metrics_match_brute_force(case):
    raw, labels = case
    scores = [s / 4 for s in raw]
    if 1 in labels:
        assert auc_prc(scores, labels) == pytest.approx(sweep_average_precision(scores, labels), abs=1e-12)
    if 0 in labels and 1 in labels:
        assert auc_roc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)


def test_against_sklearn_on_continuous_scores():
    rng = np.random.default_rng(0)
    y = (rng.random(500) < 0.2).astype(int)
    s = rng.random(500) + 0.5 * y
    assert auc_roc(s, y) == pytest.approx(roc_auc_score(y, s), abs=1e-12)
    assert auc_prc(s, y) == pytest.approx(average_precision_score(y, s), abs=1e-12)


def test_random_scores_give_prevalence():
    rng = np.random.default_rng(1)
    vals = [auc_prc(rng.random(2000), (rng.random(2000) < 0.1).astype(int)) for _ in range(40)]
    assert np.mean(vals) == pytest.approx(0.1, abs=0.01)


def test_undefined_cases():
    with pytest.raises(UndefinedMetricError):
        auc_roc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auc_prc([0.1, 0.2], [0, 0])
    with pytest.raises(UndefinedMetricError):
        auc_roc([0.1, float("nan")], [0, 1])


def test_confusion_matrix_by_hand():
    scores = [0.9, 0.8, 0.7, 0.6, 0.2, 0.1, 0.3, 0.4, 0.45, 0.5]
    labels = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0]
    m = threshold_metrics(scores, labels)
    assert m["precision"] == 0.75 and m["recall"] == 0.6 and m["accuracy"] == 0.7
    assert m["f_score"] == pytest.approx(2 / 3, rel=1e-15)
    none = threshold_metrics([0.1, 0.2], [1, 0])
    assert none == {"f_score": 0.0, "accuracy": 0.5, "precision": 0.0, "recall": 0.0}


def test_zero_head_scores_half(planted_small):
    model = ev.train_classifier(planted_small, ev.ClassifierConfig(widths=(8, 4), epochs=0, selection="last"))
    for n in model.params.group("head"):
        model.params[n] = np.zeros_like(model.params[n])
    assert np.all(ev.predict_scores(model, planted_small) == 0.5)


def test_unit_weights_equal_unweighted(planted_small):
    a = ev.train_classifier(planted_small, FAST)
    b = ev.train_classifier(planted_small, ev.ClassifierConfig(widths=(8, 4), epochs=15, class_weights={0: 1.0, 1: 1.0}))
    assert all(np.array_equal(a.params[n], b.params[n]) for n in a.params.names)
    assert a.best_epoch == b.best_epoch


def test_class_weights_change_training(planted_small):
    a = ev.train_classifier(planted_small, FAST)
    b = ev.train_classifier(planted_small, ev.ClassifierConfig(widths=(8, 4), epochs=15, class_weights={0: 1.0, 1: 9.0}))
    assert not all(np.array_equal(a.params[n], b.params[n]) for n in a.params.names)


def test_scores_follow_node_permutation(planted_small):
    g = planted_small
    model = ev.train_classifier(g, FAST)
    n = g.num_nodes("user")
    perm = np.random.default_rng(0).permutation(n)
    inv = np.argsort(perm)
    t = g.nodes["user"]
    uu = inv[g.canonical_edges("uu")]
    up = g.canonical_edges("up").copy()
    up[0] = inv[up[0]]
    permuted = build_graph(
        g.schema,
        {"user": {"features": t.features[perm], "labels": t.labels[perm], "split": t.split[perm]}, "product": {"features": g.nodes["product"].features}},
        {"uu": uu.T, "up": up.T, "pp": g.canonical_edges("pp").T},
        g.minority_class,
        g.majority_class,
    )
    assert np.allclose(ev.predict_scores(model, permuted), ev.predict_scores(model, g)[perm], atol=1e-12)


def test_best_validation_snapshot_is_kept(planted_small):
    model = ev.train_classifier(planted_small, FAST)
    assert len(model.trace) == FAST.epochs + 1
    assert model.trace[model.best_epoch] == max(model.trace)


def test_experiment_report_round_trip(planted_small, tmp_path):
    report = ev.run_experiment({"a": planted_small, "b": planted_small}, seeds=[0, 1], cfg=FAST)
    assert len(report.cells) == 4 and not report.partial
    assert report.summary["b"]["auc_prc_improvement"] == 0.0
    assert report.summary["b"]["improvement_per_mb_pct"] is None
    vals = [c["auc_prc"] for c in report.cells if c["variant"] == "a"]
    assert report.mean("a") == pytest.approx(math.fsum(vals) / 2, rel=1e-15)
    jpath, cpath = ev.write_report(report, tmp_path)
    back = ev.read_report(tmp_path)
    assert json.dumps(back.to_dict(), sort_keys=True) == json.dumps(report.to_dict(), sort_keys=True)
    assert cpath.read_text().splitlines()[0].split(",") == ev.csv_header(report)


def test_failed_cell_marks_report_partial(planted_small):
    report = ev.run_experiment([ev.Variant("w", planted_small, {0: 1.0})], seeds=[0], cfg=FAST)
    assert report.partial and report.cells[0]["error"]
    assert math.isnan(report.mean("w"))


def test_experiment_config_errors(planted_small):
    with pytest.raises(ConfigError):
        ev.run_experiment({"a": planted_small}, seeds=[])
    with pytest.raises(ConfigError):
        ev.run_experiment({"a": planted_small}, seeds=[0], baseline="zzz")
    with pytest.raises(ConfigError):
        ev.ClassifierConfig(selection="vibes")
