import math

import numpy as np
import pytest

from ebgcn.cascade import Claim, Dataset, TweetNode
from ebgcn.datagen import GenConfig, generate
from ebgcn.evaluation import (
    Budget,
    compute_metrics,
    early_detection_curve,
    evaluate_graphs,
    kfold_splits,
    loeo_splits,
    stratified_holdout,
    truncated_graphs,
)
from ebgcn.model import ModelConfig, init_params

LABELS = ("NR", "F", "T", "U")


def brute_force_metrics(pred, gold, k):
    f1 = []
    for c in range(k):
        tp = sum(1 for p, g in zip(pred, gold) if p == c and g == c)
        fp = sum(1 for p, g in zip(pred, gold) if p == c and g != c)
        fn = sum(1 for p, g in zip(pred, gold) if p != c and g == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    acc = sum(p == g for p, g in zip(pred, gold)) / len(gold)
    return acc, f1


def test_metrics_against_brute_force(rng):
    for _ in range(100):
        n = int(rng.integers(1, 40))
        pred, gold = rng.integers(0, 4, n), rng.integers(0, 4, n)
        rep = compute_metrics(pred, gold, LABELS)
        acc, f1 = brute_force_metrics(pred.tolist(), gold.tolist(), 4)
        assert abs(rep.accuracy - acc) <= 1e-12
        for c, name in enumerate(LABELS):
            assert abs(rep.f1[name] - f1[c]) <= 1e-12
        assert abs(rep.macro_f1 - np.mean(f1)) <= 1e-12


def test_perfect_predictions():
    rep = compute_metrics([0, 1, 2, 3], [0, 1, 2, 3], LABELS)
    assert rep.accuracy == 1 and all(v == 1 for v in rep.f1.values())


def test_all_one_class_predictions():
    gold = [0, 0, 1, 1, 2, 2, 3, 3]
    rep = compute_metrics([1] * 8, gold, LABELS)
    assert rep.accuracy == 0.25
    assert rep.f1["F"] == pytest.approx(0.4, abs=1e-15)
    assert rep.f1["NR"] == rep.f1["T"] == rep.f1["U"] == 0
    assert rep.macro_f1 == pytest.approx(0.1)
    assert rep.confusion.sum() == 8


def test_weighted_f1_uses_support():
    rep = compute_metrics([0, 0, 0, 1], [0, 0, 0, 0], ("a", "b"))
    assert rep.weighted_f1 == pytest.approx(rep.f1["a"])


def test_kfold_ten_items():
    folds = kfold_splits(np.arange(10) % 2, k=5, seed=0)
    tests = [set(te) for _, te in folds]
    assert [len(t) for t in tests] == [2] * 5
    assert set().union(*tests) == set(range(10))
    assert sum(len(t) for t in tests) == 10
    for tr, te in folds:
        assert not set(tr) & set(te)


def test_kfold_stratified_and_seeded():
    labels = np.repeat(np.arange(4), 100)
    folds = kfold_splits(labels, 5, seed=3)
    for _, te in folds:
        counts = np.bincount(labels[te], minlength=4)
        assert np.all(np.abs(counts - 20) <= 1)
    again = kfold_splits(labels, 5, seed=3)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(folds, again))


def test_kfold_uneven_classes():
    labels = np.array([0] * 7 + [1] * 4 + [2] * 2)
    sizes = [len(te) for _, te in kfold_splits(labels, 5, seed=1)]
    assert max(sizes) - min(sizes) <= 1


def test_holdout_counts():
    labels = np.repeat(np.arange(4), 125)
    tr, te = stratified_holdout(labels, 0.2, seed=0)
    assert len(te) == 100 and np.all(np.bincount(labels[te]) == 25)
    assert not set(tr) & set(te)


def _claim(cid, event):
    return Claim(cid, "NR", (TweetNode(cid + ":0"),), (), event)


def test_loeo_three_events():
    ds = Dataset(tuple(_claim(f"c{i}", e) for i, e in enumerate("AABBBC")))
    splits = loeo_splits(ds)
    assert [e for e, _, _ in splits] == ["A", "B", "C"]
    e, tr, te = splits[2]
    assert te.tolist() == [5] and len(tr) == 5


def test_loeo_needs_events():
    with pytest.raises(ValueError):
        loeo_splits(Dataset((_claim("a", None), _claim("b", "X"))))


def test_budget_validation():
    with pytest.raises(ValueError):
        Budget("tweets", 0)
    with pytest.raises(ValueError):
        Budget("minutes", 5)
    assert Budget("deadline", 0).value == 0


@pytest.fixture(scope="module")
def tiny_model():
    data = generate(GenConfig(claims_per_class=5, dim=6, seed=4))
    cfg = ModelConfig(6, 4, hidden=5)
    return data, cfg, init_params(cfg, seed=0)


def test_infinite_budget_equals_full_evaluation(tiny_model):
    data, cfg, params = tiny_model
    fo = lambda cid, uid: data.features[uid]
    curve = early_detection_curve(params, cfg, data.dataset, fo, [Budget("tweets", math.inf),
                                                                  Budget("deadline", math.inf)])
    full = evaluate_graphs(truncated_graphs(data.dataset.claims, fo), data.dataset.labels(), params, cfg, LABELS)
    for _, rep in curve:
        assert rep.accuracy == full.accuracy
        assert rep.f1 == full.f1
        assert np.array_equal(rep.confusion, full.confusion)


def test_source_only_budget_is_well_defined(tiny_model):
    data, cfg, params = tiny_model
    fo = lambda cid, uid: data.features[uid]
    graphs = truncated_graphs(data.dataset.claims, fo, Budget("deadline", 0))
    assert all(g.n == 1 for g in graphs)
    (_, rep), = early_detection_curve(params, cfg, data.dataset, fo, [Budget("tweets", 1)])
    assert 0 <= rep.accuracy <= 1


def test_fraction_budget_keeps_a_share():
    c = Claim("c", "NR", tuple(TweetNode(f"u{k}", "", float(k)) for k in range(8)),
              tuple((0, k) for k in range(1, 8)))
    assert Budget("fraction", 0.25).apply(c).n == 2
    assert Budget("fraction", 0.01).apply(c).n == 1
