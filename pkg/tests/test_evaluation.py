import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reidlab.dataset import FeatureDataset, LabeledFeature
from reidlab.errors import ProtocolError
from reidlab.evaluation import (EvalReport, ProtocolConfig, RankedList, average_precision, cmc_at_k,
                                evaluate, rank_all, rank_gallery)
from reidlab.metric import MahalanobisModel


def oracle_first_hit(flags):
    for pos, flag in enumerate(flags, start=1):
        if flag:
            return pos
    return None


def oracle_ap(flags):
    hits, total = 0, 0.0
    for k, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            total += hits / k
    return None if hits == 0 else total / hits


def fake_list(flags):
    flags = np.asarray(flags, dtype=bool)
    return RankedList(0, 0, np.arange(len(flags)), np.arange(len(flags), dtype=float), flags)


def test_rank_gallery_orders_by_distance():
    gallery = FeatureDataset([1, 1], [1, 1], [[0.5], [0.1]])
    ranked = rank_gallery(LabeledFeature(1, 0, np.zeros(1)), gallery)
    assert ranked.indices.tolist() == [1, 0]
    np.testing.assert_allclose(ranked.distances, [0.01, 0.25])


def test_rank_gallery_tie_rule():
    gallery = FeatureDataset([0, 1, 2, 3], [1, 1, 1, 1], [[1.0], [-1.0], [1.0], [0.0]])
    ranked = rank_gallery(LabeledFeature(9, 0, np.zeros(1)), gallery)
    assert ranked.indices.tolist() == [3, 0, 1, 2]


def test_rank_gallery_excludes_same_view_positives():
    gallery = FeatureDataset([5, 5, 6], [0, 1, 0], [[0.0], [1.0], [2.0]])
    query = LabeledFeature(5, 0, np.zeros(1))
    on = rank_gallery(query, gallery)
    assert 0 not in on.indices.tolist() and on.indices.tolist() == [1, 2]
    off = rank_gallery(query, gallery, ProtocolConfig(exclude_same_camera_positives=False))
    assert off.indices.tolist() == [0, 1, 2]


def test_rank_gallery_empty_effective_gallery():
    gallery = FeatureDataset([5], [0], [[0.0]])
    with pytest.raises(ProtocolError):
        rank_gallery(LabeledFeature(5, 0, np.zeros(1)), gallery)


def test_cmc_examples():
    lst = fake_list([0, 0, 0, 1, 0])
    assert cmc_at_k([lst], 5) == 1.0 and cmc_at_k([lst], 1) == 0.0
    assert cmc_at_k([fake_list([1, 0]), fake_list([1, 1])], 1) == 1.0
    # queries without positives are skipped
    assert cmc_at_k([fake_list([1, 0]), fake_list([0, 0])], 1) == 1.0


def test_ap_examples():
    assert average_precision([1, 0, 0]) == 1.0
    assert average_precision([1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([1, 0, 1]) == pytest.approx(0.83333, abs=1e-5)
    assert average_precision([1, 1, 1, 0, 0]) == 1.0
    assert average_precision([0, 0]) is None


def test_random_instances_match_oracle_exactly():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n_lists = rng.integers(1, 6)
        lists = [fake_list(rng.random(rng.integers(1, 31)) < rng.random())
                 for _ in range(n_lists)]
        for lst in lists:
            assert average_precision(lst.relevant) == oracle_ap(lst.relevant.tolist())
        ranks = [oracle_first_hit(l.relevant.tolist()) for l in lists]
        ranks = [r for r in ranks if r is not None]
        for k in (1, 5):
            expected = sum(r <= k for r in ranks) / len(ranks) if ranks else 0.0
            assert cmc_at_k(lists, k) == expected


def brute_force_evaluate(q, g, exclude=True):
    aps, firsts = [], []
    for i in range(len(q)):
        cands = []
        for j in range(len(g)):
            if exclude and g.ids[j] == q.ids[i] and g.cameras[j] == q.cameras[i]:
                continue
            d = float(((g.vectors[j] - q.vectors[i]) ** 2).sum())
            cands.append((d, j))
        cands.sort()
        flags = [g.ids[j] == q.ids[i] for _, j in cands]
        ap = oracle_ap(flags)
        if ap is not None:
            aps.append(ap)
            firsts.append(oracle_first_hit(flags))
    return (sum(f <= 1 for f in firsts) / len(firsts), sum(f <= 5 for f in firsts) / len(firsts),
            sum(aps) / len(aps), len(q) - len(aps))


@pytest.mark.parametrize("seed", range(5))
def test_evaluate_random_features_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    C = 6
    g = FeatureDataset(np.repeat(np.arange(C), 4), rng.integers(0, 3, size=4 * C),
                       rng.normal(size=(4 * C, 5)))
    q = FeatureDataset(np.arange(C), rng.integers(0, 3, size=C), rng.normal(size=(C, 5)))
    report = evaluate(q, g)
    r1, r5, mean_ap, skipped = brute_force_evaluate(q, g)
    assert (report.rank1, report.rank5, report.num_skipped) == (r1, r5, skipped)
    assert report.map == pytest.approx(mean_ap, rel=1e-12)
    # chance level for 4 positives among ~24 candidates is far below 1
    assert report.map < 0.8


def test_self_retrieval():
    rng = np.random.default_rng(1)
    q = FeatureDataset(np.arange(8), np.zeros(8, dtype=int), rng.normal(size=(8, 3)))
    report = evaluate(q, q, ProtocolConfig(exclude_same_camera_positives=False))
    assert report.rank1 == 1.0 and report.map == 1.0 and report.num_skipped == 0
    with pytest.raises(ProtocolError):
        evaluate(q, q)  # every positive is a same-view match


def test_identity_mahalanobis_equals_euclidean():
    rng = np.random.default_rng(2)
    g = FeatureDataset(rng.integers(0, 5, 40), rng.integers(0, 3, 40), rng.normal(size=(40, 6)))
    q = FeatureDataset(rng.integers(0, 5, 10), rng.integers(0, 3, 10), rng.normal(size=(10, 6)))
    eu = rank_all(q, g)
    ma = rank_all(q, g, ProtocolConfig(metric=MahalanobisModel(np.eye(6))))
    for a, b in zip(eu, ma):
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.distances, b.distances)
    assert evaluate(q, g) == evaluate(q, g, ProtocolConfig(metric=MahalanobisModel(np.eye(6))))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_ranking_invariant_to_gallery_order(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    g = FeatureDataset(rng.integers(0, 4, n), rng.integers(0, 3, n), rng.normal(size=(n, 3)))
    perm = rng.permutation(n)
    gp = g.subset(perm)
    query = LabeledFeature(0, 0, rng.normal(size=3))
    try:
        a = rank_gallery(query, g)
    except ProtocolError:
        return
    b = rank_gallery(query, gp)
    assert perm[b.indices].tolist() == a.indices.tolist()
    assert np.array_equal(a.relevant, b.relevant)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rank1_le_rank5_le_1(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 30))
    g = FeatureDataset(rng.integers(0, 3, n), rng.integers(0, 2, n), rng.normal(size=(n, 2)))
    q = FeatureDataset(rng.integers(0, 3, 4), rng.integers(0, 2, 4), rng.normal(size=(4, 2)))
    try:
        r = evaluate(q, g)
    except ProtocolError:
        return
    assert 0.0 <= r.rank1 <= r.rank5 <= 1.0
    assert 0.0 <= r.map <= 1.0


def test_report_serialisation(tmp_path):
    r = EvalReport(0.25, 0.5, 0.125, 8, 1)
    r.to_json(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == {
        "rank1": 0.25, "rank5": 0.5, "map": 0.125, "num_queries": 8, "num_skipped": 1}
    r.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == "rank1,rank5,map,num_queries,num_skipped\n0.25,0.5,0.125,8,1\n"
    assert r.format_row("LOMO", "Euclidean distance") == "LOMO & Euclidean distance & 25.00 & 12.50"
