import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adgraph_embed.baselines import rnd_emb
from adgraph_embed.ctr import (
    CtrHead,
    HeadConfig,
    SyntheticConfig,
    auc,
    cross_entropy,
    evaluate,
    fit_logistic,
    gen_synthetic,
    load_dataset,
    metrics_rows,
    planted_items,
    save_dataset,
    save_metrics,
    scoped_impressions,
    train_ctr_head,
)

SMALL = SyntheticConfig(n_items=120, n_users=40, n_impressions=6000, seed=3)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestCrossEntropy:
    def test_confident_and_correct(self):
        assert cross_entropy([1.0], [1]) == pytest.approx(-math.log(1 - 1e-7))

    def test_coin_flip(self):
        assert cross_entropy([0.5], [1]) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_clipping_keeps_finite(self):
        assert math.isfinite(cross_entropy([0.0, 1.0], [1, 0]))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
    def test_non_negative(self, pairs):
        p, y = zip(*pairs)
        assert cross_entropy(p, y) >= 0.0

    def test_constant_predictor_minimized_at_base_rate(self):
        y = np.array([1, 0, 0, 1, 0, 0, 0, 1, 0, 0])
        grid = np.linspace(0.01, 0.99, 99)
        best = grid[np.argmin([cross_entropy(np.full(y.size, c), y) for c in grid])]
        assert best == pytest.approx(y.mean(), abs=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cross_entropy([0.5], [1, 0])


class TestAuc:
    def test_separated(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_tied(self):
        assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_example(self):
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [1, 1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.integers(0, 1)), min_size=2, max_size=200))
    def test_matches_pairwise_oracle(self, pairs):
        scores, labels = (np.array(v) for v in zip(*pairs))
        if labels.min() == labels.max():
            return
        assert auc(scores.astype(float), labels) == pairwise_auc(scores.tolist(), labels.tolist())

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(-50, 50), st.integers(0, 1)), min_size=2, max_size=100))
    def test_monotone_invariance(self, pairs):
        scores, labels = (np.array(v) for v in zip(*pairs))
        if labels.min() == labels.max():
            return
        s = scores.astype(float)
        assert auc(s, labels) == auc(np.exp(s / 10.0), labels) == auc(3.0 * s + 7.0, labels)


class TestSynthetic:
    def test_seeded_bytes(self, tmp_path):
        save_dataset(tmp_path / "a", gen_synthetic(SMALL))
        save_dataset(tmp_path / "b", gen_synthetic(SMALL))
        for name in ("items.tsv", "users.tsv", "train_impressions.tsv", "test_impressions.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_no_cold_items(self):
        ds = gen_synthetic(SyntheticConfig(n_items=50, n_users=10, n_impressions=100, cold_fraction=0.0))
        assert ds.heldout == () and not ds.is_cold.any()

    def test_cold_fraction(self):
        ds = gen_synthetic(SMALL)
        assert abs(len(ds.heldout) - 12) <= 1
        assert all(ds.items[i].is_new for i in np.flatnonzero(ds.is_cold))

    def test_click_rate_law_of_large_numbers(self):
        ds = gen_synthetic(SyntheticConfig(n_items=200, n_users=50, n_impressions=100_000, seed=1))
        clicks = np.r_[ds.train.click, ds.test.click]
        probs = np.r_[ds.train.prob, ds.test.prob]
        assert clicks.size == 100_000
        assert abs(clicks.mean() - probs.mean()) < 0.01

    def test_cold_items_never_in_training(self):
        ds = gen_synthetic(SMALL)
        assert not ds.is_cold[ds.train.ad_idx].any()

    def test_round_trip(self, tmp_path):
        ds = gen_synthetic(SMALL)
        save_dataset(tmp_path, ds)
        back = load_dataset(tmp_path)
        assert back.items == ds.items and back.heldout == ds.heldout
        np.testing.assert_array_equal(back.users, ds.users)
        np.testing.assert_array_equal(back.test.ad_idx, ds.test.ad_idx)
        np.testing.assert_array_equal(back.train.click, ds.train.click)


class TestPlantedItems:
    def test_labels_and_pages(self):
        items, labels = planted_items(20, 2, seed=0)
        assert len(items) == 20 and set(labels) == {0, 1}
        assert {r.page_id for r in items} == {"page0", "page1"}


class TestHead:
    def test_separable_feature(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(400, 1))
        y = (x[:, 0] > 0).astype(int)
        head = fit_logistic(np.hstack([x, rng.normal(size=(400, 2))]), y, HeadConfig(epochs=100))
        assert auc(head.logits(np.hstack([x, np.zeros((400, 2))])), y) == 1.0

    def test_zero_epochs(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(10, 3))
        head = fit_logistic(X, np.tile([0, 1], 5), HeadConfig(epochs=0))
        assert not head.weight.any() and head.bias == 0.0
        assert auc(head.predict(X), np.tile([0, 1], 5)) == 0.5

    def test_deterministic(self):
        ds = gen_synthetic(SMALL)
        emb = rnd_emb(len(ds.items), 4, 0, ds.ad_ids)
        a, b = train_ctr_head(ds, emb), train_ctr_head(ds, emb)
        np.testing.assert_array_equal(a.weight, b.weight)
        assert a.bias == b.bias

    def test_missing_embedding(self):
        ds = gen_synthetic(SMALL)
        emb = rnd_emb(3, 4, 0, ds.ad_ids[:3])
        with pytest.raises(KeyError):
            train_ctr_head(ds, emb)


class TestEvaluate:
    def test_constant_head(self):
        ds = gen_synthetic(SMALL)
        emb = rnd_emb(len(ds.items), 4, 0, ds.ad_ids)
        F = ds.users.shape[1] + 4
        head = CtrHead(np.zeros(F), 0.3, np.zeros(F), np.ones(F))
        assert evaluate(ds, emb, head)["auc"] == 0.5

    def test_training_fit_beats_chance(self):
        ds = gen_synthetic(SMALL)
        emb = rnd_emb(len(ds.items), 4, 0, ds.ad_ids)
        head = train_ctr_head(ds, emb)
        assert evaluate(ds, emb, head, impressions=ds.train)["auc"] >= 0.5

    def test_cold_scope_disjoint_from_training(self):
        ds = gen_synthetic(SMALL)
        cold = scoped_impressions(ds, "cold_only")
        cold_ids = {ds.items[a].ad_id for a in cold.ad_idx}
        train_ids = {ds.items[a].ad_id for a in ds.train.ad_idx}
        assert cold_ids and cold_ids.isdisjoint(train_ids)
        assert cold_ids <= set(ds.heldout)

    def test_unknown_scope(self):
        with pytest.raises(ValueError):
            scoped_impressions(gen_synthetic(SMALL), "warm")

    def test_metrics_csv(self, tmp_path):
        ds = gen_synthetic(SMALL)
        rows = metrics_rows(ds, [("rnd", rnd_emb(len(ds.items), 4, 0, ds.ad_ids))], seed=5)
        save_metrics(tmp_path / "m.csv", rows)
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "embed_model,scope,auc,loss,seed"
        assert [l.split(",")[:2] for l in lines[1:]] == [["rnd", "all"], ["rnd", "cold_only"]]
        assert all(l.endswith(",5") for l in lines[1:])
