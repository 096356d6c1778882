"""Circle dataset, MLP, minibatch loss and training loop."""

import math
from dataclasses import replace

import numpy as np
import pytest

from curl_lab.dataset import LabeledDataset
from curl_lab.synth.experiment import (
    TrainConfig,
    batch_loss,
    best_l_sup,
    gen_circle,
    make_pairs,
    mlp_gradient_check,
    read_trajectory_csv,
    run_cached,
    sample_negatives,
    split_dataset,
    train_run,
    trajectory_slope,
    write_trajectory_csv,
)
from curl_lab.synth.mlp import MLP, AdamW, PlateauScheduler

TINY = TrainConfig(K=4, C=4, n_per_class=40, batch_size=32, epochs=3, dims=(2, 16, 16, 8), eval_factor=2)


class TestData:
    def test_circle_radii(self):
        d = gen_circle(10, 50, seed=0)
        r = np.linalg.norm(d.points, axis=1)
        np.testing.assert_allclose(r, (d.labels + 2) / 2, rtol=1e-14)
        assert d.class_counts.tolist() == [50] * 10

    def test_split_stratified(self):
        train, test = split_dataset(gen_circle(10, 100, 0), 0.6, 1)
        assert train.class_counts.tolist() == [60] * 10
        assert test.class_counts.tolist() == [40] * 10

    def test_pairs_same_class_other_point(self, rng):
        d = gen_circle(3, 7, 0)
        pos = make_pairs(d, rng)
        assert np.all(d.labels[pos] == d.labels)
        assert np.all(pos != np.arange(len(d)))

    @pytest.mark.parametrize("B,K", [(8, 3), (8, 7), (8, 12), (8, 14)])
    def test_negatives(self, rng, B, K):
        neg = sample_negatives(B, K, rng)
        for b, row in enumerate(neg.tolist()):
            assert len(set(row)) == K
            assert b not in row and b + B not in row
            assert min(row) >= 0 and max(row) < 2 * B
            if K <= B - 1:
                assert len({v % B for v in row}) == K

    def test_negatives_too_many(self, rng):
        with pytest.raises(ValueError):
            sample_negatives(4, 7, rng)


class TestMLP:
    def test_gradient_check(self):
        assert mlp_gradient_check() < 1e-5

    def test_unit_norm_output(self, rng):
        m = MLP.init((2, 32, 8), rng)
        y = m.forward(rng.normal(size=(50, 2)))
        np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-6)

    def test_zero_output_is_finite(self, rng):
        m = MLP.init((2, 4, 3), rng, dtype=np.float64)
        for w in m.weights:
            w[:] = 0
        for b in m.biases:
            b[:] = 0
        y, cache = m.forward(rng.normal(size=(6, 2)), keep=True)
        grads = m.backward(cache, np.ones_like(y))
        assert np.all(y == 0) and all(np.all(np.isfinite(g)) for g in grads)

    def test_batch_loss_dense_matches_sparse(self, rng):
        Z = rng.normal(size=(20, 5))
        Z /= np.linalg.norm(Z, axis=1, keepdims=True)
        neg = sample_negatives(10, 6, rng)
        l1, g1 = batch_loss(Z, neg, dense=False)
        l2, g2 = batch_loss(Z, neg, dense=True)
        assert l1 == pytest.approx(l2, abs=1e-14)
        np.testing.assert_allclose(g1, g2, atol=1e-14)

    def test_batch_loss_constant_embedding(self):
        Z = np.ones((8, 3)) / math.sqrt(3)
        neg = np.array([[1, 2], [0, 6], [0, 1], [4, 5]])
        assert batch_loss(Z, neg)[0] == pytest.approx(math.log(3), abs=1e-14)

    def test_adamw_first_step(self):
        p = [np.array([1.0, -2.0])]
        opt = AdamW(lr=0.1, weight_decay=0.01)
        opt.step(p, [np.array([0.5, -0.5])])
        # decay, then a unit-magnitude Adam step
        np.testing.assert_allclose(p[0], [1.0 * 0.999 - 0.1, -2.0 * 0.999 + 0.1], atol=1e-7)

    def test_plateau_scheduler(self):
        opt = AdamW(lr=1.0)
        s = PlateauScheduler(patience=2)
        for v in [1.0, 1.0, 1.0, 1.0]:
            s.step(v, opt)
        assert opt.lr == pytest.approx(0.1)


class TestTraining:
    def test_initial_record(self):
        cfg = replace(TINY, epochs=0, record_initial=True, K=3)
        rec = train_run(cfg).records[0]
        assert rec.epoch == 0
        assert abs(rec.l_cont - math.log(4)) < 0.01
        assert abs(rec.l_sup - math.log(4)) < 0.01

    def test_deterministic_and_thread_invariant(self):
        a = train_run(TINY, threads=1)
        b = train_run(TINY, threads=3)
        assert a.records == b.records
        assert [r.epoch for r in a.records] == [1, 2, 3]

    def test_training_lowers_loss(self):
        res = train_run(replace(TINY, epochs=15))
        assert res.train_losses[-1] < res.train_losses[0]

    def test_dense_path(self):
        res = train_run(replace(TINY, K=40, epochs=1, batch_size=64))
        assert math.isfinite(res.records[0].l_cont)

    def test_cache_round_trip(self, tmp_path):
        recs = run_cached(TINY, tmp_path)
        assert run_cached(TINY, tmp_path) == recs
        path = tmp_path / "t.csv"
        write_trajectory_csv(recs, path)
        assert read_trajectory_csv(path) == recs

    def test_summaries(self):
        recs = train_run(replace(TINY, epochs=5)).records
        assert best_l_sup(recs) == min(r.l_sup for r in recs)
        assert math.isfinite(trajectory_slope(recs, last=5))
