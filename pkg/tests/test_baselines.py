import numpy as np
import pytest
import torch

from oracles import naive_stack_forward
from suster.baselines import (
    BaselineConfig,
    NaivePredictors,
    StgcnBaseline,
    clamped_normalized_adjacency,
    distance_adjacency,
    naive_baselines,
    random_adjacency,
    stgcn_baseline_forward,
)
from suster.batching import apply_sensor_permutation, permute_batch
from suster.datasets import (
    DenseDataset,
    SparseMask,
    SynthConfig,
    build_features,
    sparsify,
    synth_generate,
    window,
)
from suster.training import compute_metrics

from datetime import datetime


class TestRandomAdjacency:
    def test_deterministic(self):
        np.testing.assert_array_equal(random_adjacency(6, 3), random_adjacency(6, 3))
        assert not np.array_equal(random_adjacency(6, 3), random_adjacency(6, 4))

    def test_single_node_normalizes_to_one(self):
        np.testing.assert_allclose(random_adjacency(1, 0), [[1.0]])

    def test_all_negative_draws_give_identity(self):
        draws = -np.abs(np.random.default_rng(0).normal(size=(5, 5))) - 0.1
        np.testing.assert_allclose(clamped_normalized_adjacency(draws), np.eye(5))

    def test_spectral_radius_at_most_one(self):
        for k, seed in ((3, 0), (5, 1), (8, 2), (12, 3)):
            lam = np.abs(np.linalg.eigvals(random_adjacency(k, seed))).max()
            assert lam <= 1.0 + 1e-9

    def test_nonnegative_entries(self):
        assert (random_adjacency(7, 5) >= 0).all()


class TestDistanceAdjacency:
    def test_self_loops_and_symmetry(self):
        coords = np.random.default_rng(1).uniform(0, 1, size=(6, 2))
        adj = distance_adjacency(coords)
        assert adj.shape == (6, 6)
        np.testing.assert_allclose(adj, adj.T, atol=1e-12)
        assert (np.diag(adj) > 0).all()

    def test_coincident_sensors_fall_back_to_identity(self):
        np.testing.assert_allclose(distance_adjacency(np.zeros((4, 2))), np.eye(4))


class TestPermutation:
    def _batch(self):
        ds = synth_generate(SynthConfig(k=6, n=40, clusters=2, noise=1.0, seed=2))
        mask = sparsify(ds, 0.5, seed=1)
        feats = build_features(ds)
        from suster.batching import WindowTensorSource

        src = WindowTensorSource(ds, mask, feats)
        return src.batch(np.arange(4), need_dense=True)

    def test_identity_permutation_unchanged(self):
        batch = self._batch()
        out = apply_sensor_permutation(batch, np.arange(6))
        assert torch.equal(out.dense, batch.dense)
        assert torch.equal(out.targets, batch.targets)
        assert torch.equal(out.queries, batch.queries)

    def test_inverse_restores_batch(self):
        batch = self._batch()
        perm = np.random.default_rng(3).permutation(6)
        inverse = np.argsort(perm)
        out = apply_sensor_permutation(apply_sensor_permutation(batch, perm), inverse)
        assert torch.equal(out.dense, batch.dense)
        assert torch.equal(out.targets, batch.targets)

    def test_preserves_sensor_pair_multiset(self):
        batch = self._batch()
        out = permute_batch(batch, np.random.default_rng(5))
        pairs = lambda b: sorted(
            (tuple(b.dense[0, :, j, 0].tolist()), float(b.targets[0, j]))
            for j in range(6)
        )
        assert pairs(out) == pairs(batch)

    def test_positions_travel_with_sensors(self):
        batch = self._batch()
        perm = np.random.default_rng(7).permutation(6)
        out = apply_sensor_permutation(batch, perm)
        # lat/lon channels (3, 4) of the permuted batch line up with the
        # permuted query positions wherever the entries are unmasked
        dense = out.dense.numpy()
        for j in range(6):
            rows = dense[:, :, j, 3:5].reshape(-1, 2)
            unmasked = rows[(np.abs(rows).sum(axis=1) > 0)]
            for row in unmasked:
                np.testing.assert_allclose(row, out.queries[j].numpy(), atol=1e-6)

    def test_equivariant_model_metrics_unchanged(self):
        # a per-sensor-independent toy model: predict the last observed
        # speed channel, which permutes together with the targets
        batch = self._batch()

        def toy(b):
            return b.dense[:, -1, :, 0]

        base = compute_metrics(toy(batch).numpy(), batch.targets.numpy())
        shuffled = permute_batch(batch, np.random.default_rng(11))
        after = compute_metrics(toy(shuffled).numpy(), shuffled.targets.numpy())
        assert base == pytest.approx(after)


class TestStgcnBaseline:
    def _data(self, dropout=0.9):
        ds = synth_generate(SynthConfig(k=5, n=60, clusters=2, noise=1.0, seed=4))
        mask = sparsify(ds, dropout, seed=2)
        feats = build_features(ds)
        from suster.batching import WindowTensorSource

        src = WindowTensorSource(ds, mask, feats)
        return ds, src

    def test_output_length_k(self):
        ds, src = self._data()
        model = StgcnBaseline(5, 12, distance_adjacency(ds.sensor_coords), seed=0)
        batch = src.batch(np.arange(3), need_dense=True)
        assert model.forward_batch(batch).shape == (3, 5)

    def test_all_dropout_inputs_finite(self):
        ds, src = self._data(dropout=1.0)
        model = StgcnBaseline(5, 12, random_adjacency(5, 1), seed=0)
        batch = src.batch(np.arange(2), need_dense=True)
        assert (batch.dense == 0).all()
        out = model.forward_batch(batch)
        assert torch.isfinite(out).all()

    def test_matches_naive_loop_oracle(self):
        ds, src = self._data()
        model = StgcnBaseline(5, 12, random_adjacency(5, 9), seed=3).double()
        batch = src.batch(np.arange(2), need_dense=True).to_dtype(torch.float64)
        fast = model.forward_batch(batch)
        for b in range(2):
            naive = naive_stack_forward(
                model.stack,
                batch.dense[b].numpy(),
                model.propagation_matrix.double().numpy(),
            )
            assert np.abs(fast[b].detach().numpy() - naive[:, 0]).max() < 1e-5

    def test_functional_forward_uses_given_laplacian(self):
        ds, src = self._data()
        model = StgcnBaseline(5, 12, random_adjacency(5, 1), seed=0)
        batch = src.batch(np.arange(2), need_dense=True)
        explicit = stgcn_baseline_forward(
            model, batch, torch.as_tensor(random_adjacency(5, 1), dtype=torch.float32)
        )
        assert torch.allclose(explicit, model.forward_batch(batch))

    def test_requires_dense_layout(self):
        ds, src = self._data()
        model = StgcnBaseline(5, 12, random_adjacency(5, 1), seed=0)
        with pytest.raises(ValueError, match="dense"):
            model.forward_batch(src.batch(np.arange(2), need_dense=False))

    def test_label_scheme(self):
        assert BaselineConfig().label() == "stgcn"
        assert BaselineConfig(use_random_adjacency=True).label() == "stgcn_adj"
        assert BaselineConfig(use_permutation=True).label() == "stgcn_perm"
        assert (
            BaselineConfig(use_random_adjacency=True, use_permutation=True).label()
            == "stgcn_adj_perm"
        )


class TestNaivePredictors:
    def test_constant_dataset_climatology_exact(self):
        rng = np.random.default_rng(0)
        readings = np.tile(rng.uniform(20, 60, size=(1, 4)), (40, 1))
        readings += rng.normal(0, 1e-9, size=readings.shape)  # avoid zero variance
        ds = DenseDataset(
            readings=readings,
            sensor_coords=rng.uniform(0, 1, size=(4, 2)),
            start_time=datetime(2023, 5, 1),
            interval_minutes=5,
        )
        mask = sparsify(ds, 0.9, seed=1)
        feats = build_features(ds)
        ws = window(ds, mask, feats)
        predictors = NaivePredictors.fit(ds, train_rows=28)
        preds = np.array([predictors.climatology(ds, w) for w in ws])
        targets = np.array([w.targets for w in ws])
        assert compute_metrics(preds, targets)["mae"] < 1e-6

    def test_carry_forward_uses_last_observation(self):
        ds = synth_generate(SynthConfig(k=3, n=20, clusters=3, noise=1.0, seed=6))
        bits = np.zeros((20, 3), dtype=np.uint8)
        bits[11, 1] = 1  # sensor 1 observed at window step 11
        bits[3, 1] = 1   # earlier observation must be superseded
        mask = SparseMask(mask=bits, dropout=0.9, seed=0)
        feats = build_features(ds)
        w = window(ds, mask, feats)[0]
        predictors = NaivePredictors.fit(ds, train_rows=14)
        pred = predictors.carry_forward(ds, mask, w)
        assert pred[1] == pytest.approx(ds.readings[11, 1])
        # never-observed sensors fall back to the global train mean
        assert pred[0] == pytest.approx(ds.readings[:14].mean())
        assert pred[2] == pytest.approx(ds.readings[:14].mean())

    def test_naive_baselines_bundle(self, small_data):
        ds, mask = small_data["dataset"], small_data["mask"]
        predictors = NaivePredictors.fit(ds, train_rows=80)
        out = naive_baselines(small_data["windows"][0], predictors, ds, mask)
        assert set(out) == {"climatology", "carry_forward"}
        assert out["climatology"].shape == (8,)
