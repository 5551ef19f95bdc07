import json
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suster.datasets import (
    DatasetError,
    DenseDataset,
    SparseMask,
    SplitSpec,
    SynthConfig,
    apply_mask,
    build_features,
    load_dense_dataset,
    load_mask,
    save_dense_dataset,
    save_mask,
    sparsify,
    split,
    synth_generate,
    window,
)


def make_dataset(n=20, k=3, start="2023-04-30T00:00:00", seed=0):
    rng = np.random.default_rng(seed)
    return DenseDataset(
        readings=rng.uniform(20, 70, size=(n, k)),
        sensor_coords=rng.uniform([34.0, -118.5], [34.3, -118.0], size=(k, 2)),
        start_time=datetime.fromisoformat(start),
        interval_minutes=5,
    )


# ---------------------------------------------------------------------------
# Loader
# ---------------------------------------------------------------------------

class TestLoader:
    def test_round_trip_shapes(self, tmp_path):
        ds = make_dataset(n=4, k=2)
        save_dense_dataset(ds, tmp_path)
        loaded = load_dense_dataset(tmp_path)
        assert loaded.n == 4 and loaded.k == 2
        np.testing.assert_allclose(loaded.readings, ds.readings, atol=1e-6)
        np.testing.assert_allclose(loaded.sensor_coords, ds.sensor_coords, atol=1e-8)
        assert loaded.start_time == ds.start_time

    def test_row_count_mismatch(self, tmp_path):
        save_dense_dataset(make_dataset(n=4, k=2), tmp_path)
        meta = json.loads((tmp_path / "meta.json").read_text())
        meta["n"] = 7
        (tmp_path / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(DatasetError, match="meta.json says n=7"):
            load_dense_dataset(tmp_path)

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        save_dense_dataset(make_dataset(n=3, k=2), tmp_path)
        lines = (tmp_path / "readings.csv").read_text().splitlines()
        parts = lines[1].split(",")
        parts[1] = "oops"
        lines[1] = ",".join(parts)
        (tmp_path / "readings.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError, match=r"row 1, column 1"):
            load_dense_dataset(tmp_path)

    def test_missing_file(self, tmp_path):
        save_dense_dataset(make_dataset(), tmp_path)
        (tmp_path / "sensors.csv").unlink()
        with pytest.raises(DatasetError, match="missing dataset file"):
            load_dense_dataset(tmp_path)

    def test_sensor_count_mismatch(self, tmp_path):
        save_dense_dataset(make_dataset(n=4, k=3), tmp_path)
        lines = (tmp_path / "sensors.csv").read_text().splitlines()
        (tmp_path / "sensors.csv").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DatasetError, match="sensors.csv lists 2"):
            load_dense_dataset(tmp_path)


# ---------------------------------------------------------------------------
# Sparsifier
# ---------------------------------------------------------------------------

class TestSparsify:
    def test_zero_dropout_is_identity(self):
        ds = make_dataset(n=50, k=4)
        mask = sparsify(ds, 0.0, seed=1)
        assert mask.mask.all()
        np.testing.assert_array_equal(apply_mask(ds.readings, mask), ds.readings)

    def test_full_dropout_all_zero(self):
        mask = sparsify(make_dataset(), 1.0, seed=1)
        assert not mask.mask.any()

    def test_deterministic_given_seed(self):
        ds = make_dataset(n=40, k=5)
        a = sparsify(ds, 0.7, seed=9)
        b = sparsify(ds, 0.7, seed=9)
        np.testing.assert_array_equal(a.mask, b.mask)
        c = sparsify(ds, 0.7, seed=10)
        assert not np.array_equal(a.mask, c.mask)

    def test_mask_file_bytes_deterministic(self, tmp_path):
        ds = make_dataset(n=30, k=4)
        for name in ("a.csv", "b.csv"):
            save_mask(sparsify(ds, 0.5, seed=3), tmp_path / name)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        loaded = load_mask(tmp_path / "a.csv")
        np.testing.assert_array_equal(loaded.mask, sparsify(ds, 0.5, seed=3).mask)

    def test_row_major_draw_order(self):
        # the mask must equal the one produced by looping timestep-outer,
        # sensor-inner over a single stream of uniforms
        ds = make_dataset(n=6, k=4)
        mask = sparsify(ds, 0.4, seed=13)
        rng = np.random.default_rng(13)
        expected = np.empty((6, 4), dtype=np.uint8)
        for i in range(6):
            for j in range(4):
                expected[i, j] = 1 if rng.random() > 0.4 else 0
        np.testing.assert_array_equal(mask.mask, expected)

    def test_binomial_keep_statistics(self):
        # derived oracle: mean kept sensors per timestep for k=207, P_do=0.99
        # is k*(1-p) = 2.07 with std of the mean sqrt(k*p*(1-p)/n)
        n, k, p = 10_000, 207, 0.99
        ds = DenseDataset(
            readings=np.ones((n, k)),
            sensor_coords=np.random.default_rng(0).uniform(0, 1, size=(k, 2)),
            start_time=datetime(2023, 1, 1),
            interval_minutes=5,
        )
        mask = sparsify(ds, p, seed=2)
        kept_per_step = mask.mask.sum(axis=1).mean()
        expected = k * (1 - p)
        sigma = np.sqrt(k * p * (1 - p) / n)
        assert abs(kept_per_step - expected) < 3 * sigma

    def test_dropout_out_of_range(self):
        with pytest.raises(DatasetError, match="dropout"):
            sparsify(make_dataset(), 1.5, seed=0)

    @settings(max_examples=25, deadline=None)
    @given(
        dropout=st.floats(0.0, 1.0),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_mask_entries_binary_and_reproducible(self, dropout, seed):
        ds = make_dataset(n=8, k=3)
        mask = sparsify(ds, dropout, seed)
        assert np.isin(mask.mask, (0, 1)).all()
        np.testing.assert_array_equal(mask.mask, sparsify(ds, dropout, seed).mask)

    def test_invalid_mask_entries_rejected(self):
        with pytest.raises(DatasetError):
            SparseMask(mask=np.array([[0, 2]]), dropout=0.5, seed=0)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

class TestFeatures:
    def test_calendar_arithmetic(self):
        # start Sunday 00:00, 5-minute interval: t=12 is 01:00 Sunday
        ds = make_dataset(n=20, k=2, start="2023-04-30T00:00:00")
        assert ds.start_time.weekday() == 6  # Sunday
        feats = build_features(ds)
        assert feats.time_of_day[12] == pytest.approx(60 / 1440)
        assert feats.day_of_week[12] == 6
        np.testing.assert_allclose(feats.features[12, :, 1], 60 / 1440)
        np.testing.assert_allclose(feats.features[12, :, 2], 6 / 7)

    def test_day_rollover(self):
        # 5 min * 300 = 25h: Sunday 00:00 -> Monday 01:00
        ds = make_dataset(n=301, k=2, start="2023-04-30T00:00:00")
        feats = build_features(ds)
        assert feats.day_of_week[300] == 0
        assert feats.time_of_day[300] == pytest.approx(60 / 1440)

    def test_bounding_box_corner_normalizes_to_origin(self):
        coords = np.array([[34.0, -118.5], [34.3, -118.0], [34.1, -118.2]])
        ds = DenseDataset(
            readings=np.random.default_rng(0).uniform(10, 60, size=(15, 3)),
            sensor_coords=coords,
            start_time=datetime(2023, 5, 1),
            interval_minutes=5,
        )
        feats = build_features(ds)
        np.testing.assert_allclose(feats.norm_coords[0], [0.0, 0.0])
        np.testing.assert_allclose(feats.norm_coords[1], [1.0, 1.0])

    def test_constant_speed_raises(self):
        ds = DenseDataset(
            readings=np.full((15, 3), 42.0),
            sensor_coords=np.random.default_rng(0).uniform(0, 1, size=(3, 2)),
            start_time=datetime(2023, 5, 1),
            interval_minutes=5,
        )
        with pytest.raises(DatasetError, match="variance"):
            build_features(ds)

    def test_speed_round_trip(self):
        ds = make_dataset(n=50, k=4)
        feats = build_features(ds)
        speeds = ds.readings
        back = feats.scaler.denormalize(feats.scaler.normalize(speeds))
        np.testing.assert_allclose(back, speeds, rtol=1e-6)

    def test_train_only_statistics(self):
        ds = make_dataset(n=100, k=3)
        feats = build_features(ds, train_fraction=0.7)
        train_rows = ds.readings[:70]
        assert feats.scaler.mean == pytest.approx(train_rows.mean())
        assert feats.scaler.std == pytest.approx(train_rows.std())

    def test_position_round_trip(self):
        ds = make_dataset(n=20, k=5)
        feats = build_features(ds)
        restored = feats.denormalize_position(feats.norm_coords)
        np.testing.assert_allclose(restored, ds.sensor_coords, rtol=1e-9)


# ---------------------------------------------------------------------------
# Windows and splits
# ---------------------------------------------------------------------------

class TestWindows:
    def test_boundary_count(self):
        ds = make_dataset(n=13, k=2)
        mask = sparsify(ds, 0.5, seed=0)
        ws = window(ds, mask, build_features(ds))
        assert len(ws) == 1

    def test_window_count_equals_n_minus_lead(self):
        ds = make_dataset(n=40, k=2)
        ws = window(ds, sparsify(ds, 0.3, seed=1), build_features(ds))
        assert len(ws) == 40 - 12

    def test_empty_observation_window_valid(self):
        ds = make_dataset(n=14, k=2)
        mask = sparsify(ds, 1.0, seed=0)
        ws = window(ds, mask, build_features(ds))
        assert all(w.num_observations() == 0 for w in ws)
        assert ws[0].targets.shape == (2,)

    def test_observations_match_mask_entries(self):
        # derived by enumerating a hand-placed mask: exactly 3 ones in rows 0..11
        ds = make_dataset(n=13, k=4)
        bits = np.zeros((13, 4), dtype=np.uint8)
        placed = [(0, 2), (5, 0), (11, 3)]
        for t, j in placed:
            bits[t, j] = 1
        mask = SparseMask(mask=bits, dropout=0.5, seed=0)
        feats = build_features(ds)
        w = window(ds, mask, feats)[0]
        assert w.num_observations() == 3
        slots = [(i, obs) for i, step in enumerate(w.observations) for obs in step]
        assert [i for i, _ in slots] == [0, 5, 11]
        for (t, j), (_, obs) in zip(placed, slots):
            np.testing.assert_allclose(obs.s, feats.norm_coords[j])
            assert obs.y[0] == pytest.approx(feats.features[t, j, 0])

    def test_observation_count_equals_mask_ones(self, small_data):
        mask, ws = small_data["mask"], small_data["windows"]
        for w in ws[:10]:
            expected = int(mask.mask[w.start : w.start + 12].sum())
            assert w.num_observations() == expected

    def test_targets_always_dense(self):
        ds = make_dataset(n=30, k=3)
        feats = build_features(ds)
        sparse = window(ds, sparsify(ds, 1.0, seed=0), feats)
        dense = window(ds, sparsify(ds, 0.0, seed=0), feats)
        for a, b in zip(sparse, dense):
            np.testing.assert_array_equal(a.targets, b.targets)
            np.testing.assert_array_equal(a.targets, ds.readings[a.start + 12])

    def test_too_short_raises(self):
        ds = make_dataset(n=12, k=2)
        with pytest.raises(DatasetError):
            window(ds, sparsify(ds, 0.5, seed=0), build_features(ds))


class TestSplit:
    def _windows(self, count):
        ds = make_dataset(n=count + 12, k=2)
        return window(ds, sparsify(ds, 0.9, seed=0), build_features(ds))

    def test_default_split_70_10_20(self):
        tr, va, te = split(self._windows(100), SplitSpec())
        assert (len(tr), len(va), len(te)) == (70, 10, 20)
        starts = [w.start for w in tr + va + te]
        assert starts == sorted(starts)  # contiguous in time

    def test_subfraction_keeps_first_part(self):
        ws = self._windows(100)
        full_train, _, _ = split(ws, SplitSpec())
        tr, va, te = split(ws, SplitSpec(train_subfraction=0.5))
        assert len(tr) == 35
        assert [w.start for w in tr] == [w.start for w in full_train[:35]]
        assert (len(va), len(te)) == (10, 20)

    def test_subfraction_one_is_identity(self):
        ws = self._windows(60)
        a = split(ws, SplitSpec())
        b = split(ws, SplitSpec(train_subfraction=1.0))
        assert [w.start for w in a[0]] == [w.start for w in b[0]]

    def test_empty_split_raises(self):
        with pytest.raises(DatasetError):
            split(self._windows(4), SplitSpec())

    def test_bad_fractions_raise(self):
        with pytest.raises(DatasetError):
            SplitSpec(train_fraction=0.5, val_fraction=0.1, test_fraction=0.2)
        with pytest.raises(DatasetError):
            SplitSpec(train_subfraction=0.0)


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

class TestSynth:
    def test_zero_noise_emits_cluster_profile_exactly(self):
        cfg = SynthConfig(k=9, n=200, clusters=3, noise=0.0, seed=5)
        ds = synth_generate(cfg)
        # sensors j and j+clusters share a cluster: identical readings
        for j in range(3):
            np.testing.assert_array_equal(ds.readings[:, j], ds.readings[:, j + 3])
        # distinct clusters differ
        assert not np.array_equal(ds.readings[:, 0], ds.readings[:, 1])

    def test_same_seed_identical(self):
        cfg = SynthConfig(k=6, n=100, clusters=2, noise=1.0, seed=9)
        a, b = synth_generate(cfg), synth_generate(cfg)
        np.testing.assert_array_equal(a.readings, b.readings)
        np.testing.assert_array_equal(a.sensor_coords, b.sensor_coords)

    def test_seed_override(self):
        cfg = SynthConfig(k=6, n=100, clusters=2, noise=1.0, seed=9)
        a = synth_generate(cfg, seed=10)
        b = synth_generate(cfg)
        assert not np.array_equal(a.readings, b.readings)

    def test_too_few_sensors(self):
        with pytest.raises(DatasetError):
            synth_generate(SynthConfig(k=2, n=50, clusters=4))

    def test_climatology_oracle_positive(self):
        # brute-force climatology on a noisy set must leave residual error
        ds = synth_generate(SynthConfig(k=8, n=600, clusters=2, noise=1.0, seed=4))
        train_rows = int(0.7 * ds.n)
        slots = 1440 // ds.interval_minutes
        table = {}
        for t in range(train_rows):
            ts = ds.timestamp(t)
            table.setdefault((ts.hour * 60 + ts.minute) // 5, []).append(ds.readings[t])
        errors = []
        for t in range(train_rows, ds.n):
            ts = ds.timestamp(t)
            slot = (ts.hour * 60 + ts.minute) // 5
            if slot in table:
                pred = np.mean(table[slot], axis=0)
                errors.append(np.abs(pred - ds.readings[t]).mean())
        assert np.mean(errors) > 0.1
