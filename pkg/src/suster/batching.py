"""Collation of sample windows into tensor batches.

Two producers exist: :func:`collate_windows` builds a batch from materialized
:class:`~suster.datasets.SampleWindow` objects, while :class:`WindowTensorSource`
collates straight from the dataset arrays (the fast path used by training —
no per-observation python objects).  Both yield identical batches for the
same window starts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .datasets import (
    LEAD_TIME,
    NUM_FEATURES,
    DenseDataset,
    FeatureSet,
    SampleWindow,
    SparseMask,
)


@dataclass
class WindowBatch:
    """Tensor view of a batch of sample windows.

    ``step_feats[i]`` stacks the 5-channel feature vectors of every
    observation at window-timestep ``i`` across the whole batch;
    ``step_win[i]`` says which batch element each observation belongs to.
    ``dense`` is the zero-filled per-sensor layout used by the grid
    baselines, present only when requested.
    """

    t0: torch.Tensor                  # [B, 2]
    step_feats: list[torch.Tensor]    # m tensors [N_i, 5]
    step_pos: list[torch.Tensor]      # m tensors [N_i, 2]
    step_win: list[torch.Tensor]      # m long tensors [N_i]
    queries: torch.Tensor             # [k, 2]
    targets: torch.Tensor             # [B, k] original speed units
    dense: torch.Tensor | None = None  # [B, m, k, 5] masked features

    @property
    def size(self) -> int:
        return self.t0.shape[0]

    @property
    def lead_time(self) -> int:
        return len(self.step_feats)

    def to_dtype(self, dtype: torch.dtype) -> "WindowBatch":
        return WindowBatch(
            t0=self.t0.to(dtype),
            step_feats=[f.to(dtype) for f in self.step_feats],
            step_pos=[p.to(dtype) for p in self.step_pos],
            step_win=list(self.step_win),
            queries=self.queries.to(dtype),
            targets=self.targets.to(dtype),
            dense=None if self.dense is None else self.dense.to(dtype),
        )


def collate_windows(windows: list[SampleWindow], dtype=torch.float32) -> WindowBatch:
    """Builds a batch from window objects (observation path only)."""
    if not windows:
        raise ValueError("cannot collate an empty batch")
    m = len(windows[0].observations)
    step_feats, step_pos, step_win = [], [], []
    for i in range(m):
        feats, pos, win = [], [], []
        for b, w in enumerate(windows):
            for obs in w.observations[i]:
                feats.append(np.concatenate([obs.y, obs.s]))
                pos.append(obs.s)
                win.append(b)
        step_feats.append(
            torch.as_tensor(np.array(feats).reshape(-1, NUM_FEATURES), dtype=dtype)
        )
        step_pos.append(torch.as_tensor(np.array(pos).reshape(-1, 2), dtype=dtype))
        step_win.append(torch.as_tensor(np.array(win, dtype=np.int64)))
    return WindowBatch(
        t0=torch.as_tensor(np.array([w.t0 for w in windows]), dtype=dtype),
        step_feats=step_feats,
        step_pos=step_pos,
        step_win=step_win,
        queries=torch.from_numpy(np.array(windows[0].query_locations)).to(dtype),
        targets=torch.as_tensor(np.array([w.targets for w in windows]), dtype=dtype),
    )


class WindowTensorSource:
    """Array-indexed window collation over a (dataset, mask, features) triple."""

    def __init__(
        self,
        dataset: DenseDataset,
        mask: SparseMask,
        features: FeatureSet,
        lead_time: int = LEAD_TIME,
        dtype=torch.float32,
    ):
        self.dataset = dataset
        self.mask = mask
        self.features = features
        self.lead_time = lead_time
        self.dtype = dtype
        self.num_windows = dataset.n - lead_time
        if self.num_windows < 1:
            raise ValueError("dataset too short for a single window")

        self._feats = torch.from_numpy(features.features.copy()).to(dtype)
        self._targets = torch.from_numpy(dataset.readings.copy()).to(dtype)
        self._queries = torch.from_numpy(features.norm_coords.copy()).to(dtype)
        self._kept = [np.flatnonzero(mask.mask[r]) for r in range(dataset.n)]
        t0 = np.stack(
            [features.time_of_day, features.day_of_week / 7.0], axis=1
        )
        self._t0 = torch.as_tensor(t0, dtype=dtype)
        self._mask_t = torch.as_tensor(mask.mask.astype(np.float32), dtype=dtype)

    def batch(self, starts, need_dense: bool = False) -> WindowBatch:
        starts = np.asarray(starts, dtype=np.int64)
        if starts.size == 0:
            raise ValueError("cannot collate an empty batch")
        m, k = self.lead_time, self.dataset.k
        step_feats, step_pos, step_win = [], [], []
        for i in range(m):
            rows = starts + i
            sensors = [self._kept[r] for r in rows]
            counts = [len(s) for s in sensors]
            win = np.repeat(np.arange(len(starts)), counts)
            if sum(counts):
                row_idx = np.repeat(rows, counts)
                col_idx = np.concatenate(sensors)
                feats = self._feats[row_idx, col_idx]
            else:
                feats = self._feats.new_zeros((0, NUM_FEATURES))
            step_feats.append(feats)
            step_pos.append(feats[:, 3:5])
            step_win.append(torch.as_tensor(win))

        dense = None
        if need_dense:
            # [B, m, k, 5] with all channels of dropped entries zero-filled
            rows = starts[:, None] + np.arange(m)[None, :]
            dense = self._feats[rows.reshape(-1)].reshape(len(starts), m, k, NUM_FEATURES)
            dense = dense * self._mask_t[rows.reshape(-1)].reshape(len(starts), m, k, 1)

        return WindowBatch(
            t0=self._t0[starts],
            step_feats=step_feats,
            step_pos=step_pos,
            step_win=step_win,
            queries=self._queries,
            targets=self._targets[starts + m],
            dense=dense,
        )


def apply_sensor_permutation(batch: WindowBatch, perm) -> WindowBatch:
    """Reorders the sensor axis of the dense inputs, targets and query
    positions identically.  Positions travel with their sensors as feature
    channels, so location information survives the shuffle."""
    perm = torch.as_tensor(np.asarray(perm, dtype=np.int64))
    return replace(
        batch,
        queries=batch.queries[perm],
        targets=batch.targets[:, perm],
        dense=None if batch.dense is None else batch.dense[:, :, perm, :],
    )


def permute_batch(batch: WindowBatch, generator: np.random.Generator) -> WindowBatch:
    """One fresh sensor permutation per batch, applied identically to inputs
    and targets, so no fixed sensor-to-slot identity survives."""
    return apply_sensor_permutation(batch, generator.permutation(batch.targets.shape[1]))
