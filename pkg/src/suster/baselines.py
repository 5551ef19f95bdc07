"""Grid baselines and naive reference predictors.

The grid baseline is the standard ST-graph-convolution stack applied over
all k sensor nodes with dense (zero-filled) inputs.  Two fairness
modifications strip its prior knowledge: ``adj`` replaces the
coordinate-derived adjacency with a fixed random one, and ``perm`` applies a
fresh sensor permutation to every batch so no fixed sensor-to-slot identity
can be learned (positions stay available as feature channels).

The naive predictors (climatology and carry-forward) are the acceptance
oracles: if a trained model cannot beat them, it has learned nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .batching import WindowBatch, permute_batch  # noqa: F401  (re-export)
from .datasets import (
    MINUTES_PER_DAY,
    NUM_FEATURES,
    DenseDataset,
    SampleWindow,
    SparseMask,
)
from .stgnn import SpatioTemporalStack, StgnnConfig


@dataclass(frozen=True)
class BaselineConfig:
    use_random_adjacency: bool = False
    use_permutation: bool = False
    adjacency_seed: int = 0

    def label(self) -> str:
        name = "stgcn"
        if self.use_random_adjacency:
            name += "_adj"
        if self.use_permutation:
            name += "_perm"
        return name

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineConfig":
        return cls(
            use_random_adjacency=bool(d.get("adj", d.get("use_random_adjacency", False))),
            use_permutation=bool(d.get("perm", d.get("use_permutation", False))),
            adjacency_seed=int(d.get("adjacency_seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "adj": self.use_random_adjacency,
            "perm": self.use_permutation,
            "adjacency_seed": self.adjacency_seed,
        }


def _sym_normalize(adj: np.ndarray) -> np.ndarray:
    degree = adj.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(degree, 1e-12))
    return inv_sqrt[:, None] * adj * inv_sqrt[None, :]


def clamped_normalized_adjacency(draws: np.ndarray) -> np.ndarray:
    """Clamps negative draws to zero, adds self-loops, then applies the
    symmetric D^-1/2 A D^-1/2 normalization."""
    draws = np.asarray(draws, dtype=np.float64)
    adj = np.maximum(draws, 0.0) + np.eye(draws.shape[0])
    return _sym_normalize(adj)


def random_adjacency(k: int, seed: int) -> np.ndarray:
    """Normalized propagation matrix from i.i.d. standard-normal draws,
    keeping the operator well-defined despite negative draws.  Drawn once per
    training run and constant thereafter."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    return clamped_normalized_adjacency(rng.normal(0.0, 1.0, size=(k, k)))


def distance_adjacency(coords: np.ndarray, threshold: float = 0.1) -> np.ndarray:
    """Coordinate-derived prior adjacency: thresholded Gaussian kernel on
    pairwise sensor distances (the usual construction when no explicit road
    graph ships with a dataset), symmetrically normalized."""
    coords = np.asarray(coords, dtype=np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    sigma = dist.std()
    if sigma < 1e-12:
        adj = np.eye(len(coords))
    else:
        adj = np.exp(-((dist / sigma) ** 2))
        adj[adj < threshold] = 0.0
    return _sym_normalize(adj)


class StgcnBaseline(nn.Module):
    """Dense-input baseline: 12 input steps over k sensor nodes, one output
    step per sensor, full-size (factor 1.0) stack."""

    def __init__(
        self,
        k: int,
        lead_time: int,
        propagation: np.ndarray,
        stgnn: StgnnConfig | None = None,
        seed: int | None = None,
        baseline: BaselineConfig = BaselineConfig(),
    ):
        super().__init__()
        self.k = k
        self.baseline = baseline
        cfg = stgnn or StgnnConfig(factor=1.0)
        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            self.stack = SpatioTemporalStack(NUM_FEATURES, 1, lead_time, cfg)
        self.register_buffer(
            "propagation_matrix", torch.as_tensor(propagation, dtype=torch.float32)
        )
        self.use_permutation = baseline.use_permutation
        self.needs_dense_input = True

    def forward_batch(
        self, batch: WindowBatch, mode: str | None = None, generator=None
    ) -> torch.Tensor:
        if batch.dense is None:
            raise ValueError("baseline batches need the dense input layout")
        lap = self.propagation_matrix.to(batch.dense.dtype)
        return self.stack(batch.dense, lap).squeeze(-1)

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def stgcn_baseline_forward(
    model: StgcnBaseline, batch: WindowBatch, laplacian: torch.Tensor
) -> torch.Tensor:
    """Functional forward with an explicit propagation matrix."""
    if batch.dense is None:
        raise ValueError("baseline batches need the dense input layout")
    return model.stack(batch.dense, laplacian.to(batch.dense.dtype)).squeeze(-1)


# ---------------------------------------------------------------------------
# Naive reference predictors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NaivePredictors:
    """Climatology (train-split mean per sensor per time-of-day slot) and
    last-observed-value carry-forward with a global-train-mean fallback."""

    climatology_table: np.ndarray  # [slots_per_day, k]
    global_mean: float
    slots_per_day: int
    interval_minutes: int

    @classmethod
    def fit(cls, dataset: DenseDataset, train_rows: int) -> "NaivePredictors":
        slots = int(MINUTES_PER_DAY // dataset.interval_minutes)
        sums = np.zeros((slots, dataset.k))
        counts = np.zeros(slots)
        for t in range(train_rows):
            slot = cls._slot(dataset, t)
            sums[slot] += dataset.readings[t]
            counts[slot] += 1
        global_mean = float(dataset.readings[:train_rows].mean())
        sensor_mean = dataset.readings[:train_rows].mean(axis=0)
        table = np.where(
            counts[:, None] > 0,
            sums / np.maximum(counts[:, None], 1),
            sensor_mean[None, :],
        )
        return cls(
            climatology_table=table,
            global_mean=global_mean,
            slots_per_day=slots,
            interval_minutes=dataset.interval_minutes,
        )

    @staticmethod
    def _slot(dataset: DenseDataset, t: int) -> int:
        ts = dataset.timestamp(t)
        return (ts.hour * 60 + ts.minute) // dataset.interval_minutes

    def climatology(self, dataset: DenseDataset, window: SampleWindow) -> np.ndarray:
        target_row = window.start + len(window.observations)
        return self.climatology_table[self._slot(dataset, target_row)].copy()

    def carry_forward(
        self, dataset: DenseDataset, mask: SparseMask, window: SampleWindow
    ) -> np.ndarray:
        m = len(window.observations)
        rows = mask.mask[window.start : window.start + m]
        pred = np.full(dataset.k, self.global_mean)
        for j in range(dataset.k):
            observed = np.flatnonzero(rows[:, j])
            if observed.size:
                pred[j] = dataset.readings[window.start + observed[-1], j]
        return pred


def naive_baselines(
    window: SampleWindow,
    predictors: NaivePredictors,
    dataset: DenseDataset,
    mask: SparseMask,
) -> dict[str, np.ndarray]:
    return {
        "climatology": predictors.climatology(dataset, window),
        "carry_forward": predictors.carry_forward(dataset, mask, window),
    }
