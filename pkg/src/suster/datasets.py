"""Dense sensor datasets, sparsification masks, features, windows and splits.

Everything in this module is plain numpy and is deterministic given its
inputs and seeds.  Dataset objects are immutable after load; mask generation
is a pure function of (shape, dropout, seed).

Dataset directory layout::

    readings.csv   n rows x k comma-separated numeric columns, no header
    sensors.csv    header ``sensor_id,latitude,longitude``
    meta.json      keys: n, k, start_time (ISO-8601), interval_minutes

Masks are stored as ``mask.csv`` with the same shape as the readings and
entries in {0, 1}.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

LEAD_TIME = 12
MINUTES_PER_DAY = 1440.0


class DatasetError(ValueError):
    """Raised for malformed dataset directories or invalid dataset arguments."""


@dataclass(frozen=True)
class DenseDataset:
    """Fully observed sensor field: ``readings[t, j]`` is the speed of sensor
    ``j`` at timestep ``t``.  Missingness is never stored here; it lives in a
    separate :class:`SparseMask` so a true zero reading stays distinguishable
    from a dropped one."""

    readings: np.ndarray          # [n, k] float
    sensor_coords: np.ndarray     # [k, 2] (latitude, longitude) degrees
    start_time: datetime
    interval_minutes: int
    sensor_ids: tuple[str, ...] = ()

    def __post_init__(self):
        readings = np.asarray(self.readings, dtype=np.float64)
        coords = np.asarray(self.sensor_coords, dtype=np.float64)
        if readings.ndim != 2:
            raise DatasetError(f"readings must be 2-D, got shape {readings.shape}")
        if coords.shape != (readings.shape[1], 2):
            raise DatasetError(
                f"sensor_coords shape {coords.shape} does not match "
                f"{readings.shape[1]} sensors"
            )
        if not np.isfinite(readings).all():
            bad = np.argwhere(~np.isfinite(readings))[0]
            raise DatasetError(f"non-finite reading at row {bad[0]}, column {bad[1]}")
        if not np.isfinite(coords).all():
            raise DatasetError("non-finite sensor coordinate")
        if self.interval_minutes <= 0:
            raise DatasetError("interval_minutes must be positive")
        readings.setflags(write=False)
        coords.setflags(write=False)
        object.__setattr__(self, "readings", readings)
        object.__setattr__(self, "sensor_coords", coords)

    @property
    def n(self) -> int:
        return self.readings.shape[0]

    @property
    def k(self) -> int:
        return self.readings.shape[1]

    def timestamp(self, t: int) -> datetime:
        return self.start_time + timedelta(minutes=self.interval_minutes * int(t))

    def time_of_day(self, t: int) -> float:
        """Fraction of the day elapsed at timestep ``t``, in [0, 1)."""
        ts = self.timestamp(t)
        return (ts.hour * 60 + ts.minute + ts.second / 60.0) / MINUTES_PER_DAY

    def day_of_week(self, t: int) -> int:
        """Monday=0 .. Sunday=6 (python's ``weekday`` convention)."""
        return self.timestamp(t).weekday()


@dataclass(frozen=True)
class SparseMask:
    """Bernoulli keep/drop mask: ``mask[t, j] == 1`` keeps the reading."""

    mask: np.ndarray  # [n, k] uint8 in {0, 1}
    dropout: float
    seed: int

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if not np.isin(mask, (0, 1)).all():
            raise DatasetError("mask entries must be exactly 0 or 1")
        mask = mask.astype(np.uint8)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def keep_rate(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class Observation:
    """One kept sensor reading inside a sample window.

    ``t`` is the timestep index within the window (0 .. lead_time-1), ``s``
    the normalized (latitude, longitude) position in [0, 1]^2 and ``y`` the
    value vector (normalized speed, time-of-day fraction, day-of-week / 7).
    """

    t: int
    s: np.ndarray  # [2]
    y: np.ndarray  # [3]


@dataclass(frozen=True)
class SampleWindow:
    """``lead_time`` observed timesteps plus the dense target timestep.

    Targets are always taken from the dense readings (original units),
    regardless of the mask.  Query locations are all k normalized sensor
    positions.
    """

    start: int
    observations: list[list[Observation]]   # length lead_time
    query_locations: np.ndarray              # [k, 2]
    targets: np.ndarray                      # [k] original speed units
    t0: tuple[float, float]                  # (time-of-day, day-of-week / 7)

    def num_observations(self) -> int:
        return sum(len(step) for step in self.observations)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    train_subfraction: float = 1.0

    def __post_init__(self):
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise DatasetError(f"split fractions sum to {total}, expected 1")
        if not 0.0 < self.train_subfraction <= 1.0:
            raise DatasetError("train_subfraction must be in (0, 1]")


@dataclass(frozen=True)
class SpeedScaler:
    """Affine z-score scaler fitted on train-split speeds only."""

    mean: float
    std: float

    def normalize(self, speed):
        return (speed - self.mean) / self.std

    def denormalize(self, z):
        return z * self.std + self.mean


@dataclass(frozen=True)
class FeatureSet:
    """Per-(timestep, sensor) feature tensor with five semantic channels:
    normalized speed, time-of-day fraction, day-of-week / 7, normalized
    latitude, normalized longitude."""

    features: np.ndarray        # [n, k, 5] float64
    scaler: SpeedScaler
    norm_coords: np.ndarray     # [k, 2] in [0, 1]^2
    bbox_min: np.ndarray        # [2]
    bbox_max: np.ndarray        # [2]
    time_of_day: np.ndarray     # [n]
    day_of_week: np.ndarray     # [n] integer codes 0..6

    def denormalize_position(self, s: np.ndarray) -> np.ndarray:
        return self.bbox_min + np.asarray(s) * (self.bbox_max - self.bbox_min)


NUM_FEATURES = 5
SPEED, TIME_OF_DAY, DAY_OF_WEEK, LATITUDE, LONGITUDE = range(NUM_FEATURES)


# ---------------------------------------------------------------------------
# Loading and saving
# ---------------------------------------------------------------------------

def _read_matrix_csv(path: Path) -> np.ndarray:
    """Reads a headerless numeric CSV; on bad cells names the row/column."""
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError:
        with open(path) as fh:
            for i, line in enumerate(fh):
                for j, cell in enumerate(line.rstrip("\n").split(",")):
                    try:
                        float(cell)
                    except ValueError:
                        raise DatasetError(
                            f"{path.name}: non-numeric cell at row {i}, column {j}: {cell!r}"
                        ) from None
        raise DatasetError(f"{path.name}: malformed CSV")
    return data


def load_dense_dataset(path: str | os.PathLike) -> DenseDataset:
    """Loads a dataset directory, cross-checking shapes against ``meta.json``."""
    root = Path(path)
    for name in ("readings.csv", "sensors.csv", "meta.json"):
        if not (root / name).exists():
            raise DatasetError(f"missing dataset file: {root / name}")

    with open(root / "meta.json") as fh:
        meta = json.load(fh)
    for key in ("n", "k", "start_time", "interval_minutes"):
        if key not in meta:
            raise DatasetError(f"meta.json missing key {key!r}")

    readings = _read_matrix_csv(root / "readings.csv")
    if readings.shape[0] != meta["n"]:
        raise DatasetError(
            f"readings has {readings.shape[0]} rows but meta.json says n={meta['n']}"
        )
    if readings.shape[1] != meta["k"]:
        raise DatasetError(
            f"readings has {readings.shape[1]} columns but meta.json says k={meta['k']}"
        )

    sensor_ids: list[str] = []
    coords: list[tuple[float, float]] = []
    with open(root / "sensors.csv") as fh:
        header = fh.readline().strip()
        if header.split(",") != ["sensor_id", "latitude", "longitude"]:
            raise DatasetError(f"sensors.csv has unexpected header: {header!r}")
        for i, line in enumerate(fh):
            parts = line.strip().split(",")
            if len(parts) != 3:
                raise DatasetError(f"sensors.csv: row {i} has {len(parts)} fields")
            try:
                coords.append((float(parts[1]), float(parts[2])))
            except ValueError:
                raise DatasetError(
                    f"sensors.csv: non-numeric coordinate at row {i}"
                ) from None
            sensor_ids.append(parts[0])
    if len(coords) != meta["k"]:
        raise DatasetError(
            f"sensors.csv lists {len(coords)} sensors but meta.json says k={meta['k']}"
        )

    return DenseDataset(
        readings=readings,
        sensor_coords=np.array(coords),
        start_time=datetime.fromisoformat(meta["start_time"]),
        interval_minutes=int(meta["interval_minutes"]),
        sensor_ids=tuple(sensor_ids),
    )


def save_dense_dataset(dataset: DenseDataset, path: str | os.PathLike) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    np.savetxt(root / "readings.csv", dataset.readings, delimiter=",", fmt="%.6f")
    ids = dataset.sensor_ids or tuple(f"s{j}" for j in range(dataset.k))
    with open(root / "sensors.csv", "w") as fh:
        fh.write("sensor_id,latitude,longitude\n")
        for sid, (lat, lon) in zip(ids, dataset.sensor_coords):
            fh.write(f"{sid},{lat:.8f},{lon:.8f}\n")
    with open(root / "meta.json", "w") as fh:
        json.dump(
            {
                "n": dataset.n,
                "k": dataset.k,
                "start_time": dataset.start_time.isoformat(),
                "interval_minutes": dataset.interval_minutes,
            },
            fh,
            indent=2,
        )


def save_mask(mask: SparseMask, path: str | os.PathLike) -> None:
    np.savetxt(path, mask.mask, delimiter=",", fmt="%d")


def load_mask(path: str | os.PathLike, dropout: float = float("nan"), seed: int = -1) -> SparseMask:
    data = _read_matrix_csv(Path(path))
    return SparseMask(mask=data.astype(np.uint8), dropout=dropout, seed=seed)


# ---------------------------------------------------------------------------
# Sparsification
# ---------------------------------------------------------------------------

def sparsify(dataset: DenseDataset, dropout: float, seed: int) -> SparseMask:
    """Draws one uniform per (timestep, sensor) cell in row-major order from a
    seeded PCG64 generator and keeps the sensor iff the draw exceeds the
    dropout probability.  Identical (shape, dropout, seed) always reproduces
    the identical mask."""
    if not 0.0 <= dropout <= 1.0:
        raise DatasetError(f"dropout must be in [0, 1], got {dropout}")
    rng = np.random.default_rng(seed)
    # random((n, k)) fills the array in row-major order with consecutive
    # draws, i.e. timestep-outer / sensor-inner.
    draws = rng.random((dataset.n, dataset.k))
    mask = (draws > dropout).astype(np.uint8)
    return SparseMask(mask=mask, dropout=dropout, seed=seed)


def apply_mask(readings: np.ndarray, mask: SparseMask) -> np.ndarray:
    """Zero-fills dropped readings (the stored-tensor view of the mask)."""
    return readings * mask.mask


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def build_features(dataset: DenseDataset, train_fraction: float = 0.7) -> FeatureSet:
    """Builds the 5-channel feature tensor.

    Speed is z-scored with statistics from the first ``train_fraction`` of
    the timesteps only, so validation/test information never leaks into the
    normalization.
    """
    n, k = dataset.n, dataset.k
    train_rows = max(1, int(train_fraction * n))
    train_speeds = dataset.readings[:train_rows]
    std = float(train_speeds.std())
    if std < 1e-12:
        raise DatasetError("train-split speed variance is zero; cannot z-score")
    scaler = SpeedScaler(mean=float(train_speeds.mean()), std=std)

    bbox_min = dataset.sensor_coords.min(axis=0)
    bbox_max = dataset.sensor_coords.max(axis=0)
    extent = bbox_max - bbox_min
    safe_extent = np.where(extent > 0, extent, 1.0)
    norm_coords = (dataset.sensor_coords - bbox_min) / safe_extent

    tod = np.array([dataset.time_of_day(t) for t in range(n)])
    dow = np.array([dataset.day_of_week(t) for t in range(n)], dtype=np.int64)

    features = np.empty((n, k, NUM_FEATURES), dtype=np.float64)
    features[:, :, SPEED] = scaler.normalize(dataset.readings)
    features[:, :, TIME_OF_DAY] = tod[:, None]
    features[:, :, DAY_OF_WEEK] = dow[:, None] / 7.0
    features[:, :, LATITUDE] = norm_coords[None, :, 0]
    features[:, :, LONGITUDE] = norm_coords[None, :, 1]
    features.setflags(write=False)

    return FeatureSet(
        features=features,
        scaler=scaler,
        norm_coords=norm_coords,
        bbox_min=bbox_min,
        bbox_max=bbox_max,
        time_of_day=tod,
        day_of_week=dow,
    )


# ---------------------------------------------------------------------------
# Windows and splits
# ---------------------------------------------------------------------------

def window(
    dataset: DenseDataset,
    mask: SparseMask,
    features: FeatureSet,
    lead_time: int = LEAD_TIME,
) -> list[SampleWindow]:
    """One window per valid start index (stride 1): ``lead_time`` observed
    rows followed by one dense target row.  Only mask=1 entries become
    observations; targets come from the dense readings."""
    n, k = dataset.n, dataset.k
    if n < lead_time + 1:
        raise DatasetError(f"need at least {lead_time + 1} timesteps, have {n}")
    if mask.mask.shape != (n, k):
        raise DatasetError("mask shape does not match dataset")

    queries = features.norm_coords.copy()
    queries.setflags(write=False)
    windows = []
    for start in range(n - lead_time):
        steps: list[list[Observation]] = []
        for i in range(lead_time):
            row = start + i
            sensors = np.flatnonzero(mask.mask[row])
            steps.append(
                [
                    Observation(
                        t=i,
                        s=features.norm_coords[j],
                        y=features.features[row, j, :3].copy(),
                    )
                    for j in sensors
                ]
            )
        windows.append(
            SampleWindow(
                start=start,
                observations=steps,
                query_locations=queries,
                targets=dataset.readings[start + lead_time].copy(),
                t0=(
                    float(features.time_of_day[start]),
                    float(features.day_of_week[start]) / 7.0,
                ),
            )
        )
    return windows


def split(
    windows: list[SampleWindow], spec: SplitSpec = SplitSpec()
) -> tuple[list[SampleWindow], list[SampleWindow], list[SampleWindow]]:
    """Contiguous temporal split on window start order.  A train_subfraction
    below 1 keeps only the first part of the train split; validation and test
    stay fixed."""
    total = len(windows)
    n_train = int(total * spec.train_fraction)
    n_val = int(total * spec.val_fraction)
    train = windows[:n_train]
    val = windows[n_train : n_train + n_val]
    test = windows[n_train + n_val :]
    if not train or not val or not test:
        raise DatasetError(
            f"{total} windows cannot fill all three splits "
            f"({len(train)}/{len(val)}/{len(test)})"
        )
    if spec.train_subfraction < 1.0:
        keep = max(1, int(round(spec.train_subfraction * len(train))))
        train = train[:keep]
    return train, val, test


# ---------------------------------------------------------------------------
# Synthetic datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Desk-scale synthetic stand-in for the real traffic exports.

    Sensors sit in tight spatial clusters.  Each cluster has its own diurnal
    speed profile with a weekend offset, plus a slowly mixing cluster-wide
    AR(1) deviation; position and time-of-day therefore jointly predict
    speed, and a fresh in-window observation of any cluster mate carries
    extra signal a pure climatology cannot see.
    """

    k: int = 20
    n: int = 4000
    clusters: int = 4
    noise: float = 1.0
    seed: int = 0
    interval_minutes: int = 5
    start_time: str = "2023-05-01T00:00:00"  # a Monday

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# AR(1) persistence of the cluster-wide deviation, per 5-minute step.
_AR_RHO = 0.99
_CLUSTER_NOISE_STD = 2.0
_SENSOR_NOISE_STD = 1.0
_WEEKDAY_OFFSET_STD = 5.0
_MIN_SPEED = 0.5


def synth_generate(config: SynthConfig, seed: int | None = None) -> DenseDataset:
    """Generates a synthetic dense dataset; identical config+seed gives an
    identical dataset bit-for-bit."""
    if config.k < config.clusters:
        raise DatasetError(
            f"k={config.k} sensors cannot fill {config.clusters} clusters"
        )
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n, k, c = config.n, config.k, config.clusters

    # Cluster centers on a jittered coarse grid inside a small lat/lon box.
    side = math.ceil(math.sqrt(c))
    cells = [(i, j) for i in range(side) for j in range(side)][:c]
    centers01 = (np.array(cells, dtype=np.float64) + 0.5) / side
    centers01 += rng.normal(0.0, 0.02, size=centers01.shape)
    bbox_origin = np.array([40.60, -74.10])
    bbox_extent = np.array([0.30, 0.40])
    centers = bbox_origin + centers01 * bbox_extent

    cluster_of = np.arange(k) % c
    coords = centers[cluster_of] + rng.normal(0.0, 0.004, size=(k, 2))

    base = rng.uniform(40.0, 65.0, size=c)
    amp1 = rng.uniform(8.0, 16.0, size=c)
    amp2 = rng.uniform(2.0, 6.0, size=c)
    phase1 = rng.uniform(0.0, 1.0, size=c)
    phase2 = rng.uniform(0.0, 1.0, size=c)
    # Weekly modulation of each cluster's diurnal profile: a fixed offset per
    # (cluster, day-of-week).  Time-of-day alone cannot explain it, which is
    # what separates a day-aware model from a per-slot climatology.
    dow_offset = rng.normal(0.0, _WEEKDAY_OFFSET_STD, size=(7, c))

    start = datetime.fromisoformat(config.start_time)
    minutes = (
        np.arange(n) * config.interval_minutes
        + start.hour * 60
        + start.minute
    )
    tod = (minutes % MINUTES_PER_DAY) / MINUTES_PER_DAY
    dow = ((start.weekday() + minutes // MINUTES_PER_DAY) % 7).astype(np.int64)

    profile = (
        base[None, :]
        + amp1[None, :] * np.sin(2 * np.pi * (tod[:, None] - phase1[None, :]))
        + amp2[None, :] * np.sin(4 * np.pi * (tod[:, None] - phase2[None, :]))
        + dow_offset[dow]
    )  # [n, c]

    # Cluster-wide AR(1) deviation, stationary std _CLUSTER_NOISE_STD.
    innovations = rng.normal(0.0, 1.0, size=(n, c))
    z = np.empty((n, c))
    z[0] = innovations[0]
    scale = math.sqrt(1.0 - _AR_RHO**2)
    for t in range(1, n):
        z[t] = _AR_RHO * z[t - 1] + scale * innovations[t]
    z *= _CLUSTER_NOISE_STD

    sensor_noise = rng.normal(0.0, _SENSOR_NOISE_STD, size=(n, k))
    readings = profile[:, cluster_of] + config.noise * (
        z[:, cluster_of] + sensor_noise
    )
    readings = np.maximum(readings, _MIN_SPEED)

    return DenseDataset(
        readings=readings,
        sensor_coords=coords,
        start_time=start,
        interval_minutes=config.interval_minutes,
        sensor_ids=tuple(f"synth{j}" for j in range(k)),
    )
