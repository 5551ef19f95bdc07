"""Config-driven experiment orchestration: single runs, multi-seed runs,
dropout sweeps, ablation grids and the training-fraction study.

Every run persists its fully resolved config next to its outputs, so any
emitted result row is reproducible from that file alone.  Sweep cells are
independent: each cell writes its own CSV and a finished cell is skipped on
re-run, so deleting one cell's outputs regenerates only that cell.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, StgcnBaseline, distance_adjacency, random_adjacency
from .batching import WindowTensorSource
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .datasets import (
    LEAD_TIME,
    DenseDataset,
    FeatureSet,
    SparseMask,
    SplitSpec,
    SynthConfig,
    build_features,
    load_dense_dataset,
    sparsify,
    synth_generate,
)
from .model import ModelConfig, SusterModel
from .stgnn import StgnnConfig
from .training import (
    MetricReport,
    TrainConfig,
    _fmt,
    evaluate,
    train,
    write_history,
    write_report,
)

DEFAULT_DROPOUTS = (0.10, 0.80, 0.90, 0.95, 0.99, 0.995, 0.999)
NODES_GRID = (1, 5, 10, 25, 50)
EMBED_GRID = (8, 16, 32, 64)
FACTOR_GRID = (1.0, 0.5, 0.25, None)
DATA_DIR_ENV = "SUSTER_DATA_DIR"


class ConfigError(ValueError):
    """Carries every offending config key, not just the first."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    dataset_path: str | None = None
    synth: SynthConfig | None = None
    dropout: float = 0.99
    dropouts: tuple[float, ...] = DEFAULT_DROPOUTS
    mask_seed: int = 1234
    model: str = "suster"
    models: tuple[dict, ...] = ()      # sweep-only: list of model selector dicts
    model_config: ModelConfig = field(default_factory=ModelConfig)
    baseline_config: BaselineConfig = field(default_factory=BaselineConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    n_runs: int = 5
    seed: int = 0
    out: str = "runs"
    raw: dict = field(default_factory=dict)

    def label(self) -> str:
        return "suster" if self.model == "suster" else self.baseline_config.label()

    def resolved_dict(self) -> dict:
        return {
            "dataset": (
                {"path": self.dataset_path}
                if self.dataset_path
                else {"synth": vars(self.synth)}
            ),
            "dropout": self.dropout,
            "dropouts": list(self.dropouts),
            "mask_seed": self.mask_seed,
            "model": self.model,
            "models": list(self.models),
            "model_config": self.model_config.to_dict(),
            "baseline_config": self.baseline_config.to_dict(),
            "train": self.train_config.to_dict(),
            "split": {
                "train_fraction": self.split.train_fraction,
                "val_fraction": self.split.val_fraction,
                "test_fraction": self.split.test_fraction,
                "train_subfraction": self.split.train_subfraction,
            },
            "n_runs": self.n_runs,
            "seed": self.seed,
            "out": self.out,
        }


def parse_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validates a raw config mapping, collecting every offending key."""
    errors: list[str] = []
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    dataset_path = None
    synth = None
    dataset = raw.get("dataset")
    if isinstance(dataset, str):
        dataset = {"path": dataset}
    if not isinstance(dataset, dict) or ("path" not in dataset and "synth" not in dataset):
        errors.append("dataset: need a directory path or a synth config")
    else:
        if "path" in dataset:
            dataset_path = str(dataset["path"])
            root = os.environ.get(DATA_DIR_ENV)
            if root and not os.path.isabs(dataset_path):
                dataset_path = str(Path(root) / dataset_path)
        else:
            try:
                synth = SynthConfig.from_dict(dataset["synth"])
            except (TypeError, ValueError) as exc:
                errors.append(f"dataset.synth: {exc}")

    def _number(key, default, lo=None, hi=None, kind=float):
        value = raw.get(key, default)
        try:
            value = kind(value)
        except (TypeError, ValueError):
            errors.append(f"{key}: not a number ({raw.get(key)!r})")
            return default
        if lo is not None and value < lo or hi is not None and value > hi:
            errors.append(f"{key}: {value} outside [{lo}, {hi}]")
        return value

    dropout = _number("dropout", 0.99, 0.0, 1.0)
    dropouts = raw.get("dropouts", list(DEFAULT_DROPOUTS))
    if not isinstance(dropouts, (list, tuple)) or not all(
        isinstance(d, (int, float)) and 0.0 <= d <= 1.0 for d in dropouts
    ):
        errors.append("dropouts: must be a list of values in [0, 1]")
        dropouts = DEFAULT_DROPOUTS

    model = raw.get("model", "suster")
    if model not in ("suster", "stgcn_baseline"):
        errors.append(f"model: unknown model {model!r}")

    models = raw.get("models", [])
    if not isinstance(models, list) or not all(isinstance(m, dict) for m in models):
        errors.append("models: must be a list of model selector objects")
        models = []
    for i, sel in enumerate(models):
        if sel.get("model", "suster") not in ("suster", "stgcn_baseline"):
            errors.append(f"models[{i}].model: unknown model {sel.get('model')!r}")

    try:
        model_config = ModelConfig.from_dict(raw.get("model_config", {}))
    except (TypeError, ValueError) as exc:
        errors.append(f"model_config: {exc}")
        model_config = ModelConfig()
    try:
        baseline_config = BaselineConfig.from_dict(raw.get("baseline_config", {}))
    except (TypeError, ValueError) as exc:
        errors.append(f"baseline_config: {exc}")
        baseline_config = BaselineConfig()
    try:
        train_config = TrainConfig.from_dict(raw.get("train", {}))
    except (TypeError, ValueError) as exc:
        errors.append(f"train: {exc}")
        train_config = TrainConfig()
    try:
        split_spec = SplitSpec(
            **{
                k: v
                for k, v in raw.get("split", {}).items()
                if k in SplitSpec.__dataclass_fields__
            }
        )
    except (TypeError, ValueError) as exc:
        errors.append(f"split: {exc}")
        split_spec = SplitSpec()

    n_runs = _number("n_runs", 5, 1, kind=int)
    seed = _number("seed", 0, kind=int)
    mask_seed = _number("mask_seed", 1234, kind=int)
    out = str(raw.get("out", "runs"))

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        dataset_path=dataset_path,
        synth=synth,
        dropout=dropout,
        dropouts=tuple(float(d) for d in dropouts),
        mask_seed=mask_seed,
        model=model,
        models=tuple(models),
        model_config=model_config,
        baseline_config=baseline_config,
        train_config=train_config,
        split=split_spec,
        n_runs=n_runs,
        seed=seed,
        out=out,
        raw=raw,
    )


def load_config_file(path: str | os.PathLike, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from None
    return parse_config(raw, overrides)


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------

@dataclass
class ExperimentData:
    dataset: DenseDataset
    mask: SparseMask
    features: FeatureSet
    source: WindowTensorSource
    train_starts: np.ndarray
    val_starts: np.ndarray
    test_starts: np.ndarray


def split_starts(num_windows: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    starts = np.arange(num_windows)
    n_train = int(num_windows * spec.train_fraction)
    n_val = int(num_windows * spec.val_fraction)
    train = starts[:n_train]
    val = starts[n_train : n_train + n_val]
    test = starts[n_train + n_val :]
    if not (len(train) and len(val) and len(test)):
        raise ValueError(f"{num_windows} windows cannot fill all three splits")
    if spec.train_subfraction < 1.0:
        keep = max(1, int(round(spec.train_subfraction * len(train))))
        train = train[:keep]
    return train, val, test


def load_experiment_dataset(config: ExperimentConfig) -> DenseDataset:
    if config.dataset_path:
        return load_dense_dataset(config.dataset_path)
    return synth_generate(config.synth)


def prepare_data(
    config: ExperimentConfig, dropout: float | None = None, dataset: DenseDataset | None = None
) -> ExperimentData:
    dataset = dataset or load_experiment_dataset(config)
    mask = sparsify(dataset, config.dropout if dropout is None else dropout, config.mask_seed)
    features = build_features(dataset, config.split.train_fraction)
    source = WindowTensorSource(dataset, mask, features, LEAD_TIME)
    train_starts, val_starts, test_starts = split_starts(source.num_windows, config.split)
    return ExperimentData(
        dataset=dataset,
        mask=mask,
        features=features,
        source=source,
        train_starts=train_starts,
        val_starts=val_starts,
        test_starts=test_starts,
    )


# ---------------------------------------------------------------------------
# Model factory
# ---------------------------------------------------------------------------

def build_model(config: ExperimentConfig, data: ExperimentData, seed: int):
    if config.model == "suster":
        return SusterModel(config.model_config, seed=seed)
    k = data.dataset.k
    bc = config.baseline_config
    if bc.use_random_adjacency:
        propagation = random_adjacency(k, bc.adjacency_seed)
    else:
        propagation = distance_adjacency(data.dataset.sensor_coords)
    return StgcnBaseline(
        k=k,
        lead_time=LEAD_TIME,
        propagation=propagation,
        stgnn=StgnnConfig(factor=1.0),
        seed=seed,
        baseline=bc,
    )


def model_from_checkpoint(payload: dict, data: ExperimentData):
    kind = payload["kind"]
    cfg = payload["config"]
    if kind == "suster":
        model = SusterModel(ModelConfig.from_dict(cfg["model_config"]))
    elif kind == "stgcn_baseline":
        bc = BaselineConfig.from_dict(cfg.get("baseline_config", {}))
        if bc.use_random_adjacency:
            propagation = random_adjacency(data.dataset.k, bc.adjacency_seed)
        else:
            propagation = distance_adjacency(data.dataset.sensor_coords)
        model = StgcnBaseline(
            k=data.dataset.k,
            lead_time=LEAD_TIME,
            propagation=propagation,
            stgnn=StgnnConfig(factor=1.0),
            baseline=bc,
        )
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    return restore_model(model, payload)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    label: str
    dropout: float
    seed: int
    metrics: dict
    history: list
    best_epoch: int
    seconds: float

    def report_row(self, split: str = "test") -> dict:
        return {
            "model": self.label,
            "dropout": self.dropout,
            "seed": self.seed,
            "split": split,
            **self.metrics,
        }


def run_single(
    config: ExperimentConfig,
    data: ExperimentData,
    seed: int,
    dropout: float,
    checkpoint_path: str | os.PathLike | None = None,
) -> RunResult:
    """Train one model with one seed and evaluate it on the test split."""
    tic = time.perf_counter()
    cfg = config.train_config
    run_cfg = TrainConfig(**{**cfg.to_dict(), "seed": seed})
    model = build_model(config, data, seed)
    result = train(
        model, data.source, data.train_starts, data.val_starts, run_cfg, data.features.scaler
    )
    model.load_state_dict(result.best_state)
    metrics = evaluate(
        model, data.source, data.test_starts, data.features.scaler, cfg.batch_size,
        permute_generator=np.random.default_rng(seed + 104729),
    )
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            kind=config.model,
            config={
                "model_config": config.model_config.to_dict(),
                "baseline_config": config.baseline_config.to_dict(),
                "dropout": dropout,
                "seed": seed,
            },
            state_dict=result.best_state,
        )
    return RunResult(
        label=config.label(),
        dropout=dropout,
        seed=seed,
        metrics=metrics,
        history=result.history,
        best_epoch=result.best_epoch,
        seconds=time.perf_counter() - tic,
    )


def run_multirun(
    config: ExperimentConfig,
    data: ExperimentData,
    dropout: float,
    n_runs: int | None = None,
    base_seed: int | None = None,
) -> tuple[list[RunResult], MetricReport]:
    """Seeds base_seed .. base_seed+n_runs-1; aggregates mean and sample std."""
    n = config.n_runs if n_runs is None else n_runs
    base = config.seed if base_seed is None else base_seed
    tic = time.perf_counter()
    runs = [run_single(config, data, base + i, dropout) for i in range(n)]
    report = MetricReport.from_runs(
        [r.metrics for r in runs],
        split="test",
        seeds=[r.seed for r in runs],
        seconds=time.perf_counter() - tic,
    )
    return runs, report


# ---------------------------------------------------------------------------
# Experiment commands (shared by the CLI)
# ---------------------------------------------------------------------------

def _persist_config(config: ExperimentConfig, out: Path, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    payload = config.resolved_dict()
    payload.update(extra or {})
    tmp = out / "config.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    os.replace(tmp, out / "config.json")


def cmd_train(config: ExperimentConfig) -> RunResult:
    out = Path(config.out)
    _persist_config(config, out)
    data = prepare_data(config)
    result = run_single(
        config, data, config.seed, config.dropout, checkpoint_path=out / "checkpoint.pt"
    )
    write_history(out / "history.csv", result.history)
    write_report(out / "report.csv", [result.report_row()])
    return result


def cmd_eval(config: ExperimentConfig, checkpoint: str | os.PathLike) -> dict:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = load_checkpoint(checkpoint)
    data = prepare_data(config, dropout=payload["config"].get("dropout"))
    model = model_from_checkpoint(payload, data)
    metrics = evaluate(
        model,
        data.source,
        data.test_starts,
        data.features.scaler,
        config.train_config.batch_size,
    )
    write_report(
        out / "report.csv",
        [
            {
                "model": payload["kind"] if payload["kind"] == "suster"
                else BaselineConfig.from_dict(payload["config"].get("baseline_config", {})).label(),
                "dropout": payload["config"].get("dropout", config.dropout),
                "seed": payload["config"].get("seed", config.seed),
                "split": "test",
                **metrics,
            }
        ],
    )
    return metrics


def _selector_config(config: ExperimentConfig, selector: dict) -> ExperimentConfig:
    raw = dict(config.raw)
    raw.update({k: v for k, v in selector.items() if k != "baseline"})
    if "baseline" in selector:
        raw["baseline_config"] = selector["baseline"]
    raw["out"] = config.out
    return parse_config(raw)


def cmd_sweep(config: ExperimentConfig) -> list[dict]:
    """Runs multirun for every (model, dropout) cell; one CSV per cell plus a
    combined long-format CSV.  Finished cells are skipped on re-run."""
    out = Path(config.out)
    _persist_config(config, out)
    dataset = load_experiment_dataset(config)
    selectors = list(config.models) or [{"model": config.model}]
    all_rows: list[dict] = []
    for selector in selectors:
        cell_config = _selector_config(config, selector)
        label = cell_config.label()
        for dropout in config.dropouts:
            cell_path = out / f"cell_{label}_{dropout:g}.csv"
            if cell_path.exists():
                all_rows.extend(_read_report_rows(cell_path))
                continue
            data = prepare_data(cell_config, dropout=dropout, dataset=dataset)
            runs, _ = run_multirun(cell_config, data, dropout)
            rows = [r.report_row() for r in runs]
            write_report(cell_path, rows)
            all_rows.extend(rows)
    write_report(out / "sweep.csv", all_rows)
    _monotonicity_flags(all_rows)
    return all_rows


def _monotonicity_flags(rows: list[dict]) -> list[str]:
    """Informational anomaly detector: MAE should not improve as dropout
    grows."""
    flags = []
    by_model: dict[str, dict[float, list[float]]] = {}
    for row in rows:
        by_model.setdefault(row["model"], {}).setdefault(float(row["dropout"]), []).append(
            float(row["mae"])
        )
    for model, cells in by_model.items():
        levels = sorted(cells)
        means = [float(np.mean(cells[d])) for d in levels]
        for (d0, m0), (d1, m1) in zip(zip(levels, means), zip(levels[1:], means[1:])):
            if m1 < m0:
                flags.append(
                    f"note: {model} MAE decreases from dropout {d0:g} ({m0:.3f}) "
                    f"to {d1:g} ({m1:.3f})"
                )
    for line in flags:
        print(line)
    return flags


def _read_report_rows(path: Path) -> list[dict]:
    import csv as _csv

    with open(path) as fh:
        return [
            {
                "model": row["model"],
                "dropout": float(row["dropout"]),
                "seed": int(row["seed"]),
                "split": row["split"],
                "mae": float(row["mae"]),
                "rmse": float(row["rmse"]),
                "mape": float(row["mape"]),
            }
            for row in _csv.DictReader(fh)
        ]


def cmd_ablate(config: ExperimentConfig, grid: str) -> list[dict]:
    """Hidden-graph size grid (nodes x embedding) or inner-stack factor grid.

    Grid axes default to the standard ablation sets and can be overridden
    with an ``ablate`` config section (keys ``nodes``, ``embeds``,
    ``factors``).
    """
    out = Path(config.out)
    _persist_config(config, out, {"grid": grid})
    dataset = load_experiment_dataset(config)
    overrides = config.raw.get("ablate", {})
    nodes_grid = tuple(overrides.get("nodes", NODES_GRID))
    embed_grid = tuple(overrides.get("embeds", EMBED_GRID))
    factor_grid = tuple(
        None if f in (None, "none") else float(f)
        for f in overrides.get("factors", FACTOR_GRID)
    )
    if not nodes_grid or not embed_grid or not factor_grid:
        raise ConfigError(["ablate: grid axes must be non-empty"])
    rows: list[dict] = []
    if grid == "nodes_embed":
        for num_nodes in nodes_grid:
            for embed_dim in embed_grid:
                cell = _ablate_cell(
                    config, dataset, {"num_nodes": num_nodes, "embed_dim": embed_dim}, out
                )
                rows.append(cell)
        _write_matrix_csv(out / "ablate_nodes_embed.csv", rows, nodes_grid, embed_grid)
    elif grid == "factor":
        for factor in factor_grid:
            rows.append(_ablate_cell(config, dataset, {"stgnn_factor": factor}, out))
        _write_factor_csv(out / "ablate_factor.csv", rows)
    else:
        raise ConfigError([f"grid: unknown grid {grid!r} (use nodes_embed or factor)"])
    return rows


def _ablate_cell(
    config: ExperimentConfig, dataset: DenseDataset, patch: dict, out: Path
) -> dict:
    model_cfg = {**config.model_config.to_dict(), **patch}
    raw = dict(config.raw)
    raw["model_config"] = model_cfg
    raw["model"] = "suster"
    cell_config = parse_config(raw)
    tag = "_".join(f"{k}-{v}" for k, v in patch.items())
    cell_path = out / f"ablate_{tag}.csv"
    if cell_path.exists():
        cell_rows = _read_report_rows(cell_path)
    else:
        data = prepare_data(cell_config, dataset=dataset)
        runs, _ = run_multirun(cell_config, data, cell_config.dropout)
        cell_rows = [r.report_row() for r in runs]
        write_report(cell_path, cell_rows)
    agg = {
        key: float(np.mean([r[key] for r in cell_rows])) for key in ("mae", "rmse", "mape")
    }
    std = {
        key: float(np.std([r[key] for r in cell_rows], ddof=1)) if len(cell_rows) > 1 else 0.0
        for key in ("mae", "rmse", "mape")
    }
    return {**patch, **agg, "mae_std": std["mae"], "rmse_std": std["rmse"],
            "mape_std": std["mape"]}


def _write_matrix_csv(
    path: Path, rows: list[dict], nodes_grid=NODES_GRID, embed_grid=EMBED_GRID
) -> None:
    """Matrix of mean MAE: hidden-node rows, embedding-dim columns."""
    lookup = {(r["num_nodes"], r["embed_dim"]): r["mae"] for r in rows}
    lines = [["num_nodes\\embed_dim"] + [str(d) for d in embed_grid]]
    for v in nodes_grid:
        lines.append([str(v)] + [_fmt(lookup[(v, d)]) for d in embed_grid])
    _write_lines(path, lines)


def _write_factor_csv(path: Path, rows: list[dict]) -> None:
    lines = [["factor", "mae", "rmse", "mape", "mae_std", "rmse_std", "mape_std"]]
    for r in rows:
        factor = r["stgnn_factor"]
        lines.append(
            [
                "none" if factor is None else f"{factor:g}",
                _fmt(r["mae"]), _fmt(r["rmse"]), _fmt(r["mape"]),
                _fmt(r["mae_std"]), _fmt(r["rmse_std"]), _fmt(r["mape_std"]),
            ]
        )
    _write_lines(path, lines)


def _write_lines(path: Path, lines: list[list[str]]) -> None:
    import csv as _csv

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        _csv.writer(fh).writerows(lines)
    os.replace(tmp, path)


def cmd_fraction(config: ExperimentConfig, fractions: list[float]) -> list[dict]:
    """Training-fraction study: truncate the train split, keep val/test fixed."""
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ConfigError([f"fractions: {f} outside (0, 1]"])
    out = Path(config.out)
    _persist_config(config, out, {"fractions": fractions})
    dataset = load_experiment_dataset(config)
    rows = []
    for fraction in fractions:
        raw = dict(config.raw)
        raw.setdefault("split", {})
        raw["split"] = {**raw["split"], "train_subfraction": fraction}
        cell_config = parse_config(raw)
        cell_path = out / f"fraction_{fraction:g}.csv"
        if cell_path.exists():
            cell_rows = _read_report_rows(cell_path)
        else:
            data = prepare_data(cell_config, dataset=dataset)
            runs, _ = run_multirun(cell_config, data, cell_config.dropout)
            cell_rows = [r.report_row() for r in runs]
            write_report(cell_path, cell_rows)
        mae = [r["mae"] for r in cell_rows]
        rows.append(
            {
                "fraction": fraction,
                "mae": float(np.mean(mae)),
                "mae_std": float(np.std(mae, ddof=1)) if len(mae) > 1 else 0.0,
                "rmse": float(np.mean([r["rmse"] for r in cell_rows])),
                "mape": float(np.mean([r["mape"] for r in cell_rows])),
            }
        )
    lines = [["fraction", "mae", "mae_std", "rmse", "mape"]] + [
        [f"{r['fraction']:g}", _fmt(r["mae"]), _fmt(r["mae_std"]),
         _fmt(r["rmse"]), _fmt(r["mape"])]
        for r in rows
    ]
    _write_lines(out / "fraction.csv", lines)
    return rows
