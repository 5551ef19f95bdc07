"""Parameter archives: a single binary file mapping parameter-path strings to
tensors, plus the model configuration needed to rebuild the module.  Loading
validates every shape and round-trips bit-for-bit."""

from __future__ import annotations

import os
from pathlib import Path

import torch

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | os.PathLike,
    kind: str,
    config: dict,
    state_dict: dict,
    extra: dict | None = None,
) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "params": {k: v.detach().cpu() for k, v in state_dict.items()},
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    for key in ("format_version", "kind", "config", "params"):
        if key not in payload:
            raise CheckpointError(f"malformed checkpoint: missing {key!r}")
    return payload


def restore_model(model: torch.nn.Module, payload: dict) -> torch.nn.Module:
    """Loads archived parameters into a freshly built model, checking every
    parameter path and shape before anything is written."""
    params = payload["params"]
    current = model.state_dict()
    missing = set(current) - set(params)
    unexpected = set(params) - set(current)
    if missing or unexpected:
        raise CheckpointError(
            f"parameter paths differ: missing={sorted(missing)}, "
            f"unexpected={sorted(unexpected)}"
        )
    for name, tensor in params.items():
        if tuple(tensor.shape) != tuple(current[name].shape):
            raise CheckpointError(
                f"shape mismatch for {name}: archive {tuple(tensor.shape)} "
                f"vs model {tuple(current[name].shape)}"
            )
    model.load_state_dict(params)
    return model
