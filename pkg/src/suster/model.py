"""Core reconstruction model: context bootstrap, per-observation residual
encoding onto a small hidden graph, adaptive propagation matrix, inner
spatio-temporal stack and location-conditioned decoding.

Hidden states are ``[num_nodes, embed_dim]`` tensors; the graph nodes carry
no fixed spatial identity — observations are routed to nodes by a learned
assignment network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .batching import WindowBatch
from .datasets import NUM_FEATURES, Observation, SampleWindow
from .stgnn import SpatioTemporalStack, StgnnConfig, average_aggregate

HiddenState = torch.Tensor  # [num_nodes, embed_dim]

RECURRENCE_MODES = ("literal", "incremental")
ASSIGNMENT_MODES = ("sampled", "argmax")


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int = 10
    embed_dim: int = 32
    lead_time: int = 12
    stgnn_factor: float | None = 0.5
    recurrence_mode: str = "literal"
    assignment_mode: str = "sampled"   # training default; evaluation uses argmax
    stgnn: StgnnConfig = field(default=None)  # derived from stgnn_factor

    def __post_init__(self):
        if self.num_nodes < 1 or self.embed_dim < 1:
            raise ValueError("num_nodes and embed_dim must be >= 1")
        if self.recurrence_mode not in RECURRENCE_MODES:
            raise ValueError(f"unknown recurrence_mode {self.recurrence_mode!r}")
        if self.assignment_mode not in ASSIGNMENT_MODES:
            raise ValueError(f"unknown assignment_mode {self.assignment_mode!r}")
        if self.stgnn is None:
            object.__setattr__(self, "stgnn", StgnnConfig(factor=self.stgnn_factor))
        elif self.stgnn.factor != self.stgnn_factor:
            raise ValueError("stgnn.factor must match stgnn_factor")

    def to_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "embed_dim": self.embed_dim,
            "lead_time": self.lead_time,
            "stgnn_factor": self.stgnn_factor,
            "recurrence_mode": self.recurrence_mode,
            "assignment_mode": self.assignment_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__ and k != "stgnn"}
        if known.get("stgnn_factor") in ("none", "None"):
            known["stgnn_factor"] = None
        return cls(**known)


def straight_through_one_hot(
    probs: torch.Tensor, mode: str, generator: torch.Generator | None = None
) -> torch.Tensor:
    """One-hot selection whose backward pass is the identity on the softmax
    probabilities.  ``sampled`` draws the index from the distribution,
    ``argmax`` takes the mode deterministically."""
    if mode == "argmax":
        idx = probs.argmax(dim=-1)
    elif mode == "sampled":
        idx = torch.multinomial(probs.detach(), 1, generator=generator).squeeze(-1)
    else:
        raise ValueError(f"unknown assignment mode {mode!r}")
    hard = F.one_hot(idx, num_classes=probs.shape[-1]).to(probs.dtype)
    return (hard - probs).detach() + probs


class SusterModel(nn.Module):
    """End-to-end sparse-observation reconstructor.

    Sub-networks (all fully-connected, uniform fan-in init, seedable):

    * context net: (time-of-day, day-of-week/7) -> [num_nodes, embed_dim]
    * assign net:  normalized position -> node probabilities (one-hot via
      straight-through)
    * info net:    flattened previous hidden state ++ observation features
      -> embed_dim residual row
    * decoder:     flattened future hidden state ++ query position -> speed
      (normalized units)
    """

    def __init__(self, config: ModelConfig, seed: int | None = None):
        super().__init__()
        self.config = config
        v, d = config.num_nodes, config.embed_dim
        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            self.context_net = nn.Sequential(
                nn.Linear(2, d), nn.ReLU(), nn.Linear(d, d * v)
            )
            self.assign_net = nn.Sequential(
                nn.Linear(2, v), nn.ReLU(), nn.Linear(v, v)
            )
            self.info_net = nn.Sequential(
                nn.Linear(v * d + NUM_FEATURES, 2 * d),
                nn.ReLU(),
                nn.Linear(2 * d, 2 * d),
                nn.ReLU(),
                nn.Linear(2 * d, d),
            )
            self.decoder = nn.Sequential(
                nn.Linear(v * d + 2, 256),
                nn.ReLU(),
                nn.Linear(256, 128),
                nn.Linear(128, 1),
            )
            self.stack = (
                SpatioTemporalStack(d, d, config.lead_time, config.stgnn)
                if config.stgnn_factor is not None
                else None
            )

    # ------------------------------------------------------------------
    # Single-sample operations (the reference path; tests pin these)
    # ------------------------------------------------------------------

    def context_init(self, t0) -> HiddenState:
        """Bootstraps the hidden state from the window's first timestamp."""
        t = self._to_tensor(t0)
        return self.context_net(t).view(self.config.num_nodes, self.config.embed_dim)

    def assign_probs(self, s: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.assign_net(s), dim=-1)

    def assign(
        self, s, mode: str | None = None, generator: torch.Generator | None = None
    ) -> torch.Tensor:
        """One-hot node assignment of a normalized position."""
        mode = mode or self.config.assignment_mode
        s = self._to_tensor(s)
        probs = self.assign_probs(s)
        if probs.dim() == 1:
            return straight_through_one_hot(probs.unsqueeze(0), mode, generator)[0]
        return straight_through_one_hot(probs, mode, generator)

    def encode_observation(
        self,
        obs: Observation,
        x_prev: HiddenState,
        mode: str | None = None,
        generator: torch.Generator | None = None,
    ) -> HiddenState:
        """Residual update for one observation: outer product of the node
        one-hot and the info-net row, so exactly one row is nonzero."""
        s = self._to_tensor(obs.s)
        y = self._to_tensor(obs.y)
        one_hot = self.assign(s, mode, generator)
        info = self.info_net(torch.cat([x_prev.reshape(-1), y, s]))
        return torch.outer(one_hot, info)

    def accumulate(
        self,
        context: HiddenState,
        obs_by_step: list[list[Observation]],
        recurrence: str | None = None,
        assignment: str | None = None,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Residual accumulation over the window's observed timesteps.

        ``literal`` keeps the printed prefix-sum recurrence (states double
        every step when no observations arrive); ``incremental`` carries the
        previous state forward instead, which stays bounded.  Observations
        within a timestep are encoded independently against the previous
        state and summed — they never see each other.
        """
        if len(obs_by_step) != self.config.lead_time:
            raise ValueError(
                f"expected {self.config.lead_time} observation lists, "
                f"got {len(obs_by_step)}"
            )
        rec = recurrence or self.config.recurrence_mode
        if rec not in RECURRENCE_MODES:
            raise ValueError(f"unknown recurrence mode {rec!r}")
        states = []
        prev = context
        prefix = context  # context + sum of all previous states
        for obs_list in obs_by_step:
            delta = sum(
                (
                    self.encode_observation(o, prev, mode=assignment, generator=generator)
                    for o in obs_list
                ),
                start=torch.zeros_like(context),
            )
            x_i = (prefix if rec == "literal" else prev) + delta
            states.append(x_i)
            prefix = prefix + x_i
            prev = x_i
        return torch.stack(states)

    @staticmethod
    def laplacian(x_last: torch.Tensor) -> torch.Tensor:
        """Row-stochastic propagation matrix: row-wise softmax of the
        ReLU-clamped Gram matrix of the final hidden state."""
        if not torch.isfinite(x_last).all():
            raise ValueError("non-finite hidden state")
        gram = x_last @ x_last.transpose(-1, -2)
        return torch.softmax(torch.relu(gram), dim=-1)

    def predict_graph(self, sequence: torch.Tensor, lap: torch.Tensor) -> torch.Tensor:
        """Future hidden state from the state sequence; averaging fallback
        when the inner stack is disabled."""
        batched = sequence.dim() == 4
        if self.stack is None:
            return average_aggregate(sequence)
        if batched:
            return self.stack(sequence, lap)
        return self.stack(sequence.unsqueeze(0), lap.unsqueeze(0))[0]

    def decode(self, x_m: torch.Tensor, s) -> torch.Tensor:
        """Predicted (normalized) speed at one or more query locations."""
        s = self._to_tensor(s)
        flat = x_m.reshape(-1)
        if s.dim() == 1:
            return self.decoder(torch.cat([flat, s]))[0]
        inp = torch.cat([flat.unsqueeze(0).expand(s.shape[0], -1), s], dim=1)
        return self.decoder(inp).squeeze(-1)

    def forward(
        self,
        window: SampleWindow,
        mode: str | None = None,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Predictions (normalized speed) for every query location of one
        window.  Total for empty windows: the context-only path still yields
        finite values."""
        context = self.context_init(window.t0)
        states = self.accumulate(
            context, window.observations, assignment=mode, generator=generator
        )
        lap = self.laplacian(states[-1])
        x_m = self.predict_graph(states, lap)
        return self.decode(x_m, np.asarray(window.query_locations))

    # ------------------------------------------------------------------
    # Batched path (identical math, used by training)
    # ------------------------------------------------------------------

    def forward_batch(
        self,
        batch: WindowBatch,
        mode: str | None = None,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        mode = mode or self.config.assignment_mode
        v, d = self.config.num_nodes, self.config.embed_dim
        context = self.context_net(batch.t0).view(-1, v, d)
        states = self._accumulate_batch(context, batch, mode, generator)
        lap = self.laplacian(states[:, -1])
        x_m = self.predict_graph(states, lap)
        flat = x_m.reshape(x_m.shape[0], -1)
        q = batch.queries
        inp = torch.cat(
            [
                flat.unsqueeze(1).expand(-1, q.shape[0], -1),
                q.unsqueeze(0).expand(flat.shape[0], -1, -1),
            ],
            dim=2,
        )
        return self.decoder(inp).squeeze(-1)

    def _accumulate_batch(
        self,
        context: torch.Tensor,
        batch: WindowBatch,
        mode: str,
        generator: torch.Generator | None,
    ) -> torch.Tensor:
        if batch.lead_time != self.config.lead_time:
            raise ValueError(
                f"batch has {batch.lead_time} steps, model expects {self.config.lead_time}"
            )
        literal = self.config.recurrence_mode == "literal"
        states = []
        prev = context
        prefix = context
        for feats, pos, win in zip(batch.step_feats, batch.step_pos, batch.step_win):
            base = prefix if literal else prev
            if feats.shape[0] > 0:
                probs = self.assign_probs(pos)
                one_hot = straight_through_one_hot(probs, mode, generator)
                x_prev_flat = prev[win].reshape(feats.shape[0], -1)
                info = self.info_net(torch.cat([x_prev_flat, feats], dim=1))
                delta_per_obs = one_hot.unsqueeze(-1) * info.unsqueeze(1)
                delta = torch.zeros_like(context).index_add_(0, win, delta_per_obs)
                x_i = base + delta
            else:
                x_i = base if literal else prev
            states.append(x_i)
            prefix = prefix + x_i
            prev = x_i
        return torch.stack(states, dim=1)

    # ------------------------------------------------------------------

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _to_tensor(self, x) -> torch.Tensor:
        if isinstance(x, torch.Tensor):
            return x.to(self._dtype())
        arr = np.asarray(x)
        if not arr.flags.writeable:
            arr = arr.copy()
        return torch.as_tensor(arr, dtype=self._dtype())
