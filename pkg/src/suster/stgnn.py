"""Inner spatio-temporal correlation stack and the averaging fallback.

The stack treats a hidden-state sequence as a length-m temporal signal over
|V| nodes and applies two ST-blocks, each gated temporal convolution ->
graph convolution -> gated temporal convolution, where the graph convolution
propagates with a row-stochastic matrix supplied at call time instead of a
static adjacency.  A final gated temporal layer collapses the remaining time
axis to one step and a linear head maps channels back to the embedding size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class StgnnConfig:
    factor: float | None = 0.5          # layer-size factor; None disables the stack
    temporal_kernel: int = 3
    cheb_order: int = 2
    base_channels: tuple[int, int, int] = (64, 16, 64)
    num_blocks: int = 2

    def scaled_channels(self) -> tuple[int, int, int]:
        if self.factor is None:
            raise ValueError("factor=None has no parameterized stack")
        return tuple(max(1, round(self.factor * c)) for c in self.base_channels)

    def receptive_field(self) -> int:
        """Minimum sequence length the block stack can consume."""
        return self.num_blocks * 2 * (self.temporal_kernel - 1) + 1


class GatedTemporalConv(nn.Module):
    """1-D convolution along time with GLU gating: (P + residual) * sigmoid(Q).

    Input/output layout is [batch, channels, time, nodes]; no padding, so the
    time axis shrinks by kernel_size - 1.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int):
        super().__init__()
        self.kernel_size = kernel_size
        self.conv = nn.Conv2d(in_channels, 2 * out_channels, (kernel_size, 1))
        self.align = (
            nn.Conv2d(in_channels, out_channels, (1, 1))
            if in_channels != out_channels
            else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        res = x if self.align is None else self.align(x)
        res = res[:, :, self.kernel_size - 1 :, :]
        p, q = self.conv(x).chunk(2, dim=1)
        return (p + res) * torch.sigmoid(q)


class GraphPolyConv(nn.Module):
    """Graph convolution as a matrix polynomial in the propagation matrix:
    sum_k L^k X W_k for k = 0 .. order, followed by ReLU."""

    def __init__(self, in_channels: int, out_channels: int, order: int):
        super().__init__()
        self.order = order
        self.weight = nn.Parameter(torch.empty(order + 1, in_channels, out_channels))
        self.bias = nn.Parameter(torch.empty(out_channels))
        bound = 1.0 / in_channels**0.5
        with torch.no_grad():
            self.weight.uniform_(-bound, bound)
            self.bias.uniform_(-bound, bound)

    def forward(self, x: torch.Tensor, lap: torch.Tensor) -> torch.Tensor:
        # x: [B, C, T, V]; lap: [B, V, V] or [V, V]
        if lap.dim() == 2:
            lap = lap.unsqueeze(0)
        h = x.permute(0, 2, 3, 1)  # [B, T, V, C]
        out = h @ self.weight[0]
        cur = h
        for k in range(1, self.order + 1):
            cur = torch.einsum("bvw,btwc->btvc", lap, cur)
            out = out + cur @ self.weight[k]
        out = torch.relu(out + self.bias)
        return out.permute(0, 3, 1, 2)


class STBlock(nn.Module):
    """Gated temporal conv -> graph conv -> gated temporal conv."""

    def __init__(self, in_channels: int, cfg: StgnnConfig):
        super().__init__()
        c_t1, c_sp, c_t2 = cfg.scaled_channels()
        kt = cfg.temporal_kernel
        self.temporal_in = GatedTemporalConv(in_channels, c_t1, kt)
        self.graph = GraphPolyConv(c_t1, c_sp, cfg.cheb_order)
        self.temporal_out = GatedTemporalConv(c_sp, c_t2, kt)
        self.out_channels = c_t2

    def forward(self, x: torch.Tensor, lap: torch.Tensor) -> torch.Tensor:
        x = self.temporal_in(x)
        x = self.graph(x, lap)
        return self.temporal_out(x)


class SpatioTemporalStack(nn.Module):
    """Maps a sequence [B, m, V, C_in] plus a propagation matrix to one
    future state [B, V, C_out]."""

    def __init__(self, in_channels: int, out_channels: int, num_steps: int, cfg: StgnnConfig):
        super().__init__()
        if cfg.factor is None:
            raise ValueError("factor=None: use average_aggregate instead of the stack")
        if num_steps < cfg.receptive_field():
            raise ValueError(
                f"sequence length {num_steps} is below the receptive field "
                f"{cfg.receptive_field()}"
            )
        self.cfg = cfg
        self.num_steps = num_steps
        blocks = []
        channels = in_channels
        for _ in range(cfg.num_blocks):
            block = STBlock(channels, cfg)
            blocks.append(block)
            channels = block.out_channels
        self.blocks = nn.ModuleList(blocks)
        remaining = num_steps - cfg.num_blocks * 2 * (cfg.temporal_kernel - 1)
        self.collapse = GatedTemporalConv(channels, channels, remaining)
        self.head = nn.Linear(channels, out_channels)

    def forward(self, sequence: torch.Tensor, lap: torch.Tensor) -> torch.Tensor:
        if sequence.shape[1] != self.num_steps:
            raise ValueError(
                f"expected sequence length {self.num_steps}, got {sequence.shape[1]}"
            )
        x = sequence.permute(0, 3, 1, 2)  # [B, C, T, V]
        for block in self.blocks:
            x = block(x, lap)
        x = self.collapse(x)              # [B, C, 1, V]
        x = x.squeeze(2).permute(0, 2, 1)  # [B, V, C]
        return self.head(x)


def stgnn_forward(
    stack: SpatioTemporalStack, sequence: torch.Tensor, lap: torch.Tensor
) -> torch.Tensor:
    """Functional entry point for the stack forward pass."""
    return stack(sequence, lap)


def average_aggregate(sequence: torch.Tensor) -> torch.Tensor:
    """Elementwise mean of the hidden states over the time axis (the
    stack-disabled fallback).  Accepts [B, m, V, C] or [m, V, C]."""
    dim = 0 if sequence.dim() == 3 else 1
    if sequence.shape[dim] == 0:
        raise ValueError("cannot aggregate an empty sequence")
    return sequence.mean(dim=dim)
