import numpy as np
import pytest
import torch

from oracles import naive_stack_forward
from suster.model import SusterModel
from suster.stgnn import (
    SpatioTemporalStack,
    StgnnConfig,
    average_aggregate,
    stgnn_forward,
)


def make_stack(factor=0.5, in_channels=4, out_channels=4, m=12, seed=0):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return SpatioTemporalStack(in_channels, out_channels, m, StgnnConfig(factor=factor))


def random_lap(v, seed=0, dtype=torch.float64):
    x = torch.randn(v, 8, generator=torch.Generator().manual_seed(seed), dtype=dtype)
    return SusterModel.laplacian(x)


class TestConfig:
    def test_scaled_channels(self):
        assert StgnnConfig(factor=1.0).scaled_channels() == (64, 16, 64)
        assert StgnnConfig(factor=0.5).scaled_channels() == (32, 8, 32)
        assert StgnnConfig(factor=0.25).scaled_channels() == (16, 4, 16)

    def test_minimum_channel_floor(self):
        assert StgnnConfig(factor=0.01).scaled_channels() == (1, 1, 1)

    def test_receptive_field(self):
        assert StgnnConfig().receptive_field() == 9

    def test_factor_none_has_no_stack(self):
        with pytest.raises(ValueError):
            StgnnConfig(factor=None).scaled_channels()
        with pytest.raises(ValueError):
            SpatioTemporalStack(4, 4, 12, StgnnConfig(factor=None))


class TestStackForward:
    @pytest.mark.parametrize("factor", [1.0, 0.5, 0.25])
    def test_output_shape(self, factor):
        stack = make_stack(factor=factor, in_channels=4, out_channels=4)
        seq = torch.randn(2, 12, 5, 4)
        lap = random_lap(5, dtype=torch.float32).expand(2, 5, 5)
        assert stack(seq, lap).shape == (2, 5, 4)

    def test_single_node(self):
        stack = make_stack()
        seq = torch.randn(1, 12, 1, 4)
        lap = torch.ones(1, 1, 1)
        out = stack(seq, lap)
        assert out.shape == (1, 1, 4)
        assert torch.isfinite(out).all()

    def test_matches_naive_loop_oracle(self):
        stack = make_stack(factor=0.5, in_channels=4, out_channels=4, seed=3).double()
        gen = torch.Generator().manual_seed(1)
        seq = torch.randn(12, 3, 4, generator=gen, dtype=torch.float64)
        lap = random_lap(3, seed=2)
        fast = stack(seq.unsqueeze(0), lap.unsqueeze(0))[0]
        naive = naive_stack_forward(stack, seq.numpy(), lap.numpy())
        assert np.abs(fast.detach().numpy() - naive).max() < 1e-5

    def test_matches_oracle_quarter_factor(self):
        stack = make_stack(factor=0.25, in_channels=3, out_channels=3, seed=8).double()
        seq = torch.randn(12, 4, 3, dtype=torch.float64)
        lap = random_lap(4, seed=5)
        fast = stack(seq.unsqueeze(0), lap.unsqueeze(0))[0]
        naive = naive_stack_forward(stack, seq.numpy(), lap.numpy())
        assert np.abs(fast.detach().numpy() - naive).max() < 1e-5

    def test_deterministic(self):
        stack = make_stack(seed=6)
        seq = torch.randn(1, 12, 4, 4)
        lap = random_lap(4, dtype=torch.float32).unsqueeze(0)
        a = stack(seq, lap)
        b = stack(seq, lap)
        assert torch.equal(a, b)

    def test_propagation_matrix_sensitivity(self):
        # swapping the learned matrix for a uniform one must change outputs
        stack = make_stack(seed=9).double()
        seq = torch.randn(1, 12, 4, 4, dtype=torch.float64)
        lap = random_lap(4, seed=11).unsqueeze(0)
        uniform = torch.full((1, 4, 4), 0.25, dtype=torch.float64)
        diff = (stack(seq, lap) - stack(seq, uniform)).abs().max().item()
        assert diff > 1e-6

    def test_sequence_too_short(self):
        with pytest.raises(ValueError, match="receptive field"):
            SpatioTemporalStack(4, 4, 8, StgnnConfig(factor=0.5))
        stack = make_stack()
        with pytest.raises(ValueError, match="length"):
            stack(torch.randn(1, 11, 4, 4), torch.full((1, 4, 4), 0.25))

    def test_functional_entry_point(self):
        stack = make_stack(seed=2)
        seq = torch.randn(1, 12, 4, 4)
        lap = torch.full((1, 4, 4), 0.25)
        assert torch.equal(stgnn_forward(stack, seq, lap), stack(seq, lap))


class TestParameterCounts:
    def test_strictly_decreasing_with_factor(self):
        counts = [
            sum(p.numel() for p in make_stack(factor=f).parameters())
            for f in (1.0, 0.5, 0.25)
        ]
        assert counts[0] > counts[1] > counts[2] > 0


class TestAverageAggregate:
    def test_constant_sequence(self):
        c = torch.randn(3, 4)
        seq = c.expand(12, 3, 4)
        assert torch.allclose(average_aggregate(seq), c)

    def test_two_term_mean(self):
        xbar = torch.randn(3, 4, dtype=torch.float64)
        seq = torch.stack([torch.zeros_like(xbar), 2 * xbar])
        np.testing.assert_allclose(average_aggregate(seq).numpy(), xbar.numpy(), atol=1e-12)

    def test_linearity(self):
        seq = torch.randn(5, 3, 4, dtype=torch.float64)
        np.testing.assert_allclose(
            average_aggregate(3.5 * seq).numpy(),
            (3.5 * average_aggregate(seq)).numpy(),
            atol=1e-12,
        )

    def test_batched(self):
        seq = torch.randn(2, 5, 3, 4)
        assert average_aggregate(seq).shape == (2, 3, 4)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            average_aggregate(torch.zeros(0, 3, 4))
