import numpy as np
import pytest
import torch

from meetasr.encoder import (ChannelFusion, ConformerBlock, EncoderConfig,
                             MultiFrameCrossChannelAttention,
                             MultichannelEncoder, context_expand)
from meetasr.gradcheck import finite_difference_check

from oracles import naive_conv2d, naive_cross_channel_attention


def rand(*shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64)


class TestContextExpand:
    def test_zero_context_is_identity(self):
        x = rand(5, 2, 4)
        assert torch.equal(context_expand(x, 0), x)

    def test_axis_size_law(self):
        out = context_expand(rand(6, 2, 4), 2)
        assert out.shape == (6, 10, 4)

    def test_boundary_zero_padding(self):
        out = context_expand(rand(6, 2, 4, seed=1), 2)
        assert torch.equal(out[0, : 2 * 2], torch.zeros(4, 4, dtype=torch.float64))
        assert torch.equal(out[-1, -2 * 2 :], torch.zeros(4, 4, dtype=torch.float64))

    def test_frame_major_ordering(self):
        x = rand(4, 3, 2, seed=2)
        out = context_expand(x, 1)
        # middle block of frame t is frame t itself
        assert torch.equal(out[2, 3:6], x[2])
        assert torch.equal(out[2, 0:3], x[1])
        assert torch.equal(out[2, 6:9], x[3])


class TestCrossChannelAttention:
    def test_rows_normalized(self):
        torch.manual_seed(0)
        attn = MultiFrameCrossChannelAttention(8, 2, 2).double()
        _, weights = attn(rand(5, 3, 8, seed=3), return_weights=True)
        sums = weights.sum(dim=-1)
        assert torch.all(weights >= 0)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    @pytest.mark.parametrize("context", [0, 1, 2])
    @pytest.mark.parametrize("channels", [1, 2, 3, 4])
    def test_key_axis_shape_law(self, context, channels):
        torch.manual_seed(1)
        attn = MultiFrameCrossChannelAttention(8, 2, context).double()
        _, weights = attn(rand(4, channels, 8, seed=4), return_weights=True)
        assert weights.shape[-1] == (2 * context + 1) * channels

    def test_single_key_degenerate_case(self):
        torch.manual_seed(2)
        attn = MultiFrameCrossChannelAttention(8, 2, 0).double()
        x = rand(5, 1, 8, seed=5)
        out, weights = attn(x, return_weights=True)
        assert torch.allclose(weights, torch.ones_like(weights))
        expected = attn.out_proj(attn.v_proj(x))
        assert torch.allclose(out, expected, atol=1e-12)

    def test_matches_loop_oracle(self):
        torch.manual_seed(3)
        attn = MultiFrameCrossChannelAttention(8, 1, 1).double()
        x = rand(4, 2, 8, seed=6)
        out = attn(x).detach().numpy()
        oracle = naive_cross_channel_attention(
            x.numpy(), context=1, heads=1,
            wq=attn.q_proj.weight.detach().numpy(), bq=attn.q_proj.bias.detach().numpy(),
            wk=attn.k_proj.weight.detach().numpy(), bk=attn.k_proj.bias.detach().numpy(),
            wv=attn.v_proj.weight.detach().numpy(), bv=attn.v_proj.bias.detach().numpy(),
            wo=attn.out_proj.weight.detach().numpy(), bo=attn.out_proj.bias.detach().numpy())
        np.testing.assert_allclose(out, oracle, atol=1e-10)

    def test_zero_value_projection_zeroes_output(self):
        torch.manual_seed(4)
        attn = MultiFrameCrossChannelAttention(8, 2, 1).double()
        with torch.no_grad():
            attn.v_proj.weight.zero_()
            attn.v_proj.bias.zero_()
            attn.out_proj.bias.zero_()
        out = attn(rand(4, 2, 8, seed=7))
        assert torch.allclose(out, torch.zeros_like(out), atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        attn = MultiFrameCrossChannelAttention(8, 2, 1).double()
        with pytest.raises(ValueError):
            attn(rand(4, 2, 6, seed=8))


class TestConformerBlock:
    def test_default_config_accepted(self):
        cfg = EncoderConfig(dim=256, heads=4, context_frames=2, layers=12, ff_dim=2048)
        block = ConformerBlock(cfg)
        n_params = sum(p.numel() for p in block.parameters())
        assert n_params > 0

    def test_zero_residual_branches_reduce_to_norm_of_input(self):
        torch.manual_seed(5)
        cfg = EncoderConfig(dim=8, heads=2, context_frames=1, layers=1, ff_dim=16,
                            conv_kernel=3)
        block = ConformerBlock(cfg).double()
        with torch.no_grad():
            block.cross_channel.out_proj.weight.zero_()
            block.cross_channel.out_proj.bias.zero_()
            block.time_attn.out_proj.weight.zero_()
            block.time_attn.out_proj.bias.zero_()
            block.conv.pointwise2.weight.zero_()
            block.conv.pointwise2.bias.zero_()
            block.ff.net[2].weight.zero_()
            block.ff.net[2].bias.zero_()
        x = rand(5, 2, 8, seed=9)
        assert torch.allclose(block(x), block.norm_out(x), atol=1e-12)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(6)
        cfg = EncoderConfig(dim=8, heads=2, context_frames=1, layers=1, ff_dim=12,
                            conv_kernel=3)
        block = ConformerBlock(cfg).double()
        x = rand(4, 2, 8, seed=10)
        target = rand(4, 2, 8, seed=11)

        def loss_fn():
            return ((block(x) - target) ** 2).sum()

        result = finite_difference_check(loss_fn, block.named_parameters(),
                                         samples_per_param=4)
        assert result.max_rel_err < 1e-4, result


class TestChannelFusion:
    def test_single_channel_passthrough(self):
        fusion = ChannelFusion(1).double()
        x = rand(1, 5, 6, seed=12)
        assert torch.equal(fusion(x), x[0])

    @pytest.mark.parametrize("channels", [2, 3, 4])
    def test_output_shape(self, channels):
        torch.manual_seed(7)
        fusion = ChannelFusion(channels).double()
        assert fusion(rand(channels, 5, 6, seed=13)).shape == (5, 6)

    def test_stage_counts(self):
        assert len(ChannelFusion(2).stages) == 1
        assert len(ChannelFusion(3).stages) == 2
        assert len(ChannelFusion(4).stages) == 2

    def test_rejects_more_than_four(self):
        with pytest.raises(ValueError):
            ChannelFusion(5)
        fusion = ChannelFusion(2).double()
        with pytest.raises(ValueError):
            fusion(rand(3, 5, 6, seed=14))

    def test_matches_direct_conv_oracle(self):
        torch.manual_seed(8)
        fusion = ChannelFusion(4).double()
        x = rand(4, 5, 6, seed=15)
        out = fusion(x).detach().numpy()
        cur = x.numpy()
        for stage in fusion.stages:
            cur = naive_conv2d(cur, stage.weight.detach().numpy(),
                               stage.bias.detach().numpy(), stride=(1, 1),
                               padding=(1, 1))
        np.testing.assert_allclose(out, cur[0], atol=1e-10)


class TestEncoder:
    def make(self, layers=1, channels=2):
        torch.manual_seed(9)
        cfg = EncoderConfig(dim=8, heads=2, context_frames=1, layers=layers,
                            ff_dim=12, conv_kernel=3)
        return MultichannelEncoder(cfg, channels).double()

    def test_output_shapes(self):
        enc = self.make(layers=2)
        out = enc(rand(2, 6, 8, seed=16))
        assert out.per_channel.shape == (2, 6, 8)
        assert out.fused.shape == (6, 8)

    def test_default_model_dim(self):
        torch.manual_seed(10)
        enc = MultichannelEncoder(EncoderConfig(layers=1), channels=2)
        out = enc(torch.randn(2, 5, 256))
        assert out.fused.shape == (5, 256)

    def test_deterministic(self):
        enc = self.make()
        x = rand(2, 6, 8, seed=17)
        a = enc(x)
        b = enc(x)
        assert torch.equal(a.fused, b.fused)
        assert torch.isfinite(a.fused).all()

    def test_full_stack_gradients(self):
        enc = self.make(layers=2)
        x = rand(2, 4, 8, seed=18)
        target = rand(4, 8, seed=19)

        def loss_fn():
            return ((enc(x).fused - target) ** 2).sum()

        result = finite_difference_check(loss_fn, enc.named_parameters(),
                                         samples_per_param=2)
        assert result.max_rel_err < 1e-4, result
