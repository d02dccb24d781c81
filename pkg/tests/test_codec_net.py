import pytest
import torch

from crossir.codec_net import (
    LAMBDA_LADDER,
    AnalysisTransform,
    CrossModalEmbed,
    NetConfig,
    SynthesisTransform,
    quantize,
)
from crossir.errors import DataError, InvariantError, ModelError

torch.manual_seed(0)


@pytest.fixture(scope="module")
def toy_cfg():
    return NetConfig.toy()


class TestNetConfig:
    def test_full_preset_derived_sizes(self):
        cfg = NetConfig()
        assert cfg.latent_channels == 320
        assert cfg.num_slices == 5
        assert cfg.slice_channels == 64
        assert cfg.ctx_channels == 128
        assert cfg.pad_multiple == 64

    def test_toy_preset(self, toy_cfg):
        assert toy_cfg.preset == "toy"
        assert toy_cfg.latent_channels == 160
        assert toy_cfg.slice_channels == 32
        assert toy_cfg.ctx_channels == 64
        assert toy_cfg.pad_multiple == 64

    def test_lambda_ladder(self):
        assert LAMBDA_LADDER == [0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483]
        assert LAMBDA_LADDER == sorted(LAMBDA_LADDER)

    def test_invalid_configs_rejected(self):
        with pytest.raises(InvariantError):
            NetConfig(latent_channels=321)
        with pytest.raises(InvariantError):
            NetConfig(base_width=50)
        with pytest.raises(InvariantError):
            NetConfig(downsample_stages_y=0)

    def test_config_hash_stable_and_sensitive(self, toy_cfg):
        h = toy_cfg.config_hash()
        assert len(h) == 16 and int(h, 16) >= 0
        assert NetConfig.toy().config_hash() == h
        assert NetConfig().config_hash() != h

    def test_token_grid_list_coerced(self):
        cfg = NetConfig(token_grid=[4, 4])
        assert cfg.token_grid == (4, 4)


class TestQuantize:
    def test_round_examples(self):
        y = torch.tensor([1.4, -1.6, 0.6, 0.0])
        assert torch.equal(quantize(y, "round"), torch.tensor([1.0, -2.0, 1.0, 0.0]))

    def test_round_recenters_on_mean(self):
        y = torch.tensor([1.4])
        mean = torch.tensor([1.3])
        # mean + round(y - mean): the residual 0.1 rounds to zero
        assert quantize(y, "round", mean).item() == pytest.approx(1.3)

    def test_noise_mode_bounded(self):
        y = torch.randn(1000)
        delta = quantize(y, "noise") - y
        assert float(delta.abs().max()) < 0.5
        assert float(delta.abs().max()) > 0.0

    def test_ste_matches_round_forward(self):
        y = torch.randn(64)
        mean = torch.randn(64)
        assert torch.allclose(quantize(y, "ste", mean), quantize(y, "round", mean), atol=1e-6)

    def test_ste_passes_gradient_through(self):
        y = torch.randn(16, requires_grad=True)
        quantize(y, "ste").sum().backward()
        assert torch.equal(y.grad, torch.ones_like(y))

    def test_unknown_mode(self):
        with pytest.raises(ModelError):
            quantize(torch.zeros(4), "stochastic")


class TestTransforms:
    def test_toy_analysis_shapes(self, toy_cfg):
        g_a = AnalysisTransform(toy_cfg)
        y_yuv, y_ir = g_a(
            torch.randn(1, 1, 128, 128),
            torch.randn(1, 1, 64, 64),
            torch.randn(1, 1, 64, 64),
            torch.randn(1, 1, 128, 128),
        )
        assert y_yuv.shape == (1, 160, 8, 8)
        assert y_ir.shape == (1, 160, 8, 8)

    def test_mismatched_chroma_grid_raises(self, toy_cfg):
        g_a = AnalysisTransform(toy_cfg)
        with pytest.raises(DataError):
            g_a(
                torch.randn(1, 1, 128, 128),
                torch.randn(1, 1, 32, 32),
                torch.randn(1, 1, 32, 32),
                torch.randn(1, 1, 128, 128),
            )

    def test_toy_synthesis_shapes(self, toy_cfg):
        g_s = SynthesisTransform(toy_cfg)
        x_y, x_u, x_v, x_ir = g_s(torch.randn(1, 160, 8, 8), torch.randn(1, 160, 8, 8))
        assert x_y.shape == (1, 1, 128, 128)
        assert x_u.shape == (1, 1, 64, 64)
        assert x_v.shape == (1, 1, 64, 64)
        assert x_ir.shape == (1, 1, 128, 128)

    def test_synthesis_without_ir(self, toy_cfg):
        g_s = SynthesisTransform(toy_cfg)
        _, _, _, x_ir = g_s(torch.randn(1, 160, 8, 8))
        assert x_ir is None

    def test_full_preset_latent_grid(self):
        # 256x256 input through four stride-2 stages lands on a 16x16 latent
        cfg = NetConfig()
        g_a = AnalysisTransform(cfg)
        with torch.no_grad():
            y_yuv, y_ir = g_a(
                torch.randn(1, 1, 256, 256),
                torch.randn(1, 1, 128, 128),
                torch.randn(1, 1, 128, 128),
                torch.randn(1, 1, 256, 256),
            )
        assert y_yuv.shape == (1, 320, 16, 16)
        assert y_ir.shape == (1, 320, 16, 16)


class TestCrossModalEmbed:
    def test_identity_at_initialization(self, toy_cfg):
        embed = CrossModalEmbed(toy_cfg)
        y_yuv = torch.randn(2, 160, 8, 8)
        y_ir = torch.randn(2, 160, 8, 8)
        with torch.no_grad():
            out_yuv, out_ir = embed(y_yuv, y_ir)
        assert torch.equal(out_yuv, y_yuv)
        assert torch.equal(out_ir, y_ir)

    def test_shape_mismatch_raises(self, toy_cfg):
        embed = CrossModalEmbed(toy_cfg)
        with pytest.raises(DataError):
            embed(torch.randn(1, 160, 8, 8), torch.randn(1, 160, 4, 4))

    def test_cross_talk_after_unfreezing(self, toy_cfg):
        embed = CrossModalEmbed(toy_cfg)
        torch.nn.init.normal_(embed.attn_yuv_from_ir.out_proj.weight, std=0.02)
        y_yuv = torch.randn(1, 160, 8, 8)
        with torch.no_grad():
            a, _ = embed(y_yuv, torch.randn(1, 160, 8, 8))
            b, _ = embed(y_yuv, torch.randn(1, 160, 8, 8))
        assert not torch.equal(a, b)
