import copy
import math
import warnings

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from scipy.stats import norm

from crossir.ccem import (
    CCEM,
    LIKELIHOOD_FLOOR,
    SIGMA_MIN,
    VARIANTS,
    EntropyParams,
    FactorizedPrior,
    estimate_rate,
    gaussian_likelihood,
    merge_slices,
    split_slices,
)
from crossir.codec_net import NetConfig
from crossir.errors import InvariantError

from _fd import fd_check_params as _fd_check_params

torch.manual_seed(0)


@pytest.fixture(scope="module")
def toy_cfg():
    return NetConfig.toy()


@pytest.fixture(scope="module")
def ccem(toy_cfg):
    torch.manual_seed(7)
    return CCEM(toy_cfg, "full")


def _params(b, c, h, w, seed=0):
    g = torch.Generator().manual_seed(seed)
    mu = torch.randn(b, c, h, w, generator=g)
    sigma = SIGMA_MIN + F.softplus(torch.randn(b, c, h, w, generator=g))
    return EntropyParams(mu=mu, sigma=sigma)


class TestEntropyParams:
    def test_shape_mismatch(self):
        with pytest.raises(InvariantError):
            EntropyParams(mu=torch.zeros(1, 4, 2, 2), sigma=torch.ones(1, 4, 2, 3))

    def test_sigma_floor_enforced(self):
        with pytest.raises(InvariantError, match="sigma below floor"):
            EntropyParams(mu=torch.zeros(1, 1, 2, 2), sigma=torch.full((1, 1, 2, 2), 0.05))

    def test_non_finite_rejected(self):
        bad = torch.zeros(1, 1, 2, 2)
        bad[0, 0, 0, 0] = float("nan")
        with pytest.raises(InvariantError, match="finite"):
            EntropyParams(mu=bad, sigma=torch.full((1, 1, 2, 2), 1.0))

    def test_grad_tensors_accepted_silently(self):
        mu = torch.zeros(1, 2, 2, 2, requires_grad=True) * 2.0
        sigma = torch.ones(1, 2, 2, 2, requires_grad=True) + 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            EntropyParams(mu=mu, sigma=sigma)


class TestSliceSplit:
    def test_round_trip(self):
        y = torch.randn(2, 160, 4, 4)
        slices = split_slices(y, 5)
        assert len(slices) == 5
        assert all(s.shape == (2, 32, 4, 4) for s in slices)
        assert torch.equal(merge_slices(slices), y)

    def test_coding_order_is_channel_order(self):
        y = torch.arange(10, dtype=torch.float32).reshape(1, 10, 1, 1)
        slices = split_slices(y, 5)
        assert slices[0].flatten().tolist() == [0.0, 1.0]
        assert slices[4].flatten().tolist() == [8.0, 9.0]

    def test_indivisible_raises(self):
        with pytest.raises(InvariantError):
            split_slices(torch.randn(1, 10, 2, 2), 3)


class TestGaussianLikelihood:
    def test_centred_unit_bin_mass(self):
        # P(|X - mu| <= 0.5) with sigma = 0.5 is erf(1/sqrt(2))
        p = EntropyParams(mu=torch.zeros(1, 1, 1, 1), sigma=torch.full((1, 1, 1, 1), 0.5))
        lik = gaussian_likelihood(torch.zeros(1, 1, 1, 1), p)
        assert float(lik) == pytest.approx(0.6826894921370859, abs=1e-6)

    def test_matches_scipy_interval_probability(self):
        g = torch.Generator().manual_seed(3)
        mu = torch.randn(1, 8, 4, 4, generator=g, dtype=torch.float64)
        sigma = 0.2 + torch.rand(1, 8, 4, 4, generator=g, dtype=torch.float64) * 3.0
        y = mu + torch.randn(1, 8, 4, 4, generator=g, dtype=torch.float64) * sigma
        got = gaussian_likelihood(y, EntropyParams(mu=mu, sigma=sigma)).numpy()
        d = (y - mu).numpy()
        want = norm.cdf((d + 0.5) / sigma.numpy()) - norm.cdf((d - 0.5) / sigma.numpy())
        np.testing.assert_allclose(got, np.maximum(want, LIKELIHOOD_FLOOR), rtol=0, atol=1e-12)

    def test_symmetric_about_mean(self):
        p = _params(1, 4, 3, 3, seed=5)
        d = torch.rand(1, 4, 3, 3) * 2
        left = gaussian_likelihood(p.mu - d, p)
        right = gaussian_likelihood(p.mu + d, p)
        assert torch.allclose(left, right, atol=1e-7)

    def test_monotone_in_distance(self):
        p = EntropyParams(mu=torch.zeros(1, 1, 1, 1), sigma=torch.ones(1, 1, 1, 1))
        liks = [float(gaussian_likelihood(torch.full((1, 1, 1, 1), float(k)), p)) for k in range(6)]
        assert all(a > b for a, b in zip(liks, liks[1:]))

    def test_integer_bins_sum_to_one(self):
        for s in (0.2, 1.0, 4.0):
            p = EntropyParams(mu=torch.zeros(1, 1, 1, 1), sigma=torch.full((1, 1, 1, 1), s))
            grid = torch.arange(-60, 61, dtype=torch.float32).reshape(1, 1, -1, 1)
            total = float(gaussian_likelihood(grid, EntropyParams(
                mu=torch.zeros_like(grid), sigma=torch.full_like(grid, s))).sum())
            assert total == pytest.approx(1.0, abs=1e-4)

    def test_floor_far_from_mean(self):
        p = EntropyParams(mu=torch.zeros(1, 1, 1, 1), sigma=torch.full((1, 1, 1, 1), SIGMA_MIN))
        lik = gaussian_likelihood(torch.full((1, 1, 1, 1), 1000.0), p)
        assert float(lik) == pytest.approx(LIKELIHOOD_FLOOR, rel=1e-6)

    def test_estimate_rate(self):
        assert float(estimate_rate(torch.full((4,), 0.5))) == pytest.approx(4.0)


class TestFactorizedPrior:
    def test_mass_concentrated_at_init(self):
        torch.manual_seed(11)
        prior = FactorizedPrior(8)
        pmf = prior.integer_pmf(support=60)
        assert pmf.shape == (8, 121)
        assert pmf.dtype == np.float64
        sums = pmf.sum(axis=1)
        assert np.all(sums >= 0.999) and np.all(sums <= 1.0)

    def test_every_bin_strictly_positive(self):
        torch.manual_seed(11)
        prior = FactorizedPrior(8)
        assert np.all(prior.integer_pmf(support=60) > 0)

    def test_cdf_strictly_increasing(self):
        # float64, the precision the coding tables are built in
        torch.manual_seed(11)
        prior = FactorizedPrior(4).double()
        x = torch.linspace(-80, 80, 4001, dtype=torch.float64).reshape(1, 1, -1).repeat(4, 1, 1)
        with torch.no_grad():
            c = prior.cdf(x)
        diffs = c[:, 0, 1:] - c[:, 0, :-1]
        assert float(diffs.min()) > 0
        assert float(c.min()) > 0.0 and float(c.max()) < 1.0

    def test_likelihood_consistent_with_cdf(self):
        torch.manual_seed(11)
        prior = FactorizedPrior(6)
        z = torch.randn(2, 6, 3, 5).round()
        with torch.no_grad():
            lik = prior.likelihood(z)
            flat = z.permute(1, 0, 2, 3).reshape(6, 1, -1)
            want = prior.cdf(flat + 0.5) - prior.cdf(flat - 0.5)
        want = want.reshape(6, 2, 3, 5).permute(1, 0, 2, 3).clamp(min=LIKELIHOOD_FLOOR)
        assert torch.allclose(lik, want, atol=1e-8)

    def test_positive_mass_survives_weight_jitter(self):
        torch.manual_seed(13)
        prior = FactorizedPrior(4)
        with torch.no_grad():
            for p in prior.parameters():
                p.add_(torch.randn_like(p) * 0.5)
        pmf = prior.integer_pmf(support=60)
        assert np.all(pmf > 0)
        assert np.all(pmf.sum(axis=1) < 1.0)


class TestPredictSliceParamsContract:
    def hyper(self, toy_cfg):
        return torch.randn(1, 2 * toy_cfg.latent_channels, 8, 8)

    def ctx(self, toy_cfg):
        return torch.randn(1, toy_cfg.ctx_channels, 8, 8)

    def test_ir_slice0_hyper_only(self, ccem, toy_cfg):
        p = ccem.predict_slice_params("ir", 0, self.hyper(toy_cfg))
        assert p.mu.shape == (1, toy_cfg.slice_channels, 8, 8)
        assert p.sigma.shape == p.mu.shape
        assert float(p.sigma.detach().min()) >= SIGMA_MIN

    def test_ir_slice0_rejects_intra(self, ccem, toy_cfg):
        with pytest.raises(InvariantError, match="hyperprior only"):
            ccem.predict_slice_params("ir", 0, self.hyper(toy_cfg), intra_ctx=self.ctx(toy_cfg))

    def test_ir_later_slices_require_intra(self, ccem, toy_cfg):
        with pytest.raises(InvariantError, match="requires the intra context"):
            ccem.predict_slice_params("ir", 2, self.hyper(toy_cfg))
        p = ccem.predict_slice_params("ir", 2, self.hyper(toy_cfg), intra_ctx=self.ctx(toy_cfg))
        assert p.mu.shape == (1, toy_cfg.slice_channels, 8, 8)

    def test_ir_never_sees_rgb_context(self, ccem, toy_cfg):
        with pytest.raises(InvariantError, match="must not condition on RGB"):
            ccem.predict_slice_params(
                "ir", 1, self.hyper(toy_cfg),
                intra_ctx=self.ctx(toy_cfg), cross_ctx=self.ctx(toy_cfg),
            )

    def test_rgb_requires_cross(self, ccem, toy_cfg):
        with pytest.raises(InvariantError, match="requires the fused cross context"):
            ccem.predict_slice_params("rgb", 0, self.hyper(toy_cfg))

    def test_rgb_rejects_explicit_intra(self, ccem, toy_cfg):
        with pytest.raises(InvariantError, match="fusion query"):
            ccem.predict_slice_params(
                "rgb", 1, self.hyper(toy_cfg),
                intra_ctx=self.ctx(toy_cfg), cross_ctx=self.ctx(toy_cfg),
            )

    def test_unknown_modality_and_bad_index(self, ccem, toy_cfg):
        with pytest.raises(InvariantError, match="unknown modality"):
            ccem.predict_slice_params("nir", 0, self.hyper(toy_cfg))
        with pytest.raises(InvariantError, match="out of range"):
            ccem.predict_slice_params("ir", 5, self.hyper(toy_cfg))

    def test_hyper_only_variant_takes_no_context(self, toy_cfg):
        torch.manual_seed(7)
        bare = CCEM(toy_cfg, "hyper_only")
        p = bare.predict_slice_params("rgb", 3, self.hyper(toy_cfg))
        assert p.mu.shape == (1, toy_cfg.slice_channels, 8, 8)
        with pytest.raises(InvariantError, match="takes no slice context"):
            bare.predict_slice_params("rgb", 3, self.hyper(toy_cfg), cross_ctx=self.ctx(toy_cfg))
        assert bare.ir_lowfreq([torch.randn(1, 32, 8, 8)] * 5) is None

    def test_unknown_variant(self, toy_cfg):
        with pytest.raises(InvariantError, match="unknown entropy variant"):
            CCEM(toy_cfg, "extra_fancy")

    def test_intra_context_slice0_rule(self, ccem):
        with pytest.raises(InvariantError, match="slice-0 rule"):
            ccem.intra_context("ir", [])


class TestLrpRefine:
    def test_identity_at_init(self, toy_cfg):
        torch.manual_seed(7)
        fresh = CCEM(toy_cfg, "full")
        y_hat = torch.randn(1, toy_cfg.slice_channels, 8, 8).round()
        ctx = torch.randn(1, 2 * toy_cfg.latent_channels, 8, 8)
        mu = torch.randn_like(y_hat)
        with torch.no_grad():
            out = fresh.lrp_refine("ir", 0, y_hat, ctx, mu)
        assert torch.equal(out, y_hat)

    def test_correction_bounded_by_half(self, ccem, toy_cfg):
        refiner = copy.deepcopy(ccem)
        with torch.no_grad():
            for p in refiner.lrp_heads_ir[0].parameters():
                p.add_(torch.randn_like(p) * 3.0)
        y_hat = torch.randn(1, toy_cfg.slice_channels, 8, 8).round()
        ctx = torch.randn(1, 2 * toy_cfg.latent_channels, 8, 8)
        with torch.no_grad():
            out = refiner.lrp_refine("ir", 0, y_hat, ctx, torch.randn_like(y_hat))
        assert float((out - y_hat).abs().max()) <= 0.5


class TestGradientFidelity:
    """Finite-difference validation of the custom differentiable paths.

    Everything runs in float64; tolerance is 1e-4 max relative error.
    """

    def test_fusion_block_gradients(self, ccem, toy_cfg):
        torch.manual_seed(21)
        block = copy.deepcopy(ccem.lcfb).double()
        # the recovery projection is zero at init, which would zero every
        # gradient upstream of it; give it weight so all paths carry signal
        torch.nn.init.normal_(block.recover.weight, std=0.1)
        cc = toy_cfg.ctx_channels
        f_q = torch.randn(1, cc, 8, 8, dtype=torch.float64)
        f_kv = torch.randn(1, cc, 8, 8, dtype=torch.float64)
        w = torch.randn(1, cc, 8, 8, dtype=torch.float64)

        def loss_fn():
            return (block(f_q, f_kv) * w).sum()

        wanted = (
            "attn.bias1", "attn.bias2", "attn.dwc.weight", "attn.w_q.weight",
            "attn.w_k.weight", "attn.w_v.weight", "embed_q.weight",
            "embed_kv.weight", "norm_q.weight", "mlp.0.weight", "recover.weight",
        )
        named = [(n, p) for n, p in block.named_parameters() if n in wanted]
        assert len(named) == len(wanted)
        assert _fd_check_params(loss_fn, named, picks=2) >= 20

    def test_lite_context_block_gradients(self, ccem, toy_cfg):
        torch.manual_seed(22)
        block = copy.deepcopy(ccem.intra_ir).double()
        in_ch = (toy_cfg.num_slices - 1) * toy_cfg.slice_channels
        x = torch.randn(1, in_ch, 8, 8, dtype=torch.float64)
        w = torch.randn(1, toy_cfg.ctx_channels, 8, 8, dtype=torch.float64)

        def loss_fn():
            return (block(x) * w).sum()

        wanted = (
            "embed.weight", "attn.q_proj.weight", "attn.k_proj.weight",
            "attn.v_proj.weight", "local.0.weight", "local.1.weight",
            "merge.weight", "ffn.0.weight", "norm1.weight", "recover.weight",
        )
        named = [(n, p) for n, p in block.named_parameters() if n in wanted]
        assert len(named) == len(wanted)
        assert _fd_check_params(loss_fn, named, picks=2) >= 20

    def test_likelihood_gradients(self):
        torch.manual_seed(23)
        mu = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
        raw = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
        with torch.no_grad():
            y0 = mu + (torch.rand_like(mu) - 0.5) * 2.0
        y = y0.clone().requires_grad_(True)

        def loss_fn():
            sigma = SIGMA_MIN + F.softplus(raw)
            return estimate_rate(gaussian_likelihood(y, EntropyParams(mu=mu, sigma=sigma)))

        named = [("y", y), ("mu", mu), ("sigma_raw", raw)]
        assert _fd_check_params(loss_fn, named, picks=8) >= 20


class TestCausality:
    """Slice coding must be strictly causal at a fixed hyper context."""

    def hyper(self, toy_cfg, seed=31):
        g = torch.Generator().manual_seed(seed)
        return torch.randn(1, 2 * toy_cfg.latent_channels, 8, 8, generator=g) * 0.3

    def test_ir_earlier_slices_untouched(self, ccem, toy_cfg):
        sc = toy_cfg.slice_channels
        g = torch.Generator().manual_seed(32)
        y = torch.randn(1, toy_cfg.latent_channels, 8, 8, generator=g)
        hyper = self.hyper(toy_cfg)
        with torch.no_grad():
            _, _, base = ccem._code_modality("ir", y, hyper, None, "round")
            for j in (1, 3):
                y_p = y.clone()
                y_p[:, j * sc:(j + 1) * sc] += 0.75
                _, _, pert = ccem._code_modality("ir", y_p, hyper, None, "round")
                for i in range(j + 1):
                    assert torch.equal(base[i].mu, pert[i].mu), (j, i)
                    assert torch.equal(base[i].sigma, pert[i].sigma), (j, i)
                later = range(j + 1, toy_cfg.num_slices)
                assert any(not torch.equal(base[i].mu, pert[i].mu) for i in later), j

    def test_rgb_earlier_slices_untouched(self, ccem, toy_cfg):
        sc = toy_cfg.slice_channels
        g = torch.Generator().manual_seed(33)
        y = torch.randn(1, toy_cfg.latent_channels, 8, 8, generator=g)
        f_ir = torch.randn(1, toy_cfg.ctx_channels, 8, 8, generator=g)
        hyper = self.hyper(toy_cfg)
        with torch.no_grad():
            _, _, base = ccem._code_modality("rgb", y, hyper, f_ir, "round")
            j = 2
            y_p = y.clone()
            y_p[:, j * sc:(j + 1) * sc] += 0.75
            _, _, pert = ccem._code_modality("rgb", y_p, hyper, f_ir, "round")
        for i in range(j + 1):
            assert torch.equal(base[i].mu, pert[i].mu)
        assert not torch.equal(base[j + 1].mu, pert[j + 1].mu)

    def test_rgb_stream_never_reaches_ir_params(self, ccem, toy_cfg):
        g = torch.Generator().manual_seed(34)
        y_yuv = torch.randn(1, toy_cfg.latent_channels, 8, 8, generator=g)
        y_ir = torch.randn(1, toy_cfg.latent_channels, 8, 8, generator=g)
        with torch.no_grad():
            a = ccem.entropy_forward(y_yuv, y_ir, "round")
            b = ccem.entropy_forward(y_yuv + torch.randn_like(y_yuv), y_ir, "round")
        assert torch.equal(a["y_hat_ir"], b["y_hat_ir"])
        assert float(a["bits_ir"]) == float(b["bits_ir"])
        for pa, pb in zip(a["params_ir"], b["params_ir"]):
            assert torch.equal(pa.mu, pb.mu)
            assert torch.equal(pa.sigma, pb.sigma)

    def test_fusion_dormant_at_init_active_after(self, toy_cfg):
        # zero-init recovery means RGB params ignore IR until training moves it
        torch.manual_seed(7)
        fresh = CCEM(toy_cfg, "full")
        g = torch.Generator().manual_seed(35)
        y = torch.randn(1, toy_cfg.latent_channels, 8, 8, generator=g)
        f_a = torch.randn(1, toy_cfg.ctx_channels, 8, 8, generator=g)
        f_b = torch.randn(1, toy_cfg.ctx_channels, 8, 8, generator=g)
        hyper = self.hyper(toy_cfg)
        with torch.no_grad():
            _, _, pa = fresh._code_modality("rgb", y, hyper, f_a, "round")
            _, _, pb = fresh._code_modality("rgb", y, hyper, f_b, "round")
        assert all(torch.equal(x.mu, z.mu) for x, z in zip(pa, pb))
        torch.nn.init.normal_(fresh.lcfb.recover.weight, std=0.1)
        with torch.no_grad():
            _, _, pa = fresh._code_modality("rgb", y, hyper, f_a, "round")
            _, _, pb = fresh._code_modality("rgb", y, hyper, f_b, "round")
        assert any(not torch.equal(x.mu, z.mu) for x, z in zip(pa, pb))


class TestEntropyForward:
    def latents(self, toy_cfg, seed=41):
        g = torch.Generator().manual_seed(seed)
        y_yuv = torch.randn(1, toy_cfg.latent_channels, 8, 8, generator=g)
        y_ir = torch.randn(1, toy_cfg.latent_channels, 8, 8, generator=g)
        return y_yuv, y_ir

    def test_output_structure(self, ccem, toy_cfg):
        y_yuv, y_ir = self.latents(toy_cfg)
        with torch.no_grad():
            out = ccem.entropy_forward(y_yuv, y_ir, "round")
        assert out["y_hat_yuv"].shape == y_yuv.shape
        assert out["y_hat_ir"].shape == y_ir.shape
        assert len(out["params_rgb"]) == toy_cfg.num_slices
        assert len(out["params_ir"]) == toy_cfg.num_slices
        assert float(out["bits_rgb"]) > 0 and float(out["bits_ir"]) > 0

    def test_round_mode_deterministic(self, ccem, toy_cfg):
        y_yuv, y_ir = self.latents(toy_cfg)
        with torch.no_grad():
            a = ccem.entropy_forward(y_yuv, y_ir, "round")
            b = ccem.entropy_forward(y_yuv, y_ir, "round")
        assert torch.equal(a["y_hat_yuv"], b["y_hat_yuv"])
        assert float(a["bits_rgb"]) == float(b["bits_rgb"])

    def test_stage1_skips_infrared(self, ccem, toy_cfg):
        y_yuv, _ = self.latents(toy_cfg)
        with torch.no_grad():
            out = ccem.entropy_forward(y_yuv, None, "round", stage1=True)
        assert out["y_hat_ir"] is None
        assert float(out["bits_ir"]) == 0.0
        assert out["params_ir"] == []
        assert out["y_hat_yuv"].shape == y_yuv.shape

    def test_missing_ir_outside_stage1(self, ccem, toy_cfg):
        y_yuv, _ = self.latents(toy_cfg)
        with pytest.raises(InvariantError, match="IR latent required"):
            ccem.entropy_forward(y_yuv, None, "round")

    def test_unknown_mode(self, ccem, toy_cfg):
        y_yuv, y_ir = self.latents(toy_cfg)
        with pytest.raises(InvariantError, match="unknown entropy mode"):
            ccem.entropy_forward(y_yuv, y_ir, "eval")

    def test_variant_wiring(self, toy_cfg):
        torch.manual_seed(9)
        no_lceb = CCEM(toy_cfg, "no_lceb")
        assert type(no_lceb.intra_ir).__name__ == "_ConvContext"
        no_lcfb = CCEM(toy_cfg, "no_lcfb")
        assert hasattr(no_lcfb, "fuse") and not hasattr(no_lcfb, "lcfb")
        bare = CCEM(toy_cfg, "hyper_only")
        assert not hasattr(bare, "intra_ir") and not hasattr(bare, "rgb_seed")
        for model in (no_lceb, no_lcfb, bare):
            y = torch.randn(1, toy_cfg.latent_channels, 8, 8)
            with torch.no_grad():
                out = model.entropy_forward(y, y.clone(), "round")
            assert out["y_hat_yuv"].shape == y.shape
        assert set(VARIANTS) == {"full", "no_lceb", "no_lcfb", "hyper_only"}
