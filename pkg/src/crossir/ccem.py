"""Channel-wise cross-modality entropy model.

Each modality's latent is split into N channel slices coded autoregressively.
The infrared latent is coded first: slice 0 sees only its hyperprior context,
later slices add an intra-modality low-frequency context extracted from the
already-coded slices. Visible-band (RGB/YUV) slices additionally condition on
the complete infrared latent through an agent-attention fusion block, so the
infrared stream acts as side information for the visible one.

Variants used by the ablation harness:
  full        intra context via Lite-Transformer blocks, cross via agent attention
  no_lceb     intra context via plain convolutions, cross via agent attention
  no_lcfb     intra context via Lite-Transformer blocks, cross via concat + 1x1 conv
  hyper_only  hyperprior context only
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec_net import NetConfig, quantize
from .errors import InvariantError
from .layers import AgentFusionBlock, AttentionConfig, LiteContextBlock, conv1x1, conv3x3, subpel_conv3x3, zero_init

SIGMA_MIN = 0.11
LIKELIHOOD_FLOOR = 1e-9
VARIANTS = ("full", "no_lceb", "no_lcfb", "hyper_only")


@dataclass
class EntropyParams:
    """Per-slice Gaussian parameters."""

    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise InvariantError("mu/sigma shape mismatch")
        with torch.no_grad():
            if not bool(torch.isfinite(self.mu).all() & torch.isfinite(self.sigma).all()):
                raise InvariantError("entropy parameters must be finite")
            if float(self.sigma.min()) < SIGMA_MIN - 1e-6:
                raise InvariantError(f"sigma below floor: {float(self.sigma.min())}")


def split_slices(y: torch.Tensor, n: int) -> list:
    """Even contiguous channel partition; order is the coding order."""
    c = y.shape[1]
    if c % n:
        raise InvariantError(f"{c} channels not divisible into {n} slices")
    return list(torch.chunk(y, n, dim=1))


def merge_slices(slices) -> torch.Tensor:
    return torch.cat(list(slices), dim=1)


def gaussian_likelihood(y_hat: torch.Tensor, params: EntropyParams) -> torch.Tensor:
    """P(ŷ falls in its unit bin) under N(mu, sigma), floored away from zero."""
    sigma = torch.clamp(params.sigma, min=SIGMA_MIN)
    delta = y_hat - params.mu
    upper = _std_normal_cdf((delta + 0.5) / sigma)
    lower = _std_normal_cdf((delta - 0.5) / sigma)
    return torch.clamp(upper - lower, min=LIKELIHOOD_FLOOR)


def _std_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * (1.0 + torch.erf(x / math.sqrt(2.0)))


def estimate_rate(probabilities: torch.Tensor) -> torch.Tensor:
    """Total information content in bits."""
    return -torch.log2(probabilities).sum()


class FactorizedPrior(nn.Module):
    """Learned per-channel density for the hyper-latent.

    A stack of monotone nonlinear stages (softplus-positive matrices with
    tanh gating) parameterizes the logit of the CDF. A fixed wide logistic
    component with small weight is mixed in so every integer bin keeps
    strictly positive mass and the total mass over any finite window stays
    strictly below one.
    """

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 5.0,
                 tail_eps: float = 1e-4, tail_scale: float = 64.0):
        super().__init__()
        self.channels = channels
        self.tail_eps = tail_eps
        self.tail_scale = tail_scale
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self._matrices = nn.ParameterList()
        self._biases = nn.ParameterList()
        self._factors = nn.ParameterList()
        for i in range(len(dims) - 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            self._matrices.append(nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), init)))
            self._biases.append(nn.Parameter(torch.empty(channels, dims[i + 1], 1).uniform_(-0.5, 0.5)))
            if i < len(dims) - 2:
                self._factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def _logits(self, x: torch.Tensor) -> torch.Tensor:
        # x: (channels, 1, num_points)
        for i, matrix in enumerate(self._matrices):
            x = F.softplus(matrix) @ x + self._biases[i]
            if i < len(self._factors):
                x = x + torch.tanh(self._factors[i]) * torch.tanh(x)
        return x

    def cdf(self, x: torch.Tensor) -> torch.Tensor:
        """x: (channels, 1, n) -> CDF values in (0, 1), strictly increasing in x."""
        main = torch.sigmoid(self._logits(x))
        tail = torch.sigmoid(x / self.tail_scale)
        return (1.0 - self.tail_eps) * main + self.tail_eps * tail

    def likelihood(self, z: torch.Tensor) -> torch.Tensor:
        """Per-element bin probability for a (B, C, H, W) hyper-latent."""
        b, c, h, w = z.shape
        flat = z.permute(1, 0, 2, 3).reshape(c, 1, -1)
        p = self.cdf(flat + 0.5) - self.cdf(flat - 0.5)
        p = torch.clamp(p, min=LIKELIHOOD_FLOOR)
        return p.reshape(c, b, h, w).permute(1, 0, 2, 3)

    @torch.no_grad()
    def integer_pmf(self, support: int = 60) -> np.ndarray:
        """Float64 pmf over [-support, support] per channel, for CDF table building."""
        grid = torch.arange(-support - 0.5, support + 1.0, 1.0, dtype=torch.float64)
        x = grid.reshape(1, 1, -1).repeat(self.channels, 1, 1)
        was_double = next(self.parameters()).dtype == torch.float64
        module = self if was_double else self.double()
        cdf = module.cdf(x)
        pmf = (cdf[:, 0, 1:] - cdf[:, 0, :-1]).cpu().numpy()
        if not was_double:
            self.float()
        return pmf


class HyperEncoder(nn.Module):
    def __init__(self, in_ch: int, hyper_ch: int):
        super().__init__()
        self.net = nn.Sequential(
            conv3x3(in_ch, hyper_ch),
            nn.LeakyReLU(0.01, inplace=True),
            conv3x3(hyper_ch, hyper_ch, stride=2),
            nn.LeakyReLU(0.01, inplace=True),
            conv3x3(hyper_ch, hyper_ch, stride=2),
        )

    def forward(self, y):
        return self.net(y)


class HyperDecoder(nn.Module):
    def __init__(self, hyper_ch: int, out_ch: int):
        super().__init__()
        self.net = nn.Sequential(
            subpel_conv3x3(hyper_ch, hyper_ch * 3 // 2, 2),
            nn.LeakyReLU(0.01, inplace=True),
            subpel_conv3x3(hyper_ch * 3 // 2, hyper_ch * 2, 2),
            nn.LeakyReLU(0.01, inplace=True),
            conv3x3(hyper_ch * 2, out_ch),
        )

    def forward(self, z_hat):
        return self.net(z_hat)


class _ConvContext(nn.Module):
    """Plain convolutional stand-in for the Lite-Transformer context block."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.net = nn.Sequential(conv3x3(in_ch, out_ch), nn.GELU(), conv1x1(out_ch, out_ch))

    def forward(self, x):
        return self.net(x)


class CCEM(nn.Module):
    def __init__(self, cfg: NetConfig, variant: str = "full"):
        super().__init__()
        if variant not in VARIANTS:
            raise InvariantError(f"unknown entropy variant {variant!r}, expected one of {VARIANTS}")
        self.cfg = cfg
        self.variant = variant
        c = cfg.latent_channels
        hz = cfg.hyper_channels
        sc = cfg.slice_channels
        cc = cfg.ctx_channels
        n = cfg.num_slices

        self.hyper_enc_ir = HyperEncoder(c, hz)
        self.hyper_enc_rgb = HyperEncoder(c, hz)
        self.hyper_dec_ir = HyperDecoder(hz, 2 * c)
        self.hyper_dec_rgb = HyperDecoder(hz, 2 * c)
        self.prior_ir = FactorizedPrior(hz)
        self.prior_rgb = FactorizedPrior(hz)

        uses_ctx = variant != "hyper_only"
        if uses_ctx:
            intra_in = (n - 1) * sc
            if variant == "no_lceb":
                self.intra_ir = _ConvContext(intra_in, cc)
                self.intra_rgb = _ConvContext(intra_in, cc)
                self.ir_summary = _ConvContext(n * sc, cc)
            else:
                self.intra_ir = LiteContextBlock(intra_in, cc, cc)
                self.intra_rgb = LiteContextBlock(intra_in, cc, cc)
                self.ir_summary = LiteContextBlock(n * sc, cc, cc)
            self.rgb_seed = conv1x1(2 * c, cc)
            if variant == "no_lcfb":
                # ablation baseline: concatenate the two context stacks and mix
                # them with a single linear 1x1 projection
                self.fuse = conv1x1(2 * cc, cc)
            else:
                attn_cfg = AttentionConfig(
                    embed_dim=cc,
                    agent_tokens=cfg.agent_tokens,
                    token_grid=cfg.token_grid,
                )
                self.lcfb = AgentFusionBlock(cc, attn_cfg)

        h1, h2 = 4 * sc, 3 * sc
        self.param_heads_ir = nn.ModuleList()
        self.param_heads_rgb = nn.ModuleList()
        self.lrp_heads_ir = nn.ModuleList()
        self.lrp_heads_rgb = nn.ModuleList()
        for i in range(n):
            ir_ctx_in = 2 * c + (cc if (uses_ctx and i > 0) else 0)
            rgb_ctx_in = 2 * c + (cc if uses_ctx else 0)
            self.param_heads_ir.append(self._make_head(ir_ctx_in, h1, h2, 2 * sc))
            self.param_heads_rgb.append(self._make_head(rgb_ctx_in, h1, h2, 2 * sc))
            self.lrp_heads_ir.append(self._make_lrp(ir_ctx_in + 2 * sc, h2, sc))
            self.lrp_heads_rgb.append(self._make_lrp(rgb_ctx_in + 2 * sc, h2, sc))

    @staticmethod
    def _make_head(in_ch, h1, h2, out_ch):
        return nn.Sequential(
            conv1x1(in_ch, h1), nn.GELU(), conv1x1(h1, h2), nn.GELU(), conv1x1(h2, out_ch)
        )

    @staticmethod
    def _make_lrp(in_ch, hidden, out_ch):
        return nn.Sequential(
            conv1x1(in_ch, hidden), nn.GELU(), zero_init(conv1x1(hidden, out_ch))
        )

    # ---- contexts -------------------------------------------------------

    def _padded_prior(self, refined: list) -> torch.Tensor:
        """Concat already-coded slices, zero-padding up to the fixed (N-1)-slice width."""
        n, sc = self.cfg.num_slices, self.cfg.slice_channels
        ref = refined[0]
        missing = (n - 1) - len(refined)
        parts = list(refined)
        if missing > 0:
            parts.append(ref.new_zeros(ref.shape[0], missing * sc, *ref.shape[2:]))
        return torch.cat(parts, dim=1)

    def intra_context(self, modality: str, refined: list) -> torch.Tensor:
        if not refined:
            raise InvariantError("intra context requested with no prior slices (slice-0 rule)")
        block = self.intra_ir if modality == "ir" else self.intra_rgb
        return block(self._padded_prior(refined))

    def cross_context(self, q_src: torch.Tensor, f_ir_low: torch.Tensor) -> torch.Tensor:
        if self.variant == "no_lcfb":
            return self.fuse(torch.cat([q_src, f_ir_low], dim=1))
        return self.lcfb(q_src, f_ir_low)

    # ---- parameter prediction ------------------------------------------

    def predict_slice_params(self, modality: str, index: int, hyper_ctx: torch.Tensor,
                             intra_ctx: torch.Tensor | None = None,
                             cross_ctx: torch.Tensor | None = None) -> EntropyParams:
        """Map the slice's available contexts to (mu, sigma).

        Contract: IR slice 0 takes the hyper context alone; later IR slices
        require the intra context; RGB slices require the fused cross context
        (which already carries the RGB intra information on its query path).
        The hyper_only variant accepts no context beyond the hyperprior.
        """
        if modality not in ("ir", "rgb"):
            raise InvariantError(f"unknown modality {modality!r}")
        n = self.cfg.num_slices
        if not 0 <= index < n:
            raise InvariantError(f"slice index {index} out of range for N={n}")
        if self.variant == "hyper_only":
            if intra_ctx is not None or cross_ctx is not None:
                raise InvariantError("hyper_only variant takes no slice context")
            parts = [hyper_ctx]
        elif modality == "ir":
            if cross_ctx is not None:
                raise InvariantError("IR slices must not condition on RGB context")
            if index == 0:
                if intra_ctx is not None:
                    raise InvariantError("IR slice 0 uses the hyperprior only")
                parts = [hyper_ctx]
            else:
                if intra_ctx is None:
                    raise InvariantError(f"IR slice {index} requires the intra context")
                parts = [hyper_ctx, intra_ctx]
        else:
            if intra_ctx is not None:
                raise InvariantError(
                    "RGB intra context enters through the fusion query; pass cross_ctx only"
                )
            if cross_ctx is None:
                raise InvariantError(f"RGB slice {index} requires the fused cross context")
            parts = [hyper_ctx, cross_ctx]
        head = (self.param_heads_ir if modality == "ir" else self.param_heads_rgb)[index]
        raw = head(torch.cat(parts, dim=1))
        mu, sigma_raw = torch.chunk(raw, 2, dim=1)
        sigma = SIGMA_MIN + F.softplus(sigma_raw)
        return EntropyParams(mu=mu, sigma=sigma)

    def lrp_refine(self, modality: str, index: int, y_hat_slice: torch.Tensor,
                   ctx: torch.Tensor, mu: torch.Tensor) -> torch.Tensor:
        """Bounded post-quantization correction, identical at encode and decode."""
        head = (self.lrp_heads_ir if modality == "ir" else self.lrp_heads_rgb)[index]
        r = head(torch.cat([ctx, mu, y_hat_slice], dim=1))
        return y_hat_slice + 0.5 * torch.tanh(r)

    # ---- full forward pass ----------------------------------------------

    def _hyper(self, modality: str, y: torch.Tensor, mode: str):
        enc = self.hyper_enc_ir if modality == "ir" else self.hyper_enc_rgb
        dec = self.hyper_dec_ir if modality == "ir" else self.hyper_dec_rgb
        prior = self.prior_ir if modality == "ir" else self.prior_rgb
        z = enc(y)
        rate_mode = "noise" if mode == "train" else mode
        ctx_mode = "ste" if mode != "round" else "round"
        z_rate = quantize(z, rate_mode)
        z_ctx = quantize(z, ctx_mode)
        bits = estimate_rate(prior.likelihood(z_rate))
        return dec(z_ctx), bits, z_ctx

    def _slice_context(self, modality: str, index: int, hyper_ctx: torch.Tensor,
                       refined: list, f_ir_low: torch.Tensor | None):
        """Context tensor + params for one slice, given already-coded slices."""
        if self.variant == "hyper_only":
            ctx = hyper_ctx
            params = self.predict_slice_params(modality, index, hyper_ctx)
        elif modality == "ir":
            intra = self.intra_context("ir", refined) if index > 0 else None
            params = self.predict_slice_params("ir", index, hyper_ctx, intra_ctx=intra)
            ctx = hyper_ctx if intra is None else torch.cat([hyper_ctx, intra], dim=1)
        else:
            q_src = self.intra_context("rgb", refined) if index > 0 else self.rgb_seed(hyper_ctx)
            cross = self.cross_context(q_src, f_ir_low) if f_ir_low is not None else q_src
            params = self.predict_slice_params("rgb", index, hyper_ctx, cross_ctx=cross)
            ctx = torch.cat([hyper_ctx, cross], dim=1)
        return ctx, params

    def ir_lowfreq(self, refined_ir: list) -> torch.Tensor | None:
        if self.variant == "hyper_only":
            return None
        return self.ir_summary(merge_slices(refined_ir))

    def _code_modality(self, modality: str, y: torch.Tensor, hyper_ctx: torch.Tensor,
                       f_ir_low: torch.Tensor | None, mode: str):
        slices = split_slices(y, self.cfg.num_slices)
        rate_mode = "noise" if mode == "train" else mode
        ctx_mode = "ste" if mode != "round" else "round"
        refined, params_out, bits = [], [], y.new_zeros(())
        for i, y_i in enumerate(slices):
            ctx, params = self._slice_context(modality, i, hyper_ctx, refined, f_ir_low)
            y_rate = quantize(y_i, rate_mode, params.mu)
            bits = bits + estimate_rate(gaussian_likelihood(y_rate, params))
            y_hat = quantize(y_i, ctx_mode, params.mu)
            refined.append(self.lrp_refine(modality, i, y_hat, ctx, params.mu))
            params_out.append(params)
        return merge_slices(refined), bits, params_out

    def entropy_forward(self, y_yuv: torch.Tensor, y_ir: torch.Tensor | None, mode: str,
                        stage1: bool = False) -> dict:
        """Run the full conditional coding pipeline on a latent pair.

        mode: 'train' rates from noised latents, contexts straight-through;
        'ste' everything straight-through (deterministic objective);
        'round' hard rounding (inference).

        Returns refined latents, total bits per modality (hyper included),
        and the per-slice entropy parameters in coding order.
        """
        if mode not in ("train", "ste", "round"):
            raise InvariantError(f"unknown entropy mode {mode!r}")
        out = {"params_ir": [], "params_rgb": []}
        f_ir_low = None
        if stage1:
            out["y_hat_ir"] = None
            out["bits_ir"] = y_yuv.new_zeros(())
        else:
            if y_ir is None:
                raise InvariantError("IR latent required outside stage-1 training")
            hyper_ir, bits_z_ir, _ = self._hyper("ir", y_ir, mode)
            y_hat_ir, bits_ir, params_ir = self._code_modality("ir", y_ir, hyper_ir, None, mode)
            f_ir_low = self.ir_lowfreq(split_slices(y_hat_ir, self.cfg.num_slices))
            out["y_hat_ir"] = y_hat_ir
            out["bits_ir"] = bits_ir + bits_z_ir
            out["params_ir"] = params_ir

        hyper_rgb, bits_z_rgb, _ = self._hyper("rgb", y_yuv, mode)
        y_hat_yuv, bits_rgb, params_rgb = self._code_modality("rgb", y_yuv, hyper_rgb, f_ir_low, mode)
        out["y_hat_yuv"] = y_hat_yuv
        out["bits_rgb"] = bits_rgb + bits_z_rgb
        out["params_rgb"] = params_rgb
        return out
