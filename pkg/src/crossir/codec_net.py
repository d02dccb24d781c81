"""Analysis/synthesis transforms, cross-modality embedding, and quantization.

The visible branch works in YUV420: the Y plane runs four stride-2 stages
(x16 total), the half-resolution U and V planes three stages (x8), so all
three land on the same latent grid and concatenate into one YUV feature.
The infrared branch mirrors the Y path. Both latents pass through a
bidirectional cross-attention embedding before entropy modeling.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import DataError, InvariantError, ModelError
from .layers import (
    MultiHeadAttention,
    ResidualBlockUpsample,
    ResidualBlockWithStride,
    ResidualBottleneck,
    SelfAttentionBlock,
    conv1x1,
    conv3x3,
    to_grid,
    to_tokens,
    zero_init,
)

LAMBDA_LADDER = [0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483]


@dataclass
class NetConfig:
    latent_channels: int = 320
    base_width: int = 128
    downsample_stages_y: int = 4
    downsample_stages_uv: int = 3
    attention_heads: int = 2
    hyper_channels: int = 192
    num_slices: int = 5
    agent_tokens: int = 49
    token_grid: tuple = (16, 16)
    preset: str = "full"

    def __post_init__(self):
        if self.latent_channels % self.num_slices:
            raise InvariantError(
                f"latent_channels {self.latent_channels} not divisible by {self.num_slices} slices"
            )
        if self.downsample_stages_y < 1 or self.downsample_stages_uv < 1:
            raise InvariantError("downsampling stage counts must be >= 1")
        if self.base_width % 4:
            raise InvariantError("base_width must be divisible by 4")
        if isinstance(self.token_grid, list):
            self.token_grid = tuple(self.token_grid)

    @classmethod
    def toy(cls) -> "NetConfig":
        return cls(
            latent_channels=160,
            base_width=48,
            hyper_channels=96,
            token_grid=(8, 8),
            preset="toy",
        )

    @property
    def slice_channels(self) -> int:
        return self.latent_channels // self.num_slices

    @property
    def ctx_channels(self) -> int:
        return 2 * self.slice_channels

    @property
    def pad_multiple(self) -> int:
        # latent stride (x16) times the hyper stride (x4)
        return (2**self.downsample_stages_y) * 4

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def quantize(y: torch.Tensor, mode: str, mean: torch.Tensor | None = None) -> torch.Tensor:
    """Quantize a latent: additive noise, hard rounding, or straight-through rounding.

    Rounding is mean-re-centred: mean + round(y - mean), which keeps the coded
    symbols zero-centred under the predicted distribution.
    """
    if mean is None:
        mean = torch.zeros_like(y)
    if mode == "noise":
        return y + torch.empty_like(y).uniform_(-0.5, 0.5)
    if mode == "round":
        return mean + torch.round(y - mean)
    if mode == "ste":
        centred = y - mean
        return mean + centred + (torch.round(centred) - centred).detach()
    raise ModelError(f"unknown quantization mode {mode!r}")


def _down_stage(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(ResidualBlockWithStride(in_ch, out_ch), ResidualBottleneck(out_ch))


def _up_stage(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(ResidualBlockUpsample(in_ch, out_ch), ResidualBottleneck(out_ch))


class _LumaEncoder(nn.Module):
    """Four stride-2 stages with one self-attention block late in the stack."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        bw = cfg.base_width
        self.stage1 = _down_stage(1, bw // 2)
        self.stage2 = _down_stage(bw // 2, bw)
        self.stage3 = _down_stage(bw, 2 * bw)
        self.attn = SelfAttentionBlock(2 * bw, cfg.attention_heads)
        self.stage4 = _down_stage(2 * bw, 2 * bw)

    def forward(self, x):
        x = self.stage1(x)
        x = self.stage2(x)
        x = self.attn(self.stage3(x))
        return self.stage4(x)


class _ChromaEncoder(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        bw = cfg.base_width
        self.stages = nn.Sequential(
            _down_stage(1, bw // 2), _down_stage(bw // 2, bw // 2), _down_stage(bw // 2, bw)
        )

    def forward(self, x):
        return self.stages(x)


class AnalysisTransform(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        bw = cfg.base_width
        self.y_path = _LumaEncoder(cfg)
        self.u_path = _ChromaEncoder(cfg)
        self.v_path = _ChromaEncoder(cfg)
        self.ir_path = _LumaEncoder(cfg)
        self.proj_yuv = conv1x1(4 * bw, cfg.latent_channels)
        self.proj_ir = conv1x1(2 * bw, cfg.latent_channels)

    def forward(self, x_y, x_u, x_v, x_ir):
        fy = self.y_path(x_y)
        fu = self.u_path(x_u)
        fv = self.v_path(x_v)
        if fy.shape[-2:] != fu.shape[-2:] or fy.shape[-2:] != fv.shape[-2:]:
            raise DataError(
                f"luma/chroma latent grids disagree ({tuple(fy.shape[-2:])} vs {tuple(fu.shape[-2:])}); "
                "input dims must be padded to the model stride"
            )
        y_yuv = self.proj_yuv(torch.cat([fy, fu, fv], dim=1))
        y_ir = self.proj_ir(self.ir_path(x_ir))
        return y_yuv, y_ir


class _LumaDecoder(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        bw = cfg.base_width
        self.stage4 = _up_stage(2 * bw, 2 * bw)
        self.attn = SelfAttentionBlock(2 * bw, cfg.attention_heads)
        self.stage3 = _up_stage(2 * bw, bw)
        self.stage2 = _up_stage(bw, bw // 2)
        self.stage1 = _up_stage(bw // 2, bw // 2)
        self.head = conv3x3(bw // 2, 1)

    def forward(self, x):
        x = self.attn(self.stage4(x))
        x = self.stage3(x)
        x = self.stage2(x)
        return self.head(self.stage1(x))


class _ChromaDecoder(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        bw = cfg.base_width
        self.stages = nn.Sequential(
            _up_stage(bw, bw // 2), _up_stage(bw // 2, bw // 4), _up_stage(bw // 4, bw // 4)
        )
        self.head = conv3x3(bw // 4, 1)

    def forward(self, x):
        return self.head(self.stages(x))


class SynthesisTransform(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        bw = cfg.base_width
        self.unproj_yuv = conv1x1(cfg.latent_channels, 4 * bw)
        self.unproj_ir = conv1x1(cfg.latent_channels, 2 * bw)
        self.y_head = _LumaDecoder(cfg)
        self.u_head = _ChromaDecoder(cfg)
        self.v_head = _ChromaDecoder(cfg)
        self.ir_head = _LumaDecoder(cfg)
        self._bw = bw

    def forward(self, y_yuv_hat, y_ir_hat=None):
        bw = self._bw
        f = self.unproj_yuv(y_yuv_hat)
        fy, fu, fv = torch.split(f, [2 * bw, bw, bw], dim=1)
        x_y = self.y_head(fy)
        x_u = self.u_head(fu)
        x_v = self.v_head(fv)
        x_ir = None if y_ir_hat is None else self.ir_head(self.unproj_ir(y_ir_hat))
        return x_y, x_u, x_v, x_ir


class CrossModalEmbed(nn.Module):
    """Bidirectional cross-attention between the two latents.

    Each direction is a residual pre-norm attention pass whose output
    projection starts at zero, so the embedding is the identity at
    initialization and learns how much cross-modality detail to mix in.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        c = cfg.latent_channels
        self.norm_yuv = nn.LayerNorm(c)
        self.norm_ir = nn.LayerNorm(c)
        self.attn_yuv_from_ir = MultiHeadAttention(c, cfg.attention_heads)
        self.attn_ir_from_yuv = MultiHeadAttention(c, cfg.attention_heads)
        zero_init(self.attn_yuv_from_ir.out_proj)
        zero_init(self.attn_ir_from_yuv.out_proj)

    def forward(self, y_yuv, y_ir):
        if y_yuv.shape != y_ir.shape:
            raise DataError(f"latent shapes differ: {tuple(y_yuv.shape)} vs {tuple(y_ir.shape)}")
        _, _, h, w = y_yuv.shape
        t_yuv = to_tokens(y_yuv)
        t_ir = to_tokens(y_ir)
        n_yuv = self.norm_yuv(t_yuv)
        n_ir = self.norm_ir(t_ir)
        out_yuv = t_yuv + self.attn_yuv_from_ir(n_yuv, n_ir)
        out_ir = t_ir + self.attn_ir_from_yuv(n_ir, n_yuv)
        return to_grid(out_yuv, h, w), to_grid(out_ir, h, w)
