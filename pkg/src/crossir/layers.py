"""Shared network building blocks.

Convolutional residual blocks follow the usual learned-codec layout
(stride-2 residual downsampling, subpixel upsampling, bottleneck stacks).
The two context blocks live here too: a Lite-Transformer style long-short
block for intra-modality context and an agent-attention fusion block for
pulling infrared context into the visible-band branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvariantError


def conv3x3(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)


def conv1x1(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=1, stride=stride)


def subpel_conv3x3(in_ch: int, out_ch: int, r: int = 2) -> nn.Sequential:
    """Sub-pixel upsampling: 3x3 conv into r^2 channel groups + pixel shuffle."""
    return nn.Sequential(nn.Conv2d(in_ch, out_ch * r**2, kernel_size=3, padding=1), nn.PixelShuffle(r))


def zero_init(module: nn.Module) -> nn.Module:
    """Zero all weights/biases so the module starts as the additive identity."""
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class ResidualBottleneck(nn.Module):
    """1x1 -> 3x3 -> 1x1 bottleneck with identity skip."""

    def __init__(self, ch: int):
        super().__init__()
        mid = ch // 2
        self.branch = nn.Sequential(
            conv1x1(ch, mid),
            nn.ReLU(inplace=True),
            conv3x3(mid, mid),
            nn.ReLU(inplace=True),
            conv1x1(mid, ch),
        )

    def forward(self, x):
        return x + self.branch(x)


class ResidualBlockWithStride(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 2):
        super().__init__()
        self.conv1 = conv3x3(in_ch, out_ch, stride=stride)
        self.conv2 = conv3x3(out_ch, out_ch)
        self.skip = conv1x1(in_ch, out_ch, stride=stride)

    def forward(self, x):
        out = F.leaky_relu(self.conv1(x), 0.01)
        out = self.conv2(out)
        return out + self.skip(x)


class ResidualBlockUpsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, r: int = 2):
        super().__init__()
        self.up = subpel_conv3x3(in_ch, out_ch, r)
        self.conv = conv3x3(out_ch, out_ch)
        self.skip = subpel_conv3x3(in_ch, out_ch, r)

    def forward(self, x):
        out = F.leaky_relu(self.up(x), 0.01)
        out = self.conv(out)
        return out + self.skip(x)


class MultiHeadAttention(nn.Module):
    """Plain scaled dot-product attention over token sequences.

    Written out by hand (rather than nn.MultiheadAttention) so the same code
    path runs cleanly in float64 for finite-difference gradient checking.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise InvariantError(f"attention dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, q_tokens, kv_tokens):
        q = self._split(self.q_proj(q_tokens))
        k = self._split(self.k_proj(kv_tokens))
        v = self._split(self.v_proj(kv_tokens))
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = attn @ v
        b, _, t, _ = out.shape
        return self.out_proj(out.transpose(1, 2).reshape(b, t, -1))


def to_tokens(x: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, H*W, C)"""
    return x.flatten(2).transpose(1, 2)


def to_grid(tokens: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """(B, H*W, C) -> (B, C, H, W)"""
    return tokens.transpose(1, 2).reshape(tokens.shape[0], -1, h, w)


class SelfAttentionBlock(nn.Module):
    """Pre-norm self-attention + MLP over the spatial grid, used mid-encoder."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 2), nn.GELU(), nn.Linear(dim * 2, dim))

    def forward(self, x):
        _, _, h, w = x.shape
        t = to_tokens(x)
        t = t + self.attn(self.norm1(t), self.norm1(t))
        t = t + self.mlp(self.norm2(t))
        return to_grid(t, h, w)


class LiteContextBlock(nn.Module):
    """Long-short context extractor in the Lite-Transformer pattern.

    Channels are split after the patch embedding: one half runs global
    self-attention (the long / low-frequency path), the other a depthwise +
    pointwise convolution (the short path). A feed-forward stage follows and
    a 1x1 recovery projects to the context width.
    """

    def __init__(self, in_ch: int, dim: int, out_ch: int, heads: int = 2):
        super().__init__()
        if dim % 2:
            raise InvariantError(f"lite block dim must be even, got {dim}")
        half = dim // 2
        self.embed = conv1x1(in_ch, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(half, heads)
        self.local = nn.Sequential(
            nn.Conv2d(half, half, kernel_size=3, padding=1, groups=half),
            conv1x1(half, half),
        )
        self.merge = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, dim * 2), nn.GELU(), nn.Linear(dim * 2, dim))
        self.recover = conv1x1(dim, out_ch)

    def forward(self, x):
        _, _, h, w = x.shape
        emb = self.embed(x)
        t = to_tokens(emb)
        n = self.norm1(t)
        half = n.shape[-1] // 2
        long_part = self.attn(n[..., :half], n[..., :half])
        short_part = to_tokens(self.local(to_grid(n[..., half:], h, w)))
        t = t + self.merge(torch.cat([long_part, short_part], dim=-1))
        t = t + self.ffn(self.norm2(t))
        return self.recover(to_grid(t, h, w))


@dataclass
class AttentionConfig:
    """Configuration of the agent-attention fusion block."""

    embed_dim: int = 64
    heads: int = 1
    agent_tokens: int = 49
    patch_size: int = 1
    dwc_kernel: int = 3
    # canonical grid the bias tables are parameterized on; other grids
    # get bilinearly interpolated tables
    token_grid: tuple = field(default_factory=lambda: (8, 8))

    def __post_init__(self):
        side = int(math.isqrt(self.agent_tokens))
        if side * side != self.agent_tokens:
            raise InvariantError(f"agent_tokens must be a perfect square, got {self.agent_tokens}")
        if self.embed_dim % self.heads:
            raise InvariantError("embed_dim must be divisible by heads")

    @property
    def agent_side(self) -> int:
        return int(math.isqrt(self.agent_tokens))


def _resize_bias(bias: torch.Tensor, src_hw, dst_hw) -> torch.Tensor:
    """Bilinearly resize the trailing (h, w) grid of a (n, h, w) bias table."""
    if src_hw == dst_hw:
        return bias
    return F.interpolate(
        bias.unsqueeze(0), size=dst_hw, mode="bilinear", align_corners=False
    ).squeeze(0)


class AgentAttention(nn.Module):
    """Two-stage attention through pooled agent tokens.

    Queries come from the fusing modality, keys/values from the reference
    modality. The query tokens are average-pooled to an agent grid; agents
    attend to keys to build V', then queries attend to agents to read it
    back. Learned position biases enter both softmax stages, and a depthwise
    convolution of V is re-added at the end.
    """

    def __init__(self, cfg: AttentionConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.w_q = nn.Linear(d, d)
        self.w_k = nn.Linear(d, d)
        self.w_v = nn.Linear(d, d)
        t0 = cfg.token_grid[0] * cfg.token_grid[1]
        self.bias1 = nn.Parameter(torch.zeros(cfg.agent_tokens, t0))
        self.bias2 = nn.Parameter(torch.zeros(t0, cfg.agent_tokens))
        pad = cfg.dwc_kernel // 2
        self.dwc = nn.Conv2d(d, d, kernel_size=cfg.dwc_kernel, padding=pad, groups=d)

    def _agent_grid(self, h: int, w: int):
        side = self.cfg.agent_side
        return (min(side, h), min(side, w))

    def _biases(self, h, w, ga, gb, dtype):
        g0 = self.cfg.agent_side
        h0, w0 = self.cfg.token_grid
        b1 = _resize_bias(self.bias1.view(-1, h0, w0), (h0, w0), (h, w)).reshape(-1, h * w)
        b1 = (
            _resize_bias(b1.transpose(0, 1).view(-1, g0, g0), (g0, g0), (ga, gb))
            .reshape(h * w, ga * gb)
            .transpose(0, 1)
        )
        b2 = _resize_bias(self.bias2.view(-1, g0, g0), (g0, g0), (ga, gb)).reshape(-1, ga * gb)
        b2 = (
            _resize_bias(b2.transpose(0, 1).view(-1, h0, w0), (h0, w0), (h, w))
            .reshape(ga * gb, h * w)
            .transpose(0, 1)
        )
        return b1.to(dtype), b2.to(dtype)

    def forward(self, q_tokens, kv_tokens, h: int, w: int):
        cfg = self.cfg
        heads, hd = cfg.heads, cfg.embed_dim // cfg.heads
        b, t, d = q_tokens.shape
        if t != h * w:
            raise InvariantError(f"token count {t} does not match grid {h}x{w}")
        ga, gb = self._agent_grid(h, w)
        n_agents = ga * gb
        if n_agents > t:
            raise InvariantError(f"{n_agents} agent tokens exceed {t} input tokens")

        q = self.w_q(q_tokens)
        k = self.w_k(kv_tokens)
        v = self.w_v(kv_tokens)
        agents = to_tokens(F.adaptive_avg_pool2d(to_grid(q, h, w), (ga, gb)))
        b1, b2 = self._biases(h, w, ga, gb, q.dtype)

        def split(x):
            return x.view(b, -1, heads, hd).transpose(1, 2)

        qh, kh, vh, ah = split(q), split(k), split(v), split(agents)
        # stage 1: agents gather from keys/values
        logits1 = ah @ kh.transpose(-2, -1) / math.sqrt(hd) + b1
        v_agg = torch.softmax(logits1, dim=-1) @ vh
        # stage 2: queries read from agents
        logits2 = qh @ ah.transpose(-2, -1) / math.sqrt(hd) + b2
        fused = torch.softmax(logits2, dim=-1) @ v_agg
        fused = fused.transpose(1, 2).reshape(b, t, d)
        return fused + to_tokens(self.dwc(to_grid(v, h, w)))


class AgentFusionBlock(nn.Module):
    """Cross-modality context fusion wrapped as embed -> LN -> attention -> LN -> MLP -> recover.

    The recovery projection is zero-initialized, so at initialization the
    block is the identity on its query-side input.
    """

    def __init__(self, ch: int, cfg: AttentionConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        p = cfg.patch_size
        self.embed_q = nn.Conv2d(ch, d, kernel_size=p, stride=p)
        self.embed_kv = nn.Conv2d(ch, d, kernel_size=p, stride=p)
        self.norm_q = nn.LayerNorm(d)
        self.norm_kv = nn.LayerNorm(d)
        self.attn = AgentAttention(cfg)
        self.norm2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, d * 2), nn.GELU(), nn.Linear(d * 2, d))
        if p == 1:
            self.recover = zero_init(conv1x1(d, ch))
        else:
            self.recover = zero_init(nn.ConvTranspose2d(d, ch, kernel_size=p, stride=p))

    def forward(self, f_q: torch.Tensor, f_kv: torch.Tensor) -> torch.Tensor:
        if f_q.shape[-2:] != f_kv.shape[-2:]:
            raise InvariantError(
                f"fusion inputs disagree spatially: {tuple(f_q.shape)} vs {tuple(f_kv.shape)}"
            )
        eq = self.embed_q(f_q)
        ekv = self.embed_kv(f_kv)
        _, _, h, w = eq.shape
        tq = to_tokens(eq)
        tkv = to_tokens(ekv)
        t1 = tq + self.attn(self.norm_q(tq), self.norm_kv(tkv), h, w)
        t2 = t1 + self.mlp(self.norm2(t1))
        return f_q + self.recover(to_grid(t2, h, w))
