"""Two-stage training loop for the joint RGB/IR codec.

Stage 1 optimizes the visible (YUV) branch alone with the cross-modality
path bypassed.  Stage 2 restores the full joint objective and fine-tunes
everything, normally starting from a stage-1 checkpoint; training the
joint objective from scratch is also supported for comparison runs.

The loss is the rate-distortion Lagrangian

    L = R_ir + R_rgb + lambda * (D_ir + D_rgb)

with rates in bits per pixel of the full-resolution luma grid and
distortions as MSE on the 0..255 sample scale.  In stage 1 the IR terms
are identically zero.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .codec_net import LAMBDA_LADDER, NetConfig
from .dataio import ImagePair, load_manifest
from .errors import DataError, ModelError
from .model import JointCodec, pair_to_tensors

CSV_FIELDS = ["step", "L", "R_rgb", "R_ir", "D_rgb", "D_ir", "lr"]

CKPT_VERSION = 1


@dataclass
class TrainConfig:
    """Everything needed to reproduce a single training stage."""

    lambda_value: float
    stage: int
    steps: int
    out_dir: str
    preset: str = "toy"
    variant: str = "full"
    batch_size: int = 4
    crop: int = 256
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    grad_clip: float = 1.0
    quant_mode: str = "ste"
    seed: int = 0
    ckpt_every: int = 100

    def __post_init__(self):
        if not any(abs(self.lambda_value - l) < 1e-12 for l in LAMBDA_LADDER):
            raise DataError(
                f"lambda {self.lambda_value} is not on the ladder {LAMBDA_LADDER}"
            )
        if self.stage not in (1, 2):
            raise DataError(f"stage must be 1 or 2, got {self.stage}")
        if self.steps < 1:
            raise DataError("steps must be positive")
        if self.batch_size < 1:
            raise DataError("batch_size must be positive")
        if self.crop < 64 or self.crop % 64 != 0:
            raise DataError("crop must be a positive multiple of 64")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise DataError("learning rates must be positive")
        if self.quant_mode not in ("ste", "mixed"):
            raise DataError(f"unknown quant_mode {self.quant_mode!r}")
        if self.ckpt_every < 1:
            raise DataError("ckpt_every must be positive")

    def net_config(self) -> NetConfig:
        if self.preset == "toy":
            return NetConfig.toy()
        if self.preset == "full":
            return NetConfig()
        raise DataError(f"unknown preset {self.preset!r}")


@dataclass
class LossBreakdown:
    """One evaluated training objective, split into its published terms."""

    L: torch.Tensor
    R_rgb: torch.Tensor
    R_ir: torch.Tensor
    D_rgb: torch.Tensor
    D_ir: torch.Tensor

    def detached(self) -> dict:
        return {
            "L": float(self.L.detach()),
            "R_rgb": float(self.R_rgb.detach()),
            "R_ir": float(self.R_ir.detach()),
            "D_rgb": float(self.D_rgb.detach()),
            "D_ir": float(self.D_ir.detach()),
        }


def rd_loss(
    rates: Tuple[torch.Tensor, torch.Tensor],
    distortions: Tuple[torch.Tensor, torch.Tensor],
    lambda_value: float,
    stage: int,
) -> LossBreakdown:
    """Combine per-modality rates and distortions into the Lagrangian.

    ``rates`` is (R_rgb, R_ir) in bits per pixel and ``distortions`` is
    (D_rgb, D_ir) as MSE on the 0..255 scale.  Stage 1 drops the IR
    terms from the objective entirely (they are reported as zero);
    negative inputs are rejected outright.
    """
    r_rgb, r_ir = rates
    d_rgb, d_ir = distortions
    for name, t in (("R_rgb", r_rgb), ("R_ir", r_ir), ("D_rgb", d_rgb), ("D_ir", d_ir)):
        if float(t.detach()) < -1e-9:
            raise DataError(f"{name} is negative: {float(t.detach())}")
    if lambda_value <= 0:
        raise DataError("lambda must be positive")
    if stage not in (1, 2):
        raise DataError(f"stage must be 1 or 2, got {stage}")
    if stage == 1:
        r_ir = torch.zeros_like(r_rgb)
        d_ir = torch.zeros_like(d_rgb)
    total = r_ir + r_rgb + lambda_value * (d_ir + d_rgb)
    return LossBreakdown(L=total, R_rgb=r_rgb, R_ir=r_ir, D_rgb=d_rgb, D_ir=d_ir)


class PairDataset:
    """Preloaded training pairs with deterministic per-step batching.

    The whole corpus is converted to padded YUV/IR tensors up front
    (training sets here are small).  Batch composition is a pure function
    of the step index, and crop offsets are a pure function of
    (seed, step), so a run resumed from a checkpoint sees exactly the
    same data it would have seen uninterrupted.
    """

    def __init__(self, pairs: Sequence[ImagePair], crop: int, seed: int = 0):
        if not pairs:
            raise DataError("training set is empty")
        if crop % 64:
            raise DataError("crop must be a multiple of 64")
        self.crop = crop
        self.seed = seed
        self.items = []
        for pair in pairs:
            tensors, _ = pair_to_tensors(pair, 64)
            h, w = tensors[0].shape[-2:]
            if h < crop or w < crop:
                raise DataError(
                    f"pair {pair.scene_id!r} is {w}x{h} after padding, smaller than crop {crop}"
                )
            self.items.append(tensors)

    def __len__(self) -> int:
        return len(self.items)

    def batch(self, step: int, batch_size: int):
        """Assemble the batch for one step: (x_y, x_u, x_v, x_ir)."""
        rng = np.random.default_rng((self.seed, step))
        planes = [[], [], [], []]
        c = self.crop
        for k in range(batch_size):
            x_y, x_u, x_v, x_ir = self.items[(step * batch_size + k) % len(self.items)]
            h, w = x_y.shape[-2:]
            # offsets stay on the 64-sample padding grid so chroma halves exactly
            top = 64 * int(rng.integers(0, (h - c) // 64 + 1))
            left = 64 * int(rng.integers(0, (w - c) // 64 + 1))
            planes[0].append(x_y[..., top : top + c, left : left + c])
            planes[1].append(x_u[..., top // 2 : (top + c) // 2, left // 2 : (left + c) // 2])
            planes[2].append(x_v[..., top // 2 : (top + c) // 2, left // 2 : (left + c) // 2])
            planes[3].append(x_ir[..., top : top + c, left : left + c])
        return tuple(torch.cat(p, dim=0) for p in planes)


def load_training_pairs(root: str, split: str = "train") -> List[ImagePair]:
    """Load every pair listed in the split manifest under ``root``."""
    manifest = load_manifest(root, split)
    return [manifest.load(i) for i in range(len(manifest))]


def save_checkpoint(
    path: str,
    codec: JointCodec,
    cfg: TrainConfig,
    optimizer: Optional[torch.optim.Optimizer],
    step: int,
) -> None:
    """Atomically write a checkpoint (tmp file + rename)."""
    payload = {
        "version": CKPT_VERSION,
        "model_state": codec.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "step": step,
        "stage": cfg.stage,
        "variant": codec.variant,
        "train_config": dataclasses.asdict(cfg),
        "net_config": dataclasses.asdict(codec.cfg),
        "config_hash": codec.cfg.config_hash(),
        "torch_rng_state": torch.get_rng_state(),
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str, expect_hash: Optional[str] = None):
    """Load a checkpoint and rebuild the codec it describes.

    Returns ``(codec, payload)``.  If ``expect_hash`` is given, the
    stored architecture hash must match it exactly.
    """
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version in {path}")
    net_cfg = NetConfig(**payload["net_config"])
    if net_cfg.config_hash() != payload["config_hash"]:
        raise DataError("checkpoint architecture hash does not match its stored config")
    if expect_hash is not None and payload["config_hash"] != expect_hash:
        raise ModelError(
            f"checkpoint hash {payload['config_hash']} does not match expected {expect_hash}"
        )
    codec = JointCodec(net_cfg, variant=payload.get("variant", "full"))
    codec.load_state_dict(payload["model_state"])
    return codec, payload


def _linear_lr(cfg: TrainConfig, step: int) -> float:
    if cfg.steps == 1:
        return cfg.lr_end
    t = step / (cfg.steps - 1)
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * t


def _nan_dump(cfg: TrainConfig, codec: JointCodec, step: int, stats: dict) -> str:
    path = os.path.join(cfg.out_dir, f"nan_dump_stage{cfg.stage}_step{step}.pt")
    torch.save(
        {
            "model_state": codec.state_dict(),
            "step": step,
            "stats": stats,
            "train_config": dataclasses.asdict(cfg),
        },
        path,
    )
    return path


def stage_tag(cfg: TrainConfig) -> str:
    lam = f"{cfg.lambda_value:.4f}".rstrip("0").rstrip(".")
    return f"stage{cfg.stage}_lambda{lam}_{cfg.variant}"


def run_stage(
    cfg: TrainConfig,
    dataset: PairDataset,
    init_codec: Optional[JointCodec] = None,
    resume_from: Optional[str] = None,
    quiet: bool = False,
) -> str:
    """Run one training stage and return the final checkpoint path.

    ``init_codec`` seeds the weights (the stage-2 handoff);
    ``resume_from`` continues an interrupted run of the same stage,
    restoring model, optimizer, RNG state and step counter.
    """
    torch.manual_seed(cfg.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    tag = stage_tag(cfg)
    ckpt_path = os.path.join(cfg.out_dir, f"{tag}.pt")
    csv_path = os.path.join(cfg.out_dir, f"{tag}.csv")

    start_step = 0
    if resume_from is not None:
        codec, payload = load_checkpoint(resume_from)
        if payload["stage"] != cfg.stage:
            raise DataError("resume checkpoint is from a different stage")
        optimizer = torch.optim.Adam(codec.parameters(), lr=cfg.lr_start)
        if payload["optimizer_state"] is not None:
            optimizer.load_state_dict(payload["optimizer_state"])
        torch.set_rng_state(payload["torch_rng_state"])
        start_step = payload["step"]
        if os.path.exists(csv_path):
            # drop rows at or past the resume point so the log stays one row per step
            kept = [r for r in read_log(csv_path) if r["step"] < start_step]
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
                writer.writeheader()
                for row in kept:
                    writer.writerow(row)
    else:
        codec = init_codec if init_codec is not None else JointCodec(cfg.net_config(), cfg.variant)
        optimizer = torch.optim.Adam(codec.parameters(), lr=cfg.lr_start)
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            csv.DictWriter(fh, fieldnames=CSV_FIELDS).writeheader()

    codec.train()
    mode = "ste" if cfg.quant_mode == "ste" else "train"
    t0 = time.monotonic()

    for step in range(start_step, cfg.steps):
        lr = _linear_lr(cfg, step)
        for group in optimizer.param_groups:
            group["lr"] = lr
        x_y, x_u, x_v, x_ir = dataset.batch(step, cfg.batch_size)
        out = codec.forward(x_y, x_u, x_v, x_ir, mode=mode, stage=cfg.stage)
        loss = rd_loss(
            (out["bpp_rgb"], out["bpp_ir"]),
            (out["mse_yuv"] * 255.0**2, out["mse_ir"] * 255.0**2),
            cfg.lambda_value,
            cfg.stage,
        )
        stats = loss.detached()
        if not all(math.isfinite(v) for v in stats.values()):
            dump = _nan_dump(cfg, codec, step, stats)
            raise ModelError(
                f"non-finite loss at stage {cfg.stage} step {step}: {stats} (state dump: {dump})"
            )
        optimizer.zero_grad(set_to_none=True)
        loss.L.backward()
        torch.nn.utils.clip_grad_norm_(codec.parameters(), cfg.grad_clip)
        optimizer.step()

        with open(csv_path, "a", newline="", encoding="utf-8") as fh:
            csv.DictWriter(fh, fieldnames=CSV_FIELDS).writerow(
                {
                    "step": step,
                    "L": f"{stats['L']:.6f}",
                    "R_rgb": f"{stats['R_rgb']:.6f}",
                    "R_ir": f"{stats['R_ir']:.6f}",
                    "D_rgb": f"{stats['D_rgb']:.6f}",
                    "D_ir": f"{stats['D_ir']:.6f}",
                    "lr": f"{lr:.8f}",
                }
            )
        if not quiet and (step % 50 == 0 or step == cfg.steps - 1):
            dt = time.monotonic() - t0
            print(
                f"[stage {cfg.stage}] step {step + 1}/{cfg.steps} "
                f"L={stats['L']:.4f} R=({stats['R_rgb']:.4f},{stats['R_ir']:.4f}) "
                f"D=({stats['D_rgb']:.2f},{stats['D_ir']:.2f}) lr={lr:.2e} [{dt:.0f}s]",
                file=sys.stderr,
                flush=True,
            )
        if (step + 1) % cfg.ckpt_every == 0 and step + 1 < cfg.steps:
            codec.clear_table_cache()
            save_checkpoint(ckpt_path, codec, cfg, optimizer, step + 1)

    codec.clear_table_cache()
    save_checkpoint(ckpt_path, codec, cfg, optimizer, cfg.steps)
    return ckpt_path


def run_stage1(cfg: TrainConfig, dataset: PairDataset, **kw) -> str:
    if cfg.stage != 1:
        raise DataError("run_stage1 requires a stage-1 config")
    return run_stage(cfg, dataset, **kw)


def run_stage2(
    cfg: TrainConfig,
    dataset: PairDataset,
    stage1_ckpt: Optional[str] = None,
    from_scratch: bool = False,
    **kw,
) -> str:
    """Stage-2 training, seeded from a stage-1 checkpoint by default.

    With ``from_scratch=True`` the joint objective trains from random
    initialization instead, as an ablation of the two-stage schedule.
    """
    if cfg.stage != 2:
        raise DataError("run_stage2 requires a stage-2 config")
    init = None
    if not from_scratch and kw.get("resume_from") is None:
        if stage1_ckpt is None:
            raise DataError("stage 2 needs a stage-1 checkpoint unless from_scratch is set")
        expect = cfg.net_config().config_hash()
        init, payload = load_checkpoint(stage1_ckpt, expect_hash=expect)
        if payload.get("variant", "full") != cfg.variant:
            raise DataError("stage-1 checkpoint was trained with a different variant")
        if abs(payload["train_config"]["lambda_value"] - cfg.lambda_value) > 1e-12:
            raise DataError("stage-1 checkpoint was trained at a different lambda")
    return run_stage(cfg, dataset, init_codec=init, **kw)


def read_log(csv_path: str) -> List[dict]:
    """Parse a training CSV back into numbers."""
    rows = []
    with open(csv_path, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: (int(v) if k == "step" else float(v)) for k, v in row.items()})
    return rows


def moving_average(values: Sequence[float], window: int) -> List[float]:
    """Trailing moving average; entry i averages values[i .. i+window-1] of the input."""
    if window < 1:
        raise DataError("window must be positive")
    if len(values) < window:
        return []
    csum = np.cumsum(np.asarray(values, dtype=np.float64))
    out = [float(csum[window - 1]) / window]
    for i in range(window, len(values)):
        out.append(float(csum[i] - csum[i - window]) / window)
    return out


def strictly_decreasing_tail(values: Sequence[float], tail_frac: float = 0.8) -> bool:
    """True if the trailing ``tail_frac`` of the sequence strictly decreases."""
    n = len(values)
    if n < 2:
        return True
    start = int(math.floor(n * (1.0 - tail_frac)))
    tail = list(values[start:])
    return all(b < a for a, b in zip(tail, tail[1:]))
