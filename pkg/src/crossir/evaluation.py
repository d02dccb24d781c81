"""Quality metrics, BD-rate, RD sweeps and ablation reports.

All rates reported here come from real container bytes, never from the
model's estimated bits.  PSNR for the visible modality is computed in
the YUV420 domain with natural sample pooling (Y carries four of every
six samples); the joint quality of a pair is the arithmetic mean of the
two modality PSNRs.  MS-SSIM for the visible modality is computed on
the Y plane only, since chroma at half resolution has no standard
multi-scale treatment; reports state this convention.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .dataio import ImagePair, YUVImage, rgb_to_yuv420
from .errors import DataError, ModelError

PSNR_EXACT = math.inf

# standard five-scale exponent weights
_MSSSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_SIGMA = 1.5
_SSIM_WIN = 11
# smallest plane side that still supports one more dyadic scale
_MIN_SCALE_DIM = 10


# ---------------------------------------------------------------------------
# PSNR


def psnr_from_mse(mse: float, peak: float = 255.0) -> float:
    if mse < 0:
        raise DataError(f"MSE cannot be negative: {mse}")
    if mse == 0:
        return PSNR_EXACT
    return 10.0 * math.log10(peak * peak / mse)


def psnr_plane(ref: np.ndarray, rec: np.ndarray) -> float:
    """PSNR between two single-channel planes on the 8-bit scale."""
    ref = np.asarray(ref, dtype=np.float64)
    rec = np.asarray(rec, dtype=np.float64)
    if ref.shape != rec.shape:
        raise DataError(f"plane shape mismatch: {ref.shape} vs {rec.shape}")
    return psnr_from_mse(float(np.mean((ref - rec) ** 2)))


def psnr_yuv(ref: YUVImage, rec: YUVImage) -> float:
    """PSNR with MSE pooled over all samples of all three planes."""
    if ref.y_plane.shape != rec.y_plane.shape:
        raise DataError(
            f"luma shape mismatch: {ref.y_plane.shape} vs {rec.y_plane.shape}"
        )
    sse = 0.0
    count = 0
    for a, b in (
        (ref.y_plane, rec.y_plane),
        (ref.u_plane, rec.u_plane),
        (ref.v_plane, rec.v_plane),
    ):
        d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
        sse += float((d * d).sum())
        count += d.size
    return psnr_from_mse(sse / count)


# ---------------------------------------------------------------------------
# MS-SSIM


def _gaussian_window(win: int, sigma: float) -> np.ndarray:
    half = (win - 1) / 2.0
    x = np.arange(win, dtype=np.float64) - half
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()

def _filter_valid(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable correlation, cropped to the fully-supported region."""
    r = len(kernel) // 2
    out = correlate1d(plane, kernel, axis=0, mode="nearest")
    out = correlate1d(out, kernel, axis=1, mode="nearest")
    return out[r : plane.shape[0] - r, r : plane.shape[1] - r]


def _ssim_cs(a: np.ndarray, b: np.ndarray, win: int) -> Tuple[float, float]:
    """Mean SSIM and mean contrast-structure term over the valid region."""
    kernel = _gaussian_window(win, _SSIM_SIGMA)
    c1 = (_SSIM_K1 * 255.0) ** 2
    c2 = (_SSIM_K2 * 255.0) ** 2
    mu_a = _filter_valid(a, kernel)
    mu_b = _filter_valid(b, kernel)
    sigma_aa = _filter_valid(a * a, kernel) - mu_a * mu_a
    sigma_bb = _filter_valid(b * b, kernel) - mu_b * mu_b
    sigma_ab = _filter_valid(a * b, kernel) - mu_a * mu_b
    cs_map = (2.0 * sigma_ab + c2) / (sigma_aa + sigma_bb + c2)
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    return float(np.mean(lum * cs_map)), float(np.mean(cs_map))


def _downsample2(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    plane = plane[: h - h % 2, : w - w % 2]
    return 0.25 * (plane[0::2, 0::2] + plane[1::2, 0::2] + plane[0::2, 1::2] + plane[1::2, 1::2])


def ms_ssim_plane(ref: np.ndarray, rec: np.ndarray, max_scales: int = 5) -> float:
    """Multi-scale SSIM on one plane, 8-bit scale.

    Uses the standard five-scale exponent weights; when the plane is too
    small for five dyadic scales the scale count drops and the remaining
    weights are renormalized.  Fewer than two feasible scales is an
    error.  The Gaussian window shrinks to an odd size that fits at the
    coarsest scale.
    """
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(rec, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"plane shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise DataError("ms_ssim operates on single planes")
    min_dim = min(a.shape)
    scales = 0
    while scales < max_scales and (min_dim >> scales) >= _MIN_SCALE_DIM:
        scales += 1
    if scales < 2:
        raise DataError(
            f"image too small for multi-scale SSIM: min dim {min_dim} supports {scales} scale(s)"
        )
    weights = _MSSSIM_WEIGHTS[:scales] / _MSSSIM_WEIGHTS[:scales].sum()

    score = 1.0
    for level in range(scales):
        win = min(_SSIM_WIN, min(a.shape))
        if win % 2 == 0:
            win -= 1
        ssim_mean, cs_mean = _ssim_cs(a, b, win)
        if level < scales - 1:
            # negative similarity clipped before the fractional exponent
            score *= max(cs_mean, 0.0) ** weights[level]
            a = _downsample2(a)
            b = _downsample2(b)
        else:
            score *= max(ssim_mean, 0.0) ** weights[level]
    return float(score)


def ms_ssim_yuv(ref: YUVImage, rec: YUVImage) -> float:
    """MS-SSIM of the visible modality, computed on the Y plane."""
    return ms_ssim_plane(ref.y_plane, rec.y_plane)


# ---------------------------------------------------------------------------
# RD containers


@dataclass
class RDPoint:
    """Averaged rate/quality of one checkpoint over one test set."""

    bpp: float
    psnr_rgb_yuv: float
    psnr_ir: float
    psnr_joint: float
    ms_ssim_rgb: float
    ms_ssim_ir: float

    def __post_init__(self):
        if self.bpp <= 0:
            raise DataError(f"bpp must be positive, got {self.bpp}")


@dataclass
class RDCurve:
    label: str
    points: List[RDPoint] = field(default_factory=list)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bpp)
        bpps = [p.bpp for p in self.points]
        if any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise DataError(f"curve {self.label!r} has non-increasing bpp: {bpps}")
        quals = [p.psnr_joint for p in self.points]
        if any(q2 < q1 for q1, q2 in zip(quals, quals[1:])):
            warnings.warn(
                f"curve {self.label!r}: quality not monotone in rate: {quals}",
                RuntimeWarning,
            )

    def rates(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points], dtype=np.float64)

    def qualities(self, metric: str = "psnr_joint") -> np.ndarray:
        return np.array([getattr(p, metric) for p in self.points], dtype=np.float64)


@dataclass
class BDReport:
    anchor: str
    test: str
    bd_rate_percent: float
    overlap: Tuple[float, float]
    method: str = "cubic"


# ---------------------------------------------------------------------------
# BD-rate


def rate_at_quality(points: Sequence[RDPoint], quality: float, metric: str = "psnr_joint") -> float:
    """Interpolated bpp of an RD point set at one target quality.

    Log-rate is interpolated piecewise-linearly in quality, the standard
    matched-distortion comparison: two codecs are compared by the rate each
    needs to reach the same quality. The target must lie inside the point
    set's quality span; extrapolating rates is not meaningful.
    """
    if len(points) < 2:
        raise DataError(f"need at least 2 RD points to interpolate, got {len(points)}")
    quals = np.array([getattr(p, metric) for p in points], dtype=np.float64)
    rates = np.array([p.bpp for p in points], dtype=np.float64)
    order = np.argsort(quals)
    quals, rates = quals[order], rates[order]
    if np.any(np.diff(quals) <= 0):
        raise DataError(f"quality values must be distinct, got {quals}")
    if not (quals[0] <= quality <= quals[-1]):
        raise DataError(
            f"target quality {quality:.4f} outside curve span [{quals[0]:.4f}, {quals[-1]:.4f}]"
        )
    return float(np.exp(np.interp(quality, quals, np.log(rates))))


def _log_rate_fit(quality: np.ndarray, rate: np.ndarray, method: str):
    """Fit log-rate as a function of quality; returns a callable on arrays."""
    order = np.argsort(quality)
    q = quality[order]
    lr = np.log(rate[order])
    if np.any(np.diff(q) <= 0):
        raise DataError(f"quality values must be distinct and ordered, got {q}")
    if method == "cubic":
        coef = np.polyfit(q, lr, 3)
        return lambda x: np.polyval(coef, x)
    if method == "akima":
        from scipy.interpolate import Akima1DInterpolator

        interp = Akima1DInterpolator(q, lr)
        return lambda x: interp(x)
    raise DataError(f"unknown BD-rate method {method!r}")


def bd_rate_values(
    anchor_rate: Sequence[float],
    anchor_quality: Sequence[float],
    test_rate: Sequence[float],
    test_quality: Sequence[float],
    method: str = "cubic",
) -> Tuple[float, Tuple[float, float]]:
    """BD-rate in percent between two RD point sets, plus the overlap used.

    Positive means the test codec spends more rate than the anchor over
    the shared quality range; negative means it saves rate.
    """
    ar = np.asarray(anchor_rate, dtype=np.float64)
    aq = np.asarray(anchor_quality, dtype=np.float64)
    tr = np.asarray(test_rate, dtype=np.float64)
    tq = np.asarray(test_quality, dtype=np.float64)
    for name, arr in (("anchor", ar), ("test", tr)):
        if arr.size < 4:
            raise DataError(f"{name} curve needs at least 4 points, got {arr.size}")
        if np.any(arr <= 0):
            raise DataError(f"{name} curve has non-positive rates")
    if ar.size != aq.size or tr.size != tq.size:
        raise DataError("rate/quality arrays must have matching lengths")

    lo = max(aq.min(), tq.min())
    hi = min(aq.max(), tq.max())
    if hi <= lo:
        raise DataError(
            f"no quality overlap between curves: anchor [{aq.min():.4f}, {aq.max():.4f}] "
            f"vs test [{tq.min():.4f}, {tq.max():.4f}]"
        )
    fit_a = _log_rate_fit(aq, ar, method)
    fit_t = _log_rate_fit(tq, tr, method)
    grid = np.linspace(lo, hi, 2001)
    diff = fit_t(grid) - fit_a(grid)
    mean_log_ratio = float(np.trapezoid(diff, grid) / (hi - lo))
    return 100.0 * (math.exp(mean_log_ratio) - 1.0), (lo, hi)


def bd_rate(
    anchor: RDCurve,
    test: RDCurve,
    metric: str = "psnr_joint",
    method: str = "cubic",
) -> BDReport:
    pct, overlap = bd_rate_values(
        anchor.rates(), anchor.qualities(metric), test.rates(), test.qualities(metric), method
    )
    return BDReport(
        anchor=anchor.label, test=test.label, bd_rate_percent=pct, overlap=overlap, method=method
    )


# ---------------------------------------------------------------------------
# checkpoint evaluation


def _even_crop(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape[:2]
    return plane[: h - h % 2, : w - w % 2]


def evaluate_pair(codec, pair: ImagePair) -> dict:
    """Encode/decode one pair through the real bitstream and score it.

    Odd-dimension images are cropped by one row/column for the YUV-domain
    metrics (the codec itself is exact at any size; only the metric needs
    even dims for 4:2:0).
    """
    from .model import decode_container, encode_pair

    res = encode_pair(codec, pair)
    dec = decode_container(codec, res.container)
    bits = 8.0 * len(res.container)
    bpp = bits / (pair.height * pair.width)

    ref_yuv = rgb_to_yuv420(_even_crop(pair.rgb))
    rec_yuv = rgb_to_yuv420(_even_crop(dec.rgb))
    p_rgb = psnr_yuv(ref_yuv, rec_yuv)
    p_ir = psnr_plane(pair.ir, dec.ir)
    return {
        "bpp": bpp,
        "psnr_rgb_yuv": p_rgb,
        "psnr_ir": p_ir,
        "psnr_joint": (p_rgb + p_ir) / 2.0,
        "ms_ssim_rgb": ms_ssim_yuv(ref_yuv, rec_yuv),
        "ms_ssim_ir": ms_ssim_plane(pair.ir, dec.ir),
    }


def evaluate_checkpoint(codec, pairs: Sequence[ImagePair]) -> RDPoint:
    """Average RD metrics of one model over a pair set (real bytes)."""
    if not pairs:
        raise DataError("no pairs to evaluate")
    rows = [evaluate_pair(codec, p) for p in pairs]
    mean = lambda k: float(np.mean([r[k] for r in rows]))
    return RDPoint(
        bpp=mean("bpp"),
        psnr_rgb_yuv=mean("psnr_rgb_yuv"),
        psnr_ir=mean("psnr_ir"),
        psnr_joint=mean("psnr_joint"),
        ms_ssim_rgb=mean("ms_ssim_rgb"),
        ms_ssim_ir=mean("ms_ssim_ir"),
    )


def run_rd_sweep(
    checkpoint_paths: Sequence[str],
    pairs: Sequence[ImagePair],
    label: str = "crossir",
    out_csv: Optional[str] = None,
    out_json: Optional[str] = None,
) -> RDCurve:
    """Evaluate one checkpoint per rate point and assemble the curve.

    Checkpoints must share one architecture (config hash and variant);
    rates come from real container bytes.
    """
    from .training import load_checkpoint

    if not checkpoint_paths:
        raise DataError("no checkpoints given")
    points = []
    expect = None
    for path in checkpoint_paths:
        codec, payload = load_checkpoint(path)
        key = (payload["config_hash"], payload.get("variant", "full"))
        if expect is None:
            expect = key
        elif key != expect:
            raise ModelError(
                f"checkpoint {path} architecture {key} differs from {expect}; "
                "sweep requires a single preset/variant"
            )
        codec.eval()
        points.append(evaluate_checkpoint(codec, pairs))
    curve = RDCurve(label=label, points=points)
    if out_csv:
        names = [f.name for f in dataclasses.fields(RDPoint)]
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=names)
            writer.writeheader()
            for p in curve.points:
                writer.writerow({k: f"{v:.6f}" for k, v in asdict(p).items()})
    if out_json:
        with open(out_json, "w", encoding="utf-8") as fh:
            json.dump(curve_to_json(curve), fh, indent=2)
    return curve


def curve_to_json(curve: RDCurve) -> dict:
    return {
        "label": curve.label,
        "convention": "psnr pooled over YUV420 samples; joint = mean of modality PSNRs; "
        "ms_ssim_rgb computed on Y plane; bpp from container bytes",
        "points": [asdict(p) for p in curve.points],
    }


def curve_from_json(doc: dict) -> RDCurve:
    return RDCurve(label=doc["label"], points=[RDPoint(**p) for p in doc["points"]])


# ---------------------------------------------------------------------------
# ablation


def ablation_run(
    train_pairs: Sequence[ImagePair],
    lambdas: Sequence[float],
    steps_stage1: int,
    steps_stage2: int,
    out_dir: str,
    variants: Sequence[str] = ("full", "no_lceb", "no_lcfb", "hyper_only"),
    eval_pairs: Optional[Sequence[ImagePair]] = None,
    preset: str = "toy",
    crop: int = 128,
    seed: int = 0,
    quiet: bool = True,
) -> dict:
    """Train every variant with an identical budget and report RD results.

    Each variant runs the same two-stage schedule with the same seed and
    step counts.  With four or more lambda points per variant the report
    includes BD-rate against the hyper_only baseline; with fewer it
    reports per-variant bpp at (near-)matched distortion only.
    """
    import os

    from .training import PairDataset, TrainConfig, load_checkpoint, run_stage1, run_stage2

    eval_pairs = eval_pairs if eval_pairs is not None else train_pairs
    dataset = PairDataset(train_pairs, crop=crop, seed=seed)
    report = {"variants": {}, "bd_rate_vs_hyper_only": {}, "convention": (
        "matched training budget and seed across variants; bpp from real container bytes"
    )}
    curves = {}
    for variant in variants:
        rows = []
        for lam in lambdas:
            vdir = os.path.join(out_dir, variant)
            cfg1 = TrainConfig(
                lambda_value=lam, stage=1, steps=steps_stage1, out_dir=vdir,
                preset=preset, variant=variant, crop=crop, seed=seed,
            )
            ck1 = run_stage1(cfg1, dataset, quiet=quiet)
            cfg2 = TrainConfig(
                lambda_value=lam, stage=2, steps=steps_stage2, out_dir=vdir,
                preset=preset, variant=variant, crop=crop, seed=seed,
            )
            ck2 = run_stage2(cfg2, dataset, stage1_ckpt=ck1, quiet=quiet)
            codec, _ = load_checkpoint(ck2)
            codec.eval()
            point = evaluate_checkpoint(codec, eval_pairs)
            rows.append({"lambda": lam, **asdict(point)})
        report["variants"][variant] = rows
        if len(rows) >= 4:
            names = [f.name for f in dataclasses.fields(RDPoint)]
            curves[variant] = RDCurve(
                label=variant,
                points=[RDPoint(**{k: r[k] for k in names}) for r in rows],
            )
    baseline = curves.get("hyper_only")
    for variant in variants:
        if baseline is not None and variant in curves and variant != "hyper_only":
            rep = bd_rate(baseline, curves[variant])
            report["bd_rate_vs_hyper_only"][variant] = rep.bd_rate_percent
        else:
            report["bd_rate_vs_hyper_only"][variant] = None
    return report
