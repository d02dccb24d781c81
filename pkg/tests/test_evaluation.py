import math

import numpy as np
import pytest
import torch

from crossir.dataio import YUVImage
from crossir.errors import DataError
from crossir.evaluation import (
    BDReport,
    RDCurve,
    RDPoint,
    bd_rate,
    bd_rate_values,
    curve_from_json,
    curve_to_json,
    evaluate_checkpoint,
    evaluate_pair,
    ms_ssim_plane,
    ms_ssim_yuv,
    psnr_from_mse,
    psnr_plane,
    psnr_yuv,
    rate_at_quality,
)
from crossir.model import JointCodec
from crossir.synthetic import make_pair
from crossir.training import TrainConfig

RNG = np.random.default_rng(0)


def _point(bpp, q):
    return RDPoint(
        bpp=bpp, psnr_rgb_yuv=q, psnr_ir=q, psnr_joint=q, ms_ssim_rgb=0.9, ms_ssim_ir=0.9
    )


def _curve(label, rates, quals):
    return RDCurve(label=label, points=[_point(r, q) for r, q in zip(rates, quals)])


class TestPSNR:
    def test_from_mse(self):
        assert psnr_from_mse(0.0) == math.inf
        assert psnr_from_mse(1.0) == pytest.approx(20 * math.log10(255.0), abs=1e-9)
        with pytest.raises(DataError):
            psnr_from_mse(-0.5)

    def test_plane_single_sample_error(self):
        ref = np.zeros((64, 64))
        rec = ref.copy()
        rec[10, 20] = 1.0
        want = 10 * math.log10(255.0**2 * 64 * 64)
        assert psnr_plane(ref, rec) == pytest.approx(want, abs=1e-9)

    def test_plane_exact_match(self):
        x = RNG.uniform(0, 255, (32, 32))
        assert psnr_plane(x, x.copy()) == math.inf

    def test_plane_worst_case(self):
        ref = np.zeros((8, 8))
        rec = np.full((8, 8), 255.0)
        assert psnr_plane(ref, rec) == pytest.approx(0.0, abs=1e-12)

    def test_plane_shape_guard(self):
        with pytest.raises(DataError):
            psnr_plane(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_yuv_pools_sse_over_planes(self):
        y = np.zeros((4, 4))
        u = np.zeros((2, 2))
        v = np.zeros((2, 2))
        ref = YUVImage(y_plane=y, u_plane=u, v_plane=v)
        rec_y = y.copy()
        rec_y[0, 0] = 2.0  # SSE 4 over 16 + 4 + 4 samples
        rec = YUVImage(y_plane=rec_y, u_plane=u.copy(), v_plane=v.copy())
        want = 10 * math.log10(255.0**2 * 24 / 4)
        assert psnr_yuv(ref, rec) == pytest.approx(want, abs=1e-9)


class TestMSSSIM:
    def test_identity_is_one(self):
        x = RNG.uniform(0, 255, (160, 160))
        assert ms_ssim_plane(x, x.copy()) == pytest.approx(1.0, abs=1e-9)

    def test_monotone_in_noise(self):
        x = RNG.uniform(40, 215, (160, 160))
        scores = []
        for sigma in (1.0, 4.0, 16.0):
            noisy = x + RNG.normal(0, sigma, x.shape)
            scores.append(ms_ssim_plane(x, np.clip(noisy, 0, 255)))
        assert scores[0] > scores[1] > scores[2]
        assert all(0.0 <= s <= 1.0 for s in scores)

    def test_symmetry(self):
        a = RNG.uniform(0, 255, (96, 96))
        b = np.clip(a + RNG.normal(0, 8, a.shape), 0, 255)
        assert ms_ssim_plane(a, b) == pytest.approx(ms_ssim_plane(b, a), abs=1e-12)

    def test_too_small_rejected(self):
        x = np.zeros((19, 19))
        with pytest.raises(DataError):
            ms_ssim_plane(x, x)

    def test_two_scale_floor(self):
        # min dim 20 supports exactly two dyadic scales
        x = RNG.uniform(0, 255, (20, 160))
        assert 0.0 <= ms_ssim_plane(x, np.clip(x + RNG.normal(0, 4, x.shape), 0, 255)) <= 1.0

    def test_yuv_uses_luma(self):
        y = RNG.uniform(0, 255, (96, 96))
        u = RNG.uniform(0, 255, (48, 48))
        ref = YUVImage(y_plane=y, u_plane=u, v_plane=u.copy())
        rec = YUVImage(y_plane=y.copy(), u_plane=np.zeros((48, 48)), v_plane=np.zeros((48, 48)))
        # chroma is wildly different but the score only reads Y
        assert ms_ssim_yuv(ref, rec) == pytest.approx(1.0, abs=1e-9)


class TestRDCurve:
    def test_sorted_by_rate(self):
        c = _curve("x", [0.8, 0.2, 0.5], [38.0, 30.0, 34.0])
        assert [p.bpp for p in c.points] == [0.2, 0.5, 0.8]
        assert list(c.qualities()) == [30.0, 34.0, 38.0]

    def test_duplicate_rate_rejected(self):
        with pytest.raises(DataError, match="non-increasing bpp"):
            _curve("x", [0.2, 0.2, 0.5], [30.0, 31.0, 34.0])

    def test_non_monotone_quality_warns(self):
        with pytest.warns(RuntimeWarning, match="not monotone"):
            _curve("x", [0.2, 0.5, 0.8], [30.0, 29.0, 34.0])

    def test_json_round_trip(self):
        c = _curve("toy", [0.2, 0.5, 0.9, 1.4], [30.0, 33.0, 36.0, 38.0])
        doc = curve_to_json(c)
        assert doc["label"] == "toy"
        assert "bpp from container bytes" in doc["convention"]
        back = curve_from_json(doc)
        assert back.label == c.label
        assert [p.bpp for p in back.points] == [p.bpp for p in c.points]
        assert [p.ms_ssim_ir for p in back.points] == [p.ms_ssim_ir for p in c.points]


class TestBDRate:
    RATES = [0.25, 0.5, 1.0, 2.0]
    QUALS = [30.0, 33.0, 36.0, 39.0]

    def test_identical_curves_zero(self):
        pct, overlap = bd_rate_values(self.RATES, self.QUALS, self.RATES, self.QUALS)
        assert pct == pytest.approx(0.0, abs=1e-9)
        assert overlap == (30.0, 39.0)

    def test_doubled_rate_is_plus_hundred(self):
        doubled = [2 * r for r in self.RATES]
        for method in ("cubic", "akima"):
            pct, _ = bd_rate_values(self.RATES, self.QUALS, doubled, self.QUALS, method=method)
            assert pct == pytest.approx(100.0, abs=1e-6)

    def test_halved_rate_is_minus_fifty(self):
        halved = [r / 2 for r in self.RATES]
        pct, _ = bd_rate_values(self.RATES, self.QUALS, halved, self.QUALS)
        assert pct == pytest.approx(-50.0, abs=1e-6)

    def test_overlap_is_intersection(self):
        shifted = [q + 3.0 for q in self.QUALS]
        pct, overlap = bd_rate_values(self.RATES, self.QUALS, self.RATES, shifted)
        assert overlap == (33.0, 39.0)
        assert pct < 0  # same rates at higher quality = savings

    def test_needs_four_points(self):
        with pytest.raises(DataError, match="at least 4"):
            bd_rate_values([0.2, 0.5, 1.0], [30, 33, 36], self.RATES, self.QUALS)

    def test_no_overlap_rejected(self):
        far = [q + 100.0 for q in self.QUALS]
        with pytest.raises(DataError, match="overlap"):
            bd_rate_values(self.RATES, self.QUALS, self.RATES, far)

    def test_duplicate_quality_rejected(self):
        with pytest.raises(DataError, match="quality"):
            bd_rate_values(self.RATES, [30.0, 30.0, 36.0, 39.0], self.RATES, self.QUALS)

    def test_curve_level_report(self):
        anchor = _curve("anchor", self.RATES, self.QUALS)
        test = _curve("test", [2 * r for r in self.RATES], self.QUALS)
        report = bd_rate(anchor, test)
        assert isinstance(report, BDReport)
        assert report.anchor == "anchor" and report.test == "test"
        assert report.bd_rate_percent == pytest.approx(100.0, abs=1e-6)
        assert report.method == "cubic"


class TestRateAtQuality:
    def test_exact_at_knots(self):
        points = [_point(0.5, 32.0), _point(1.0, 35.0)]
        assert rate_at_quality(points, 32.0) == pytest.approx(0.5)
        assert rate_at_quality(points, 35.0) == pytest.approx(1.0)

    def test_log_linear_midpoint(self):
        points = [_point(0.5, 32.0), _point(2.0, 36.0)]
        # halfway in quality lands at the geometric mean of the rates
        assert rate_at_quality(points, 34.0) == pytest.approx(1.0)

    def test_unsorted_input_ok(self):
        points = [_point(2.0, 36.0), _point(0.5, 32.0), _point(1.0, 34.5)]
        assert rate_at_quality(points, 32.0) == pytest.approx(0.5)

    def test_other_metric(self):
        p1 = RDPoint(bpp=0.5, psnr_rgb_yuv=30.0, psnr_ir=40.0, psnr_joint=35.0,
                     ms_ssim_rgb=0.9, ms_ssim_ir=0.9)
        p2 = RDPoint(bpp=1.0, psnr_rgb_yuv=33.0, psnr_ir=43.0, psnr_joint=38.0,
                     ms_ssim_rgb=0.95, ms_ssim_ir=0.95)
        assert rate_at_quality([p1, p2], 43.0, metric="psnr_ir") == pytest.approx(1.0)

    def test_outside_span_rejected(self):
        points = [_point(0.5, 32.0), _point(1.0, 35.0)]
        with pytest.raises(DataError, match="outside"):
            rate_at_quality(points, 36.0)
        with pytest.raises(DataError, match="outside"):
            rate_at_quality(points, 31.0)

    def test_degenerate_inputs_rejected(self):
        with pytest.raises(DataError, match="at least 2"):
            rate_at_quality([_point(0.5, 32.0)], 32.0)
        with pytest.raises(DataError, match="distinct"):
            rate_at_quality([_point(0.5, 32.0), _point(1.0, 32.0)], 32.0)


@pytest.fixture(scope="module")
def toy_codec():
    torch.manual_seed(3)
    cfg = TrainConfig(lambda_value=0.0130, stage=2, steps=1, out_dir="unused", crop=64)
    return JointCodec(cfg.net_config(), "full")


class TestEvaluatePair:
    def test_real_bitstream_metrics(self, toy_codec):
        pair = make_pair(64, 64, seed=77)
        row = evaluate_pair(toy_codec, pair)
        assert row["bpp"] > 0
        for key in ("psnr_rgb_yuv", "psnr_ir", "psnr_joint"):
            assert math.isfinite(row[key]) and row[key] > 0
        assert row["psnr_joint"] == pytest.approx(
            0.5 * (row["psnr_rgb_yuv"] + row["psnr_ir"]), abs=1e-9
        )

    def test_odd_dimensions_cropped_for_metrics(self, toy_codec):
        pair = make_pair(65, 65, seed=78)
        row = evaluate_pair(toy_codec, pair)
        assert row["bpp"] > 0 and math.isfinite(row["psnr_joint"])

    def test_checkpoint_average(self, toy_codec):
        pairs = [make_pair(64, 64, seed=s) for s in (80, 81)]
        point = evaluate_checkpoint(toy_codec, pairs)
        rows = [evaluate_pair(toy_codec, p) for p in pairs]
        assert point.bpp == pytest.approx(np.mean([r["bpp"] for r in rows]), abs=1e-9)
        assert point.psnr_joint == pytest.approx(
            np.mean([r["psnr_joint"] for r in rows]), abs=1e-9
        )

    def test_empty_set_rejected(self, toy_codec):
        with pytest.raises(DataError, match="no pairs"):
            evaluate_checkpoint(toy_codec, [])
