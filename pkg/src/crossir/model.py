"""End-to-end joint codec: transforms + entropy model + real bitstream.

JointCodec owns the analysis/synthesis transforms, the cross-modality
embedding, and the entropy model. Its forward() serves training; compress()
and decompress() run the deterministic inference path against the range
coder and must stay exactly synchronized (the decoder recomputes every
context from already-decoded data).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import kernel
from .ccem import CCEM, EntropyParams, gaussian_likelihood, merge_slices, split_slices
from .codec_net import AnalysisTransform, CrossModalEmbed, NetConfig, SynthesisTransform
from .coder import (
    CdfTable,
    CdfTableSet,
    ContainerHeader,
    build_scale_table,
    gaussian_cdf_tables,
    index_scale,
    pack_container,
    pmf_to_quantized_cdf,
    stream_cost_bits,
    unpack_container,
)
from .dataio import ImagePair, YUVImage, crop_to, pad_to_multiple, rgb_to_yuv420, yuv420_to_rgb
from .errors import DataError, DecodeError

STREAM_NAMES = ["z_ir", "z_rgb"] + [f"ir_slice_{i}" for i in range(5)] + [
    f"rgb_slice_{i}" for i in range(5)
]
Z_SUPPORT = 60


@dataclass
class CompressResult:
    container: bytes
    header: ContainerHeader
    streams: list
    estimated_bits: list  # per stream, table self-information of the coded symbols
    symbol_digests: list  # sha256 per stream's symbol array
    recon_rgb: np.ndarray
    recon_ir: np.ndarray
    bpp: float = 0.0
    extras: dict = field(default_factory=dict)


@dataclass
class DecompressResult:
    rgb: np.ndarray
    ir: np.ndarray
    symbol_digests: list
    header: ContainerHeader


def pair_to_tensors(pair: ImagePair, multiple: int):
    """Pad a pair, convert to YUV420, and return normalized (1,1,H,W) tensors."""
    padded, dims = pad_to_multiple(pair, multiple)
    yuv = rgb_to_yuv420(padded.rgb)
    to_t = lambda plane: torch.from_numpy(plane.astype(np.float32) / 255.0)[None, None]
    x_y = to_t(yuv.y_plane)
    x_u = to_t(yuv.u_plane)
    x_v = to_t(yuv.v_plane)
    x_ir = to_t(padded.ir.astype(np.float64))
    return (x_y, x_u, x_v, x_ir), dims


def tensors_to_images(x_y, x_u, x_v, x_ir, dims):
    """Clamp reconstructed planes, invert the color transform, crop to dims."""
    h, w = dims
    planes = [p[0, 0].detach().cpu().numpy().astype(np.float64) * 255.0 for p in (x_y, x_u, x_v)]
    yuv = YUVImage(
        y_plane=np.clip(planes[0], 0.0, 255.0),
        u_plane=np.clip(planes[1], 0.0, 255.5),
        v_plane=np.clip(planes[2], 0.0, 255.5),
    )
    rgb = yuv420_to_rgb(yuv)[:h, :w]
    ir = x_ir[0, 0].detach().cpu().numpy() * 255.0
    ir = np.clip(np.rint(ir), 0, 255).astype(np.uint8)[:h, :w]
    return rgb, ir


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr.astype(np.int32)).tobytes()).hexdigest()




class JointCodec(nn.Module):
    def __init__(self, cfg: NetConfig, variant: str = "full"):
        super().__init__()
        self.cfg = cfg
        self.variant = variant
        self.g_a = AnalysisTransform(cfg)
        self.g_s = SynthesisTransform(cfg)
        self.cross_embed = CrossModalEmbed(cfg)
        self.ccem = CCEM(cfg, variant)
        self.lambda_index = 0
        self._tables = None
        self._fingerprint = None

    # ---- transforms ------------------------------------------------------

    def analyze(self, x_y, x_u, x_v, x_ir, stage1: bool = False):
        y_yuv, y_ir = self.g_a(x_y, x_u, x_v, x_ir)
        if stage1:
            return y_yuv, None
        return self.cross_embed(y_yuv, y_ir)

    def synthesize(self, y_hat_yuv, y_hat_ir):
        return self.g_s(y_hat_yuv, y_hat_ir)

    # ---- training forward --------------------------------------------------

    def forward(self, x_y, x_u, x_v, x_ir, mode: str = "train", stage: int = 2) -> dict:
        """One rate-distortion pass; distortions are plain MSE on the [0,1] scale."""
        stage1 = stage == 1
        if stage1:
            # infrared branch excluded entirely; architecture unchanged for stage 2
            y_yuv, _ = self.analyze(x_y, x_u, x_v, x_ir, stage1=True)
            ent = self.ccem.entropy_forward(y_yuv, None, mode, stage1=True)
            rec_y, rec_u, rec_v, rec_ir = self.g_s(ent["y_hat_yuv"])
            mse_ir = y_yuv.new_zeros(())
        else:
            y_yuv, y_ir = self.analyze(x_y, x_u, x_v, x_ir)
            ent = self.ccem.entropy_forward(y_yuv, y_ir, mode)
            rec_y, rec_u, rec_v, rec_ir = self.g_s(ent["y_hat_yuv"], ent["y_hat_ir"])
            mse_ir = torch.mean((rec_ir - x_ir) ** 2)
        mse_y = torch.mean((rec_y - x_y) ** 2)
        mse_u = torch.mean((rec_u - x_u) ** 2)
        mse_v = torch.mean((rec_v - x_v) ** 2)
        # sample-count pooling: Y carries 4 of every 6 samples in 4:2:0
        mse_yuv = (4.0 * mse_y + mse_u + mse_v) / 6.0
        num_pixels = x_y.shape[0] * x_y.shape[-2] * x_y.shape[-1]
        return {
            "bpp_rgb": ent["bits_rgb"] / num_pixels,
            "bpp_ir": ent["bits_ir"] / num_pixels,
            "mse_yuv": mse_yuv,
            "mse_ir": mse_ir,
            "recon": (rec_y, rec_u, rec_v, rec_ir),
            "params_ir": ent["params_ir"],
            "params_rgb": ent["params_rgb"],
        }

    # ---- coding tables -----------------------------------------------------

    def clear_table_cache(self):
        self._tables = None
        self._fingerprint = None

    def model_fingerprint(self) -> int:
        """One byte tying a container to the weights and architecture that wrote it.

        Stored in the header's flags field; a decoder loaded with different
        weights refuses the container instead of desynchronizing silently.
        """
        if self._fingerprint is None:
            h = hashlib.sha256(self.cfg.config_hash().encode())
            h.update(self.variant.encode())
            for key, value in sorted(self.state_dict().items()):
                h.update(key.encode())
                h.update(value.detach().cpu().numpy().tobytes())
            self._fingerprint = h.digest()[0]
        return self._fingerprint

    def coding_tables(self):
        """(gaussian tables, scale table, z tables per modality); cached per weights."""
        if self._tables is None:
            scale_table = build_scale_table()
            gauss = gaussian_cdf_tables(scale_table)
            z_ir = self._z_tables(self.ccem.prior_ir)
            z_rgb = self._z_tables(self.ccem.prior_rgb)
            self._tables = (gauss, scale_table, z_ir, z_rgb)
        return self._tables

    @staticmethod
    def _z_tables(prior) -> CdfTableSet:
        pmf = prior.integer_pmf(Z_SUPPORT)  # (channels, 2*support+1)
        tables = []
        for row in pmf:
            escape = max(0.0, 1.0 - float(row.sum()))
            cdf = pmf_to_quantized_cdf(np.append(row, escape))
            tables.append(CdfTable(offset=-Z_SUPPORT, cdf=cdf))
        return CdfTableSet(tables)

    # ---- inference entropy coding -------------------------------------------

    def _code_z(self, modality: str, z_hat: torch.Tensor, z_tables: CdfTableSet):
        sym = z_hat[0].cpu().numpy().astype(np.int64)
        c, h, w = sym.shape
        flat = sym.reshape(-1)
        idx = np.repeat(np.arange(c, dtype=np.int64), h * w)
        means = np.zeros(flat.shape, dtype=np.float64)
        stream = kernel.encode_symbols(flat, idx, means, z_tables)
        est = stream_cost_bits(flat, idx, z_tables)
        return stream, est, flat

    def _decode_z(self, modality: str, stream: bytes, shape, z_tables: CdfTableSet):
        c, h, w = shape
        idx = np.repeat(np.arange(c, dtype=np.int64), h * w)
        means = np.zeros(c * h * w, dtype=np.float64)
        flat = kernel.decode_symbols(stream, idx, means, c * h * w, z_tables)
        return torch.from_numpy(flat.reshape(1, c, h, w).astype(np.float32)), flat

    def _slice_arrays(self, y_i: torch.Tensor, params: EntropyParams, scale_table):
        mu = params.mu[0].cpu().numpy().astype(np.float64).reshape(-1)
        sigma = params.sigma[0].cpu().numpy().astype(np.float64).reshape(-1)
        idx = index_scale(sigma, scale_table).astype(np.int64)
        sym = torch.round(y_i - params.mu)[0].cpu().numpy().astype(np.int64).reshape(-1)
        return sym, idx, mu

    @torch.no_grad()
    def compress(self, x_y, x_u, x_v, x_ir, dims) -> CompressResult:
        cfg = self.cfg
        if cfg.num_slices != len(STREAM_NAMES[2:]) // 2:
            raise DataError(
                f"container format carries 5 slices per modality, model has {cfg.num_slices}"
            )
        gauss, scale_table, z_ir_tables, z_rgb_tables = self.coding_tables()
        y_yuv, y_ir = self.analyze(x_y, x_u, x_v, x_ir)

        streams, est_bits, digests = {}, {}, {}

        z_ir = self.ccem.hyper_enc_ir(y_ir)
        z_ir_hat = torch.round(z_ir)
        streams["z_ir"], est_bits["z_ir"], sym = self._code_z("ir", z_ir_hat, z_ir_tables)
        digests["z_ir"] = _digest(sym)
        hyper_ir = self.ccem.hyper_dec_ir(z_ir_hat)

        z_rgb = self.ccem.hyper_enc_rgb(y_yuv)
        z_rgb_hat = torch.round(z_rgb)
        streams["z_rgb"], est_bits["z_rgb"], sym = self._code_z("rgb", z_rgb_hat, z_rgb_tables)
        digests["z_rgb"] = _digest(sym)
        hyper_rgb = self.ccem.hyper_dec_rgb(z_rgb_hat)

        refined_ir = self._compress_modality(
            "ir", y_ir, hyper_ir, None, gauss, scale_table, streams, est_bits, digests
        )
        f_ir_low = self.ccem.ir_lowfreq(refined_ir)
        refined_rgb = self._compress_modality(
            "rgb", y_yuv, hyper_rgb, f_ir_low, gauss, scale_table, streams, est_bits, digests
        )

        rec = self.g_s(merge_slices(refined_rgb), merge_slices(refined_ir))
        recon_rgb, recon_ir = tensors_to_images(*rec, dims)

        header = ContainerHeader(
            width=dims[1],
            height=dims[0],
            lambda_index=self.lambda_index,
            slice_count=cfg.num_slices,
            flags=self.model_fingerprint(),
        )
        stream_list = [streams[n] for n in STREAM_NAMES]
        container = pack_container(header, stream_list)
        bpp = len(container) * 8.0 / (dims[0] * dims[1])
        return CompressResult(
            container=container,
            header=header,
            streams=stream_list,
            estimated_bits=[est_bits[n] for n in STREAM_NAMES],
            symbol_digests=[digests[n] for n in STREAM_NAMES],
            recon_rgb=recon_rgb,
            recon_ir=recon_ir,
            bpp=bpp,
        )

    def _compress_modality(self, modality, y, hyper_ctx, f_ir_low, gauss, scale_table,
                           streams, est_bits, digests):
        refined = []
        for i, y_i in enumerate(split_slices(y, self.cfg.num_slices)):
            ctx, params = self.ccem._slice_context(modality, i, hyper_ctx, refined, f_ir_low)
            sym, idx, mu = self._slice_arrays(y_i, params, scale_table)
            name = f"{modality}_slice_{i}"
            streams[name] = kernel.encode_symbols(sym, idx, mu, gauss)
            est_bits[name] = stream_cost_bits(sym, idx, gauss)
            digests[name] = _digest(sym)
            y_hat = params.mu + torch.from_numpy(
                sym.reshape(params.mu[0].shape).astype(np.float32)
            )[None].to(params.mu.dtype)
            refined.append(self.ccem.lrp_refine(modality, i, y_hat, ctx, params.mu))
        return refined

    @torch.no_grad()
    def decompress(self, container: bytes) -> DecompressResult:
        cfg = self.cfg
        gauss, scale_table, z_ir_tables, z_rgb_tables = self.coding_tables()
        header, stream_list = unpack_container(container)
        if header.slice_count != cfg.num_slices:
            raise DecodeError(
                f"container has {header.slice_count} slices; model expects {cfg.num_slices}"
            )
        if header.flags != self.model_fingerprint():
            raise DecodeError(
                "container model fingerprint does not match the loaded checkpoint"
            )
        streams = dict(zip(STREAM_NAMES, stream_list))
        mult = cfg.pad_multiple
        ph = -(-header.height // mult) * mult
        pw = -(-header.width // mult) * mult
        lat_h, lat_w = ph // 16, pw // 16
        hyp_shape = (cfg.hyper_channels, lat_h // 4, lat_w // 4)

        digests = {}
        z_ir_hat, sym = self._decode_z("ir", streams["z_ir"], hyp_shape, z_ir_tables)
        digests["z_ir"] = _digest(sym)
        z_rgb_hat, sym = self._decode_z("rgb", streams["z_rgb"], hyp_shape, z_rgb_tables)
        digests["z_rgb"] = _digest(sym)
        hyper_ir = self.ccem.hyper_dec_ir(z_ir_hat)
        hyper_rgb = self.ccem.hyper_dec_rgb(z_rgb_hat)

        refined_ir = self._decompress_modality(
            "ir", hyper_ir, None, (lat_h, lat_w), gauss, scale_table, streams, digests
        )
        f_ir_low = self.ccem.ir_lowfreq(refined_ir)
        refined_rgb = self._decompress_modality(
            "rgb", hyper_rgb, f_ir_low, (lat_h, lat_w), gauss, scale_table, streams, digests
        )
        rec = self.g_s(merge_slices(refined_rgb), merge_slices(refined_ir))
        rgb, ir = tensors_to_images(*rec, (header.height, header.width))
        return DecompressResult(
            rgb=rgb,
            ir=ir,
            symbol_digests=[digests[n] for n in STREAM_NAMES],
            header=header,
        )

    def _decompress_modality(self, modality, hyper_ctx, f_ir_low, lat_hw, gauss, scale_table,
                             streams, digests):
        sc = self.cfg.slice_channels
        h, w = lat_hw
        refined = []
        for i in range(self.cfg.num_slices):
            ctx, params = self.ccem._slice_context(modality, i, hyper_ctx, refined, f_ir_low)
            mu = params.mu[0].cpu().numpy().astype(np.float64).reshape(-1)
            sigma = params.sigma[0].cpu().numpy().astype(np.float64).reshape(-1)
            idx = index_scale(sigma, scale_table).astype(np.int64)
            name = f"{modality}_slice_{i}"
            sym = kernel.decode_symbols(streams[name], idx, mu, sc * h * w, gauss)
            digests[name] = _digest(sym)
            y_hat = params.mu + torch.from_numpy(
                sym.reshape(sc, h, w).astype(np.float32)
            )[None].to(params.mu.dtype)
            refined.append(self.ccem.lrp_refine(modality, i, y_hat, ctx, params.mu))
        return refined


def encode_pair(codec: JointCodec, pair: ImagePair) -> CompressResult:
    """Convenience wrapper: pixels in, container bytes + encoder-side recon out."""
    codec.eval()
    tensors, dims = pair_to_tensors(pair, codec.cfg.pad_multiple)
    return codec.compress(*tensors, dims)


def decode_container(codec: JointCodec, container: bytes) -> DecompressResult:
    codec.eval()
    return codec.decompress(container)
