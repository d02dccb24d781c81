"""Paired RGB-IR dataset ingestion, YUV420 conversion, cropping and padding.

Colour conversion uses the BT.601 full-range matrix. Chroma is produced by
2x2 box averaging and recovered by nearest-neighbour upsampling. YUV planes
are kept in floating point on the nominal 8-bit [0, 255] scale so that the
only lossy step in a round trip is chroma subsampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AlignmentError, DataError

# BT.601 full-range RGB -> YUV. Rows: Y, U, V.
_RGB2YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ],
    dtype=np.float64,
)
_YUV_OFFSET = np.array([0.0, 128.0, 128.0], dtype=np.float64)

# Inverse coefficients (exact inverse of the matrix above to ~1e-6).
_YUV2RGB = np.array(
    [
        [1.0, 0.0, 1.402],
        [1.0, -0.344136, -0.714136],
        [1.0, 1.772, 0.0],
    ],
    dtype=np.float64,
)


@dataclass
class ImagePair:
    """An aligned 8-bit RGB + IR capture of one scene."""

    rgb: np.ndarray  # (H, W, 3) uint8
    ir: np.ndarray  # (H, W) uint8
    scene_id: str = ""
    split: str = "test"

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb)
        self.ir = np.asarray(self.ir)
        if self.ir.ndim == 3 and self.ir.shape[2] == 1:
            self.ir = self.ir[:, :, 0]
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise DataError(f"rgb must be HxWx3, got shape {self.rgb.shape}")
        if self.ir.ndim != 2:
            raise DataError(f"ir must be HxW, got shape {self.ir.shape}")
        if self.rgb.shape[:2] != self.ir.shape[:2]:
            raise AlignmentError(
                f"modality dimension mismatch: rgb {self.rgb.shape[:2]} vs ir {self.ir.shape[:2]}"
            )
        if self.rgb.dtype != np.uint8 or self.ir.dtype != np.uint8:
            raise DataError("samples must be 8-bit unsigned integers")
        if self.split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {self.split!r}")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass
class YUVImage:
    """A YUV420 planar frame on the nominal 8-bit scale.

    Planes are floating point in [0, 255]; chroma is exactly half the luma
    resolution in each dimension.
    """

    y_plane: np.ndarray  # (H, W)
    u_plane: np.ndarray  # (H/2, W/2)
    v_plane: np.ndarray  # (H/2, W/2)
    bit_depth: int = 8

    def __post_init__(self):
        h, w = self.y_plane.shape
        if h % 2 or w % 2:
            raise DataError(f"luma dimensions must be even, got {h}x{w}")
        if self.u_plane.shape != (h // 2, w // 2) or self.v_plane.shape != (h // 2, w // 2):
            raise DataError(
                f"chroma planes must be {(h // 2, w // 2)}, got {self.u_plane.shape} / {self.v_plane.shape}"
            )

    @property
    def height(self) -> int:
        return self.y_plane.shape[0]

    @property
    def width(self) -> int:
        return self.y_plane.shape[1]


@dataclass
class DatasetManifest:
    """Relative (rgb, ir) path pairs for one split, rooted at `root`."""

    root: Path
    pairs: list = field(default_factory=list)  # list of (rgb_rel, ir_rel)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.pairs)

    def load(self, index: int) -> ImagePair:
        rgb_rel, ir_rel = self.pairs[index]
        pair = load_pair(self.root / rgb_rel, self.root / ir_rel)
        pair.scene_id = Path(rgb_rel).stem
        pair.split = self.split
        return pair


def load_pair(rgb_path, ir_path) -> ImagePair:
    """Load and validate one RGB/IR pair from disk.

    IR images stored as 3-channel replicas are collapsed to a single channel;
    the replica channels must agree within +/-1.
    """
    try:
        rgb = np.asarray(Image.open(rgb_path).convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read rgb image {rgb_path}: {exc}") from exc
    try:
        ir_img = Image.open(ir_path)
        ir = np.asarray(ir_img, dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read ir image {ir_path}: {exc}") from exc

    if ir.ndim == 3:
        if ir.shape[2] == 4:
            ir = ir[:, :, :3]
        if ir.shape[2] == 3:
            spread = ir.astype(np.int16)
            if (spread.max(axis=2) - spread.min(axis=2)).max() > 1:
                raise DataError(
                    f"ir image {ir_path} has 3 non-identical channels; expected grayscale replica"
                )
            ir = ir[:, :, 0]
        elif ir.shape[2] == 1:
            ir = ir[:, :, 0]
        else:
            raise DataError(f"ir image {ir_path} has unsupported channel count {ir.shape[2]}")

    if rgb.shape[:2] != ir.shape[:2]:
        raise AlignmentError(
            f"modality dimension mismatch: rgb {rgb.shape[:2]} vs ir {ir.shape[:2]}"
        )
    return ImagePair(rgb=rgb, ir=ir)


def rgb_to_yuv420(rgb: np.ndarray) -> YUVImage:
    """Convert an even-dimension HxWx3 RGB image to YUV420.

    Full-resolution U/V are box-averaged 2x2. Planes stay in double precision
    on the nominal 8-bit scale; fully saturated chroma peaks half a code above
    255 (e.g. pure red gives V=255.5), and rounding that away would break the
    exact round trip for constant-color images, so clamping happens only on
    the uint8 output side of the inverse.
    """
    rgb = np.asarray(rgb)
    h, w = rgb.shape[:2]
    if h % 2 or w % 2:
        raise DataError(f"dimensions must be even before conversion, got {h}x{w} (pad first)")
    px = rgb.astype(np.float64)
    yuv = px @ _RGB2YUV.T + _YUV_OFFSET
    y = yuv[:, :, 0]
    u_full = yuv[:, :, 1]
    v_full = yuv[:, :, 2]
    u = _box_downsample2(u_full)
    v = _box_downsample2(v_full)
    return YUVImage(y_plane=y, u_plane=u, v_plane=v)


def yuv420_to_rgb(yuv: YUVImage) -> np.ndarray:
    """Invert rgb_to_yuv420: nearest-neighbour chroma upsample, inverse matrix, uint8."""
    u_full = _nearest_upsample2(yuv.u_plane)
    v_full = _nearest_upsample2(yuv.v_plane)
    planes = np.stack([yuv.y_plane, u_full - 128.0, v_full - 128.0], axis=-1)
    rgb = planes @ _YUV2RGB.T
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _box_downsample2(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _nearest_upsample2(plane: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)


def pad_to_multiple(img, m: int):
    """Replicate-pad right/bottom so H and W are multiples of m.

    Returns (padded, (orig_h, orig_w)). For a YUVImage, m must be even
    (or 1) so the chroma planes stay exactly half resolution.
    """
    if m < 1:
        raise DataError(f"pad multiple must be >= 1, got {m}")
    if isinstance(img, ImagePair):
        h, w = img.height, img.width
        ph, pw = _ceil_to(h, m), _ceil_to(w, m)
        if (ph, pw) == (h, w):
            return img, (h, w)
        rgb = np.pad(img.rgb, ((0, ph - h), (0, pw - w), (0, 0)), mode="edge")
        ir = np.pad(img.ir, ((0, ph - h), (0, pw - w)), mode="edge")
        return ImagePair(rgb=rgb, ir=ir, scene_id=img.scene_id, split=img.split), (h, w)
    if isinstance(img, YUVImage):
        if m > 1 and m % 2:
            raise DataError(f"pad multiple for YUV420 must be even, got {m}")
        h, w = img.height, img.width
        ph, pw = _ceil_to(h, m), _ceil_to(w, m)
        if (ph, pw) == (h, w):
            return img, (h, w)
        y = np.pad(img.y_plane, ((0, ph - h), (0, pw - w)), mode="edge")
        u = np.pad(img.u_plane, ((0, (ph - h) // 2), (0, (pw - w) // 2)), mode="edge")
        v = np.pad(img.v_plane, ((0, (ph - h) // 2), (0, (pw - w) // 2)), mode="edge")
        return YUVImage(y_plane=y, u_plane=u, v_plane=v), (h, w)
    raise DataError(f"cannot pad object of type {type(img).__name__}")


def crop_to(img, dims):
    """Crop a padded image back to its original (h, w)."""
    h, w = dims
    if isinstance(img, ImagePair):
        return ImagePair(
            rgb=img.rgb[:h, :w], ir=img.ir[:h, :w], scene_id=img.scene_id, split=img.split
        )
    if isinstance(img, YUVImage):
        return YUVImage(
            y_plane=img.y_plane[:h, :w],
            u_plane=img.u_plane[: h // 2, : w // 2],
            v_plane=img.v_plane[: h // 2, : w // 2],
        )
    raise DataError(f"cannot crop object of type {type(img).__name__}")


def _ceil_to(n: int, m: int) -> int:
    return ((n + m - 1) // m) * m


def random_crop_pair(pair: ImagePair, size: int, seed: int) -> ImagePair:
    """Crop the same size x size window from both modalities, deterministically."""
    if size % 2:
        raise DataError(f"crop size must be even, got {size}")
    if size > pair.height or size > pair.width:
        raise DataError(
            f"crop size {size} exceeds image dimensions {pair.height}x{pair.width}"
        )
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, pair.height - size + 1))
    left = int(rng.integers(0, pair.width - size + 1))
    return ImagePair(
        rgb=pair.rgb[top : top + size, left : left + size],
        ir=pair.ir[top : top + size, left : left + size],
        scene_id=pair.scene_id,
        split=pair.split,
    )


def load_manifest(root, split: str) -> DatasetManifest:
    """Read <root>/<split>.json listing relative rgb/ir path pairs."""
    root = Path(root)
    path = root / f"{split}.json"
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    pairs = [(entry["rgb"], entry["ir"]) for entry in doc["pairs"]]
    return DatasetManifest(root=root, pairs=pairs, split=doc.get("split", split))


def save_manifest(manifest: DatasetManifest) -> Path:
    path = Path(manifest.root) / f"{manifest.split}.json"
    doc = {
        "split": manifest.split,
        "pairs": [{"rgb": str(r), "ir": str(i)} for r, i in manifest.pairs],
    }
    path.write_text(json.dumps(doc, indent=2))
    return path
