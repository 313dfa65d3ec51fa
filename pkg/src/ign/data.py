"""Dataset ingestion: IDX files, image directories and the built-in 2-D toy mixture."""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ign.engine import DTYPE

log = logging.getLogger(__name__)

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IDX_CODES = {np.dtype(v).str.lstrip("<>|"): k for k, v in IDX_TYPES.items()}

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp", ".ppm", ".pgm"}
KINDS = ("idx", "image_dir", "toy2d")


class IDXFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


def read_idx(path: str | Path) -> np.ndarray:
    """Parse an IDX file: two zero bytes, a type code, a dim count, big-endian u32 sizes, raw data."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: file too short for an IDX header", len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise IDXFormatError(f"{path}: bad IDX magic {raw[:4].hex()}, first two bytes must be zero", 0)
    code, ndim = raw[2], raw[3]
    if code not in IDX_TYPES:
        raise IDXFormatError(f"{path}: unknown IDX type code 0x{code:02x}", 2)
    if ndim == 0:
        raise IDXFormatError(f"{path}: IDX file declares zero dimensions", 3)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IDXFormatError(f"{path}: truncated dimension table", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = IDX_TYPES[code]
    expected = math.prod(dims) * dtype.itemsize
    if len(raw) - header_end != expected:
        raise IDXFormatError(
            f"{path}: payload has {len(raw) - header_end} bytes, dims {dims} need {expected}", header_end
        )
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path: str | Path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = IDX_CODES.get(array.dtype.str.lstrip("<>|"))
    if code is None:
        raise ValueError(f"dtype {array.dtype} has no IDX type code")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(IDX_TYPES[code]).tobytes())


def to_unit_range(pixels) -> torch.Tensor:
    """8-bit pixels to [-1, 1] via p / 127.5 - 1."""
    return torch.as_tensor(np.asarray(pixels, dtype=np.float32)) / 127.5 - 1.0


def to_uint8(images: torch.Tensor) -> np.ndarray:
    return ((images.detach().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8).cpu().numpy()


@dataclass
class Dataset:
    images: torch.Tensor  # (N, C, H, W) or (N, D), float32, nominally in [-1, 1]
    kind: str
    source: str

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def fingerprint(self) -> dict:
        h = hashlib.sha256(self.images.contiguous().numpy().tobytes()).hexdigest()
        return {"count": len(self), "sha256": h, "shape": list(self.sample_shape)}

    def split(self, holdout: int) -> tuple["Dataset", "Dataset"]:
        """Last ``holdout`` samples become the held-out set."""
        if not 0 <= holdout < len(self):
            raise ValueError(f"holdout {holdout} out of range for {len(self)} samples")
        n = len(self) - holdout
        return (
            Dataset(self.images[:n], self.kind, self.source),
            Dataset(self.images[n:], self.kind, self.source + f"#holdout{holdout}"),
        )


def load_idx_images(path: str | Path) -> torch.Tensor:
    arr = read_idx(path)
    if arr.dtype != np.uint8:
        raise ValueError(f"{path}: expected unsigned-byte pixels, got {arr.dtype}")
    if arr.ndim == 3:
        arr = arr[:, None]
    elif arr.ndim != 4:
        raise ValueError(f"{path}: expected N x H x W (or N x C x H x W) images, got dims {arr.shape}")
    return to_unit_range(arr).contiguous()


def load_image_dir(path: str | Path, resolution: int, channels: int) -> torch.Tensor:
    from PIL import Image, UnidentifiedImageError

    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    out = []
    for f in files:
        try:
            out.append(load_image(f, resolution, channels))
        except (UnidentifiedImageError, OSError) as e:
            log.warning("skipping undecodable image %s: %s", f, e)
    if not out:
        raise ValueError(f"{path}: no decodable images")
    return torch.stack(out)


def load_image(path: str | Path, resolution: int, channels: int) -> torch.Tensor:
    """Decode, center-crop to a square, resize, rescale to [-1, 1]. Returns (C, H, W)."""
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("L" if channels == 1 else "RGB")
        w, h = im.size
        s = min(w, h)
        left, top = (w - s) // 2, (h - s) // 2
        im = im.crop((left, top, left + s, top + s))
        if s != resolution:
            im = im.resize((resolution, resolution), Image.BICUBIC)
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return to_unit_range(arr)


def toy2d(n: int = 8192, seed: int = 0, modes: int = 8, radius: float = 1.0, std: float = 0.05) -> torch.Tensor:
    """Mixture of ``modes`` isotropic Gaussians evenly spaced on a circle."""
    gen = torch.Generator().manual_seed(seed)
    idx = torch.randint(0, modes, (n,), generator=gen)
    centers = toy2d_centers(modes, radius)
    return (centers[idx] + std * torch.randn(n, 2, generator=gen, dtype=DTYPE)).to(DTYPE)


def toy2d_centers(modes: int = 8, radius: float = 1.0) -> torch.Tensor:
    ang = torch.arange(modes, dtype=torch.float64) * (2 * math.pi / modes)
    return (radius * torch.stack([ang.cos(), ang.sin()], dim=1)).to(DTYPE)


def ingest_dataset(
    path: str | Path | None,
    kind: str,
    resolution: int | None = None,
    channels: int = 1,
    toy_size: int = 8192,
    seed: int = 0,
) -> Dataset:
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    if kind == "toy2d":
        return Dataset(toy2d(toy_size, seed), kind, f"toy2d:n={toy_size}:seed={seed}")
    if path is None or not Path(path).exists():
        raise FileNotFoundError(f"dataset path does not exist: {path}")
    if kind == "idx":
        return Dataset(load_idx_images(path), kind, str(path))
    if resolution is None:
        raise ValueError("image_dir datasets need a resolution")
    return Dataset(load_image_dir(path, resolution, channels), kind, str(path))
