"""Inference-time uses of a trained model.

Sequential application f, f², …; latent interpolation and arithmetic; and
projection of degraded inputs (noise, grayscale, sketch, masked noise) back onto
the learned manifold. Everything here runs the model in inference mode and is a
pure function of (params, inputs, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ign.engine import Grid, ParamSet, forward
from ign.model import ArchSpec

DEGRADATIONS = ("none", "noise", "grayscale", "sketch", "mask_noise")
SKETCH_EPS = 1e-10
GUTTER = 2


# ---------------------------------------------------------------------------
# sequential application, interpolation, arithmetic


@torch.no_grad()
def apply_n(params: ParamSet, arch: ArchSpec, x: Grid, n: int) -> list[Grid]:
    """[f(x), f(f(x)), …, fⁿ(x)], evaluated in inference mode."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out, h = [], x
    for _ in range(n):
        h = forward(params, arch, h, training=False)
        out.append(h)
    return out


@torch.no_grad()
def interpolate(params: ParamSet, arch: ArchSpec, z0: Grid, z1: Grid, steps: int) -> list[list[Grid]]:
    """Rows for t evenly spaced in [0, 1]; each row is [z_t, f(z_t), f²(z_t), f³(z_t)].

    ``z0`` and ``z1`` are single samples (no batch axis) or batches of one.
    """
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    if z0.shape != z1.shape:
        raise ValueError(f"z0 and z1 differ in shape: {tuple(z0.shape)} vs {tuple(z1.shape)}")
    if z0.dim() == len(arch.in_shape):
        z0, z1 = z0.unsqueeze(0), z1.unsqueeze(0)
    ts = torch.linspace(0.0, 1.0, steps, dtype=torch.float64)
    # one batched pass over all rows; rows are independent in inference mode
    zt = torch.cat([((1 - t) * z0.double() + t * z1.double()).to(z0.dtype) for t in ts.tolist()])
    seq = apply_n(params, arch, zt, 3)
    b = z0.shape[0]
    return [[g[i * b:(i + 1) * b] for g in [zt, *seq]] for i in range(steps)]


def combine_latents(z_pos: Grid, z_neg: Grid, z: Grid, reduce: str | None = None) -> Grid:
    """(z_pos − z_neg) + z. With ``reduce="mean"``, z_pos and z_neg are first
    averaged over their leading axis (mean-of-k variant)."""
    if reduce == "mean":
        z_pos = z_pos.mean(0, keepdim=True)
        z_neg = z_neg.mean(0, keepdim=True)
    elif reduce is not None:
        raise ValueError(f"unknown reduce {reduce!r}; expected None or 'mean'")
    if reduce is None and not (z_pos.shape == z_neg.shape == z.shape):
        raise ValueError(
            f"latents must share a shape, got {tuple(z_pos.shape)}, {tuple(z_neg.shape)}, {tuple(z.shape)}"
        )
    return (z_pos - z_neg) + z


@torch.no_grad()
def latent_arithmetic(
    params: ParamSet, arch: ArchSpec, z_pos: Grid, z_neg: Grid, z: Grid, reduce: str | None = None
) -> Grid:
    """f((z_pos − z_neg) + z) with a single forward pass."""
    return forward(params, arch, combine_latents(z_pos, z_neg, z, reduce), training=False)


# ---------------------------------------------------------------------------
# degradations


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "none"
    sigma: float = 0.15  # noise / mask_noise standard deviation
    kernel: int = 21  # sketch blur kernel size
    rect: tuple[int, int, int, int] | None = None  # mask_noise: top, left, height, width

    def __post_init__(self):
        if self.kind not in DEGRADATIONS:
            raise ValueError(f"unknown degradation {self.kind!r}; expected one of {DEGRADATIONS}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ValueError(f"blur kernel size must be odd and >= 3, got {self.kernel}")
        if self.kind == "mask_noise":
            if self.rect is None or len(self.rect) != 4:
                raise ValueError("mask_noise needs rect=(top, left, height, width)")
            top, left, h, w = self.rect
            if min(top, left) < 0 or h <= 0 or w <= 0:
                raise ValueError(f"invalid mask rectangle {self.rect}")

    def check_bounds(self, height: int, width: int) -> None:
        if self.kind == "mask_noise":
            top, left, h, w = self.rect
            if top + h > height or left + w > width:
                raise ValueError(f"mask rectangle {self.rect} exceeds image bounds {height}x{width}")

    @property
    def blur_sigma(self) -> float:
        return default_blur_sigma(self.kernel)

    def tag(self) -> str:
        if self.kind in ("noise", "mask_noise"):
            return f"{self.kind}{self.sigma:g}"
        if self.kind == "sketch":
            return f"sketch{self.kernel}"
        return self.kind


def default_blur_sigma(kernel: int) -> float:
    """Standard deviation conventionally derived from a Gaussian kernel size."""
    return 0.3 * ((kernel - 1) * 0.5 - 1) + 0.8


def gaussian_kernel1d(kernel: int, sigma: float, dtype=torch.float64) -> torch.Tensor:
    half = (kernel - 1) * 0.5
    t = torch.linspace(-half, half, kernel, dtype=torch.float64)
    k = torch.exp(-0.5 * (t / sigma) ** 2)
    return (k / k.sum()).to(dtype)


def gaussian_blur(x: Grid, kernel: int, sigma: float | None = None) -> Grid:
    """Separable Gaussian blur on (B, C, H, W) with reflect padding (edge not repeated)."""
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"blur kernel size must be odd and >= 3, got {kernel}")
    sigma = default_blur_sigma(kernel) if sigma is None else sigma
    c = x.shape[1]
    k = gaussian_kernel1d(kernel, sigma, x.dtype)
    p = kernel // 2
    h = F.pad(x, (p, p, p, p), mode="reflect")
    h = F.conv2d(h, k.view(1, 1, 1, -1).repeat(c, 1, 1, 1), groups=c)
    return F.conv2d(h, k.view(1, 1, -1, 1).repeat(c, 1, 1, 1), groups=c)


def grayscale(x: Grid) -> Grid:
    """Channel mean replicated to every channel. Float32 inputs are averaged in
    float64, where the mean of equal values is exact, so gray images pass through unchanged."""
    acc = torch.float64 if x.dtype in (torch.float16, torch.bfloat16, torch.float32) else x.dtype
    return x.to(acc).mean(dim=1, keepdim=True).to(x.dtype).expand_as(x).clone()


def sketch(x: Grid, kernel: int = 21) -> Grid:
    """(g(x+1) / (blur(g(x+1)) + eps)) − 1, computed in float64."""
    y = grayscale(x.to(torch.float64) + 1.0)
    return (y / (gaussian_blur(y, kernel) + SKETCH_EPS) - 1.0).to(x.dtype)


def degrade(x: Grid, spec: DegradationSpec, seed: int = 0) -> Grid:
    """Apply ``spec`` to a batch (B, C, H, W) of images in [-1, 1]. Model-free."""
    if x.dim() != 4:
        raise ValueError(f"expected (B, C, H, W) images, got shape {tuple(x.shape)}")
    spec.check_bounds(x.shape[-2], x.shape[-1])
    gen = torch.Generator().manual_seed(seed)
    if spec.kind == "none":
        return x.clone()
    if spec.kind == "noise":
        return x + spec.sigma * torch.randn(x.shape, generator=gen, dtype=x.dtype)
    if spec.kind == "grayscale":
        return grayscale(x)
    if spec.kind == "sketch":
        return sketch(x, spec.kernel)
    top, left, h, w = spec.rect
    out = x.clone()
    out[..., top:top + h, left:left + w] = spec.sigma * torch.randn(
        (x.shape[0], x.shape[1], h, w), generator=gen, dtype=x.dtype
    )
    return out


def composite(original: Grid, projected: Grid, rect: tuple[int, int, int, int]) -> Grid:
    """Paste the projected rectangle back into the original (masked-edit workflow)."""
    top, left, h, w = rect
    out = original.clone()
    out[..., top:top + h, left:left + w] = projected[..., top:top + h, left:left + w]
    return out


@torch.no_grad()
def project(params: ParamSet, arch: ArchSpec, degraded: Grid, n: int) -> list[Grid]:
    """Project a degraded input onto the learned manifold: apply_n on it."""
    return apply_n(params, arch, degraded, n)


# ---------------------------------------------------------------------------
# image sheets


def render_sheet(rows: list[list[Grid]]) -> np.ndarray:
    """Lay out a row-major grid of (C, H, W) images in [-1, 1] with white gutters.

    Returns an (H', W') or (H', W', 3) uint8 array. Non-finite pixels are an error.
    """
    if not rows or not rows[0]:
        raise ValueError("empty sheet")
    c, h, w = rows[0][0].shape[-3:]
    ncol = max(len(r) for r in rows)
    H = len(rows) * h + (len(rows) + 1) * GUTTER
    W = ncol * w + (ncol + 1) * GUTTER
    sheet = np.full((H, W, c), 255, dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            img = img.detach().reshape(c, h, w)
            if not torch.isfinite(img).all():
                raise ValueError(f"non-finite pixels in sheet cell ({i}, {j})")
            px = ((img.clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8).permute(1, 2, 0).numpy()
            y0 = GUTTER + i * (h + GUTTER)
            x0 = GUTTER + j * (w + GUTTER)
            sheet[y0:y0 + h, x0:x0 + w] = px
    return sheet[..., 0] if c == 1 else sheet


def sheet_name(op: str, seed: int, n: int, extra: str = "") -> str:
    return f"{op}{'_' + extra if extra else ''}_seed{seed}_n{n}.png"


def save_sheet(rows: list[list[Grid]], path: str | Path) -> Path:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(render_sheet(rows)).save(path, format="PNG")
    return path


def grid_rows(images: Grid, ncol: int) -> list[list[Grid]]:
    return [list(images[i:i + ncol]) for i in range(0, images.shape[0], ncol)]


def write_points(points: list[Grid], path: str | Path) -> Path:
    """Tab-separated table for vector-valued models: one row per sample, columns per application."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = "\t".join(f"f{k}_d{d}" for k in range(len(points)) for d in range(points[0].shape[1]))
    table = torch.cat(points, dim=1).detach().double().numpy()
    if not np.isfinite(table).all():
        raise ValueError("non-finite generated points")
    np.savetxt(path, table, delimiter="\t", header=header, comments="", fmt="%.8g")
    return path


def draw_source(arch: ArchSpec, count: int, seed: int, spectrum=None) -> Grid:
    """Source samples: frequency-matched when a spectrum is given, white Gaussian otherwise."""
    from ign.noise import sample_gaussian, sample_spectral

    if spectrum is not None:
        return sample_spectral(spectrum, count, seed=seed)
    return sample_gaussian((count, *arch.in_shape), seed=seed)


def write_generation_sheets(
    params: ParamSet,
    arch: ArchSpec,
    out_dir: str | Path,
    count: int = 16,
    n: int = 1,
    seed: int = 0,
    tag: str = "",
    spectrum=None,
) -> list[Path]:
    """One uncurated grid per application depth 1..n. Vector models get a TSV of points."""
    out_dir = Path(out_dir)
    z = draw_source(arch, count, seed, spectrum)
    seq = apply_n(params, arch, z, n)
    extra = f"_{tag}" if tag else ""
    if len(arch.in_shape) == 1:
        return [write_points([z, *seq], out_dir / f"generate{extra}_seed{seed}_n{n}.tsv")]
    ncol = max(1, int(np.ceil(np.sqrt(count))))
    return [
        save_sheet(grid_rows(img, ncol), out_dir / f"generate{extra}_seed{seed}_n{n}_f{k}.png")
        for k, img in enumerate(seq, start=1)
    ]


__all__ = [
    "DEGRADATIONS", "DegradationSpec", "apply_n", "interpolate", "combine_latents", "latent_arithmetic",
    "default_blur_sigma", "gaussian_kernel1d", "gaussian_blur", "grayscale", "sketch", "degrade",
    "composite", "project", "render_sheet", "save_sheet", "sheet_name", "grid_rows", "write_points",
    "draw_source", "write_generation_sheets",
]
