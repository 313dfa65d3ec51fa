"""Source-distribution samplers: white Gaussian and frequency-matched noise.

The frequency-matched sampler works on the half spectrum produced by ``rfft2``.
Two kinds of bins need care so that the inverse transform is real by construction:

* columns 0 and W/2 (the latter only for even W) are Hermitian along the height
  axis, X[k] = conj(X[H-k]); we draw rows 0..H/2 and mirror the rest;
* their self-conjugate rows (0 and H/2 for even H) are purely real.

For real training data those bins already have that structure, so the fitted
statistics of the mirrored bins coincide and refitting samples reproduces them.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ign.engine import DTYPE, Grid


@dataclass(frozen=True)
class SpectrumStats:
    mean_re: torch.Tensor  # (C, H, W//2 + 1)
    var_re: torch.Tensor
    mean_im: torch.Tensor
    var_im: torch.Tensor
    height: int
    width: int

    def __post_init__(self):
        expected = (self.mean_re.shape[0], self.height, self.width // 2 + 1)
        for name in ("mean_re", "var_re", "mean_im", "var_im"):
            arr = getattr(self, name)
            if tuple(arr.shape) != expected:
                raise ValueError(f"{name} has shape {tuple(arr.shape)}, expected {expected}")
        if (self.var_re < 0).any() or (self.var_im < 0).any():
            raise ValueError("variances must be nonnegative")

    @property
    def channels(self) -> int:
        return self.mean_re.shape[0]

    def entries(self) -> dict[str, torch.Tensor]:
        return {
            "spectrum/mean_re": self.mean_re,
            "spectrum/var_re": self.var_re,
            "spectrum/mean_im": self.mean_im,
            "spectrum/var_im": self.var_im,
        }

    @classmethod
    def from_entries(cls, entries: dict[str, torch.Tensor], height: int, width: int) -> "SpectrumStats":
        return cls(
            entries["spectrum/mean_re"], entries["spectrum/var_re"],
            entries["spectrum/mean_im"], entries["spectrum/var_im"], height, width,
        )


def fit_spectrum(data: Grid | list[Grid], chunk: int = 2048) -> SpectrumStats:
    """Per-channel, per-frequency mean and (population) variance of rfft2 coefficients.

    Accumulates in float64 over chunks so 10^4 images fit comfortably in memory.
    """
    if isinstance(data, (list, tuple)):
        if not data:
            raise ValueError("fit_spectrum needs at least 2 samples, got none")
        data = torch.cat([d if d.dim() == 4 else d.unsqueeze(0) for d in data])
    if data.dim() != 4:
        raise ValueError(f"expected (N, C, H, W) images, got shape {tuple(data.shape)}")
    n = data.shape[0]
    if n < 2:
        raise ValueError(f"fit_spectrum needs at least 2 samples, got {n}")
    _, c, h, w = data.shape
    s_re = torch.zeros(c, h, w // 2 + 1, dtype=torch.float64)
    s_im = torch.zeros_like(s_re)
    q_re = torch.zeros_like(s_re)
    q_im = torch.zeros_like(s_re)
    # shift by the first image to keep the sums of squares well conditioned
    ref = torch.fft.rfft2(data[0].to(torch.float64))
    for start in range(0, n, chunk):
        spec = torch.fft.rfft2(data[start:start + chunk].to(torch.float64)) - ref
        s_re += spec.real.sum(0)
        s_im += spec.imag.sum(0)
        q_re += spec.real.pow(2).sum(0)
        q_im += spec.imag.pow(2).sum(0)
    m_re, m_im = s_re / n, s_im / n
    var_re = (q_re / n - m_re.pow(2)).clamp_min(0)
    var_im = (q_im / n - m_im.pow(2)).clamp_min(0)
    return SpectrumStats(
        (m_re + ref.real).to(DTYPE), var_re.to(DTYPE), (m_im + ref.imag).to(DTYPE), var_im.to(DTYPE), h, w
    )


def _self_conjugate_columns(width: int) -> list[int]:
    return [0, width // 2] if width % 2 == 0 else [0]


def sample_spectral(
    stats: SpectrumStats, batch: int, seed: int | None = None, generator: torch.Generator | None = None
) -> Grid:
    """Draw ``batch`` real images whose spectrum has the fitted per-bin moments.

    Draw order: one (batch, C, H, W//2+1) normal tensor for the real parts, then one
    for the imaginary parts.
    """
    gen = generator if generator is not None else torch.Generator().manual_seed(0 if seed is None else seed)
    spec = sample_half_spectrum(stats, batch, gen)
    return torch.fft.irfft2(spec, s=(stats.height, stats.width)).to(DTYPE)


def sample_half_spectrum(stats: SpectrumStats, batch: int, gen: torch.Generator) -> torch.Tensor:
    """Complex (batch, C, H, W//2+1) half spectrum, Hermitian-consistent in the
    self-conjugate columns so that it is exactly the rfft2 of a real image."""
    c, h, w = stats.channels, stats.height, stats.width
    shape = (batch, c, h, w // 2 + 1)
    e_re = torch.randn(shape, generator=gen, dtype=DTYPE)
    e_im = torch.randn(shape, generator=gen, dtype=DTYPE)
    re = stats.mean_re + stats.var_re.sqrt() * e_re
    im = stats.mean_im + stats.var_im.sqrt() * e_im

    # enforce Hermitian symmetry in the self-conjugate columns
    rows = torch.arange(h)
    mirror = (-rows) % h
    upper = rows <= mirror  # rows 0..H/2 are drawn; the rest copy their conjugate partner
    for col in _self_conjugate_columns(w):
        re[..., ~upper, col] = re[..., mirror[~upper], col]
        im[..., ~upper, col] = -im[..., mirror[~upper], col]
        selfconj = rows == mirror
        im[..., selfconj, col] = 0.0
    return torch.complex(re, im)


def sample_gaussian(shape, seed: int | None = None, generator: torch.Generator | None = None) -> Grid:
    gen = generator if generator is not None else torch.Generator().manual_seed(0 if seed is None else seed)
    return torch.randn(tuple(shape), generator=gen, dtype=DTYPE)
