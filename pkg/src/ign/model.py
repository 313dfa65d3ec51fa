"""Architectures: the DCGAN-style autoencoder and a small MLP for 2-D toy data.

Models are plain layer tables (:class:`ArchSpec`) evaluated functionally against a
:class:`~ign.engine.ParamSet`, so the same table can be run with live, frozen or
float64 copies of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ign.engine import DTYPE, ParamSet

LEAK = 0.2
INIT_STD = 0.02
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

SUPPORTED_RESOLUTIONS = (28, 32, 64)


@dataclass(frozen=True)
class LayerSpec:
    op: str  # conv | convT | linear
    in_ch: int
    out_ch: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    bn: bool = False
    act: str | None = None  # lrelu | relu | tanh | None

    def describe(self) -> str:
        if self.op == "linear":
            geom = "-"
        else:
            geom = f"k{self.kernel}s{self.stride}p{self.padding}"
        return f"{self.op}:{self.in_ch}->{self.out_ch}:{geom}:bn={int(self.bn)}:act={self.act or 'none'}"


@dataclass(frozen=True)
class ArchSpec:
    kind: str  # dcgan_ae | mlp | identity
    layers: tuple[LayerSpec, ...]
    in_shape: tuple[int, ...]  # per-sample shape, e.g. (1, 28, 28) or (2,)
    pad: int = 0  # symmetric zero padding applied before, cropped after
    encoder_depth: int = 0

    @property
    def out_shape(self) -> tuple[int, ...]:
        return self.in_shape

    def to_string(self) -> str:
        """Canonical text form, stored in checkpoints for compatibility checks."""
        head = f"{self.kind};in={'x'.join(map(str, self.in_shape))};pad={self.pad};enc={self.encoder_depth}"
        return head + ";" + ";".join(layer.describe() for layer in self.layers)

    def layer_table(self) -> str:
        """Human-readable table, one layer per row."""
        rows = []
        for i, layer in enumerate(self.layers):
            part = "encoder" if i < self.encoder_depth else "decoder"
            if self.kind == "mlp":
                part = "mlp"
            name = {"conv": "Convolution", "convT": "Transposed Convolution", "linear": "Linear"}[layer.op]
            kern = f"{layer.kernel}x{layer.kernel}" if layer.op != "linear" else "-"
            stride = f"{layer.stride}x{layer.stride}" if layer.op != "linear" else "-"
            pad = str(layer.padding) if layer.op != "linear" else "-"
            act = {"lrelu": "Leaky ReLU", "relu": "ReLU", "tanh": "Tanh", None: "None"}[layer.act]
            rows.append(
                f"{part}\t{name}\t{kern}\t{stride}\t{pad}\t{layer.out_ch}\t{'yes' if layer.bn else 'no'}\t{act}"
            )
        return "\n".join(rows)


def build_dcgan_ae(channels: int = 3, resolution: int = 64, latent: int = 512, width: int = 64) -> ArchSpec:
    """Encoder: four 4x4/2 convs (width, 2w, 4w, 8w) and a bottleneck conv to ``latent``.
    Decoder mirrors it with transposed convs and a Tanh head.

    28-px inputs are zero-padded to 32 and cropped back. At 32 px the bottleneck
    kernel is 2x2 instead of 4x4 since the feature map is 2x2 at that point.
    """
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ValueError(f"unsupported resolution {resolution}; supported: {SUPPORTED_RESOLUTIONS}")
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    internal = 32 if resolution == 28 else resolution
    pad = (internal - resolution) // 2
    last = internal // 16  # spatial size after four stride-2 convs
    w = [width, width * 2, width * 4, width * 8]

    enc = [
        LayerSpec("conv", channels, w[0], 4, 2, 1, bn=False, act="lrelu"),
        LayerSpec("conv", w[0], w[1], 4, 2, 1, bn=True, act="lrelu"),
        LayerSpec("conv", w[1], w[2], 4, 2, 1, bn=True, act="lrelu"),
        LayerSpec("conv", w[2], w[3], 4, 2, 1, bn=True, act="lrelu"),
        LayerSpec("conv", w[3], latent, last, 1, 0, bn=False, act=None),
    ]
    dec = [
        LayerSpec("convT", latent, w[3], last, 1, 0, bn=True, act="relu"),
        LayerSpec("convT", w[3], w[2], 4, 2, 1, bn=True, act="relu"),
        LayerSpec("convT", w[2], w[1], 4, 2, 1, bn=True, act="relu"),
        LayerSpec("convT", w[1], w[0], 4, 2, 1, bn=True, act="relu"),
        LayerSpec("convT", w[0], channels, 4, 2, 1, bn=False, act="tanh"),
    ]
    return ArchSpec("dcgan_ae", tuple(enc + dec), (channels, resolution, resolution), pad=pad, encoder_depth=5)


def build_mlp(dim: int = 2, hidden: int = 64, depth: int = 4) -> ArchSpec:
    """dim -> hidden -> ... -> dim with ``depth`` linear layers, LeakyReLU(0.2) between, linear output."""
    if dim < 1 or depth < 2:
        raise ValueError("need dim >= 1 and depth >= 2")
    widths = [dim] + [hidden] * (depth - 1) + [dim]
    layers = tuple(
        LayerSpec("linear", widths[i], widths[i + 1], act="lrelu" if i < depth - 1 else None)
        for i in range(depth)
    )
    return ArchSpec("mlp", layers, (dim,))


def build_identity(shape: tuple[int, ...]) -> ArchSpec:
    return ArchSpec("identity", (), tuple(shape))


def _weight_shape(layer: LayerSpec) -> tuple[int, ...]:
    if layer.op == "linear":
        return (layer.out_ch, layer.in_ch)
    if layer.op == "conv":
        return (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
    return (layer.in_ch, layer.out_ch, layer.kernel, layer.kernel)


def init_params(
    arch: ArchSpec, seed: int = 0, std: float | str = INIT_STD, generator: torch.Generator | None = None
) -> ParamSet:
    """Weights ~ N(0, std^2), biases 0; batch-norm scale ~ N(1, std^2), shift 0.

    ``std="fan_in"`` uses 1/sqrt(fan_in) per layer instead, which keeps a deep MLP
    without normalisation from starting out as a constant map.
    Entries are drawn in layer order from a generator seeded with ``seed`` (or the
    one passed in).
    """
    gen = generator if generator is not None else torch.Generator().manual_seed(seed)
    entries: dict[str, torch.Tensor] = {}
    buffers = set()
    for i, layer in enumerate(arch.layers):
        shape = _weight_shape(layer)
        if std == "fan_in":
            fan_in = layer.in_ch * layer.kernel * layer.kernel
            w_std = fan_in ** -0.5
        else:
            w_std = float(std)
        w = torch.empty(shape, dtype=DTYPE).normal_(0.0, w_std, generator=gen)
        entries[f"{i}.weight"] = w
        entries[f"{i}.bias"] = torch.zeros(layer.out_ch, dtype=DTYPE)
        if layer.bn:
            g = torch.empty(layer.out_ch, dtype=DTYPE).normal_(1.0, w_std if std != "fan_in" else INIT_STD, generator=gen)
            entries[f"{i}.bn.weight"] = g
            entries[f"{i}.bn.bias"] = torch.zeros(layer.out_ch, dtype=DTYPE)
            entries[f"{i}.bn.running_mean"] = torch.zeros(layer.out_ch, dtype=DTYPE)
            entries[f"{i}.bn.running_var"] = torch.ones(layer.out_ch, dtype=DTYPE)
            buffers |= {f"{i}.bn.running_mean", f"{i}.bn.running_var"}
    return ParamSet(entries, buffers)


def _act(h: torch.Tensor, act: str | None) -> torch.Tensor:
    if act == "lrelu":
        return F.leaky_relu(h, LEAK)
    if act == "relu":
        return F.relu(h)
    if act == "tanh":
        return torch.tanh(h)
    return h


def apply_arch(
    params: ParamSet, arch: ArchSpec, x: torch.Tensor, training: bool = False, update_stats: bool = True
) -> torch.Tensor:
    """Functional evaluation of ``arch`` with ``params``.

    ``training`` selects batch statistics for batch-norm; ``update_stats`` controls
    whether running statistics are updated in that mode.
    """
    if tuple(x.shape[1:]) != arch.in_shape:
        raise ValueError(f"input shape {tuple(x.shape)} does not match arch input (B, {', '.join(map(str, arch.in_shape))})")
    if arch.kind == "identity":
        return x
    h = F.pad(x, (arch.pad,) * 4) if arch.pad else x
    for i, layer in enumerate(arch.layers):
        w, b = params[f"{i}.weight"], params[f"{i}.bias"]
        if h.shape[1] != layer.in_ch:
            raise ValueError(f"layer {i} ({layer.describe()}) expects {layer.in_ch} channels, got {h.shape[1]}")
        if layer.op == "conv" and h.shape[-1] + 2 * layer.padding < layer.kernel:
            raise ValueError(f"layer {i} ({layer.describe()}): spatial size {h.shape[-1]} too small")
        try:
            if layer.op == "linear":
                h = F.linear(h, w, b)
            elif layer.op == "conv":
                h = F.conv2d(h, w, b, stride=layer.stride, padding=layer.padding)
            else:
                h = F.conv_transpose2d(h, w, b, stride=layer.stride, padding=layer.padding)
        except RuntimeError as e:
            raise ValueError(f"layer {i} ({layer.describe()}): {e}") from e
        if layer.bn:
            rm, rv = params[f"{i}.bn.running_mean"], params[f"{i}.bn.running_var"]
            if training and not update_stats:
                rm = rv = None
            h = F.batch_norm(
                h, rm, rv, params[f"{i}.bn.weight"], params[f"{i}.bn.bias"],
                training=training, momentum=BN_MOMENTUM, eps=BN_EPS,
            )
        h = _act(h, layer.act)
    if arch.pad:
        p = arch.pad
        h = h[..., p:-p, p:-p]
    return h
