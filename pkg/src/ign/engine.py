"""Differentiation substrate: parameter sets, gradients, stop-gradient and frozen evaluation.

Autodiff is delegated to torch. This module pins down the handful of contracts the
rest of the package depends on:

* a :class:`ParamSet` is an ordered, named collection of arrays (trainable weights
  plus non-trainable buffers such as batch-norm running statistics);
* :func:`backward` returns a gradient for *every* entry, zero where the loss does
  not depend on it;
* :func:`detach` cuts the graph, :func:`frozen_eval` runs a model whose parameters
  are constants while still letting gradients flow to the input.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import torch

Grid = torch.Tensor
GradMap = dict[str, torch.Tensor]

DTYPE = torch.float32
ORACLE_DTYPE = torch.float64


class ParamSet:
    """Named parameter arrays of one model instance.

    ``buffers`` names entries that are state but not optimised (running statistics).
    ``version`` counts optimizer steps applied to this set.
    """

    def __init__(
        self,
        entries: Mapping[str, torch.Tensor],
        buffers: frozenset[str] | set[str] = frozenset(),
        version: int = 0,
    ):
        self._entries: dict[str, torch.Tensor] = dict(entries)
        unknown = set(buffers) - set(self._entries)
        if unknown:
            raise KeyError(f"buffer names not in entries: {sorted(unknown)}")
        self.buffers = frozenset(buffers)
        self.version = version

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._entries[name]

    def __setitem__(self, name: str, value: torch.Tensor) -> None:
        if name not in self._entries:
            raise KeyError(name)
        if value.shape != self._entries[name].shape:
            raise ValueError(f"{name}: shape {tuple(value.shape)} != {tuple(self._entries[name].shape)}")
        self._entries[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def keys(self):
        return self._entries.keys()

    def items(self):
        return self._entries.items()

    def values(self):
        return self._entries.values()

    def trainable(self) -> list[str]:
        return [k for k in self._entries if k not in self.buffers]

    def clone(self, requires_grad: bool = False, dtype: torch.dtype | None = None) -> "ParamSet":
        """Deep value copy. Trainable entries get ``requires_grad`` as requested."""
        out = {}
        for k, v in self._entries.items():
            c = v.detach().clone()
            if dtype is not None and c.is_floating_point():
                c = c.to(dtype)
            if requires_grad and k not in self.buffers:
                c.requires_grad_(True)
            out[k] = c
        return ParamSet(out, self.buffers, self.version)

    def detached(self) -> "ParamSet":
        """Same storage, no gradient tracking. Buffers stay shared so running stats update in place."""
        return ParamSet({k: v.detach() for k, v in self._entries.items()}, self.buffers, self.version)

    @torch.no_grad()
    def copy_(self, other: "ParamSet") -> "ParamSet":
        if list(other.keys()) != list(self.keys()):
            raise KeyError("ParamSet keys differ")
        for k, v in self._entries.items():
            v.copy_(other[k])
        self.version = other.version
        return self

    def equal(self, other: "ParamSet") -> bool:
        if list(other.keys()) != list(self.keys()):
            return False
        return all(torch.equal(v.detach(), other[k].detach()) for k, v in self._entries.items())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.equal(other)

    __hash__ = None  # mutable

    def digest(self) -> str:
        """sha256 over names, dtypes, shapes and raw bytes, in entry order."""
        h = hashlib.sha256()
        for k, v in self._entries.items():
            a = v.detach().contiguous().cpu()
            h.update(k.encode())
            h.update(str(a.dtype).encode())
            h.update(repr(tuple(a.shape)).encode())
            h.update(a.numpy().tobytes())
        return h.hexdigest()

    def num_trainable(self) -> int:
        return sum(self._entries[k].numel() for k in self.trainable())

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} entries, {self.num_trainable()} trainable, version={self.version})"


def zeros_like(params: ParamSet) -> GradMap:
    return {k: torch.zeros_like(v, dtype=v.dtype) for k, v in params.items()}


def backward(loss: torch.Tensor, wrt: ParamSet, retain_graph: bool = False) -> GradMap:
    """d loss / d entry for every entry of ``wrt``. Unconnected entries get zeros."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    grads = zeros_like(wrt)
    names = [k for k in wrt.trainable() if wrt[k].requires_grad]
    if not names or not loss.requires_grad:
        return grads
    got = torch.autograd.grad(
        loss.reshape(()), [wrt[k] for k in names], allow_unused=True, retain_graph=retain_graph
    )
    for k, g in zip(names, got):
        if g is not None:
            grads[k] = g
    return grads


def detach(g: Grid) -> Grid:
    """Value-equal constant: backward never passes through the result."""
    return g.detach()


def forward(params: ParamSet, arch, x: Grid, training: bool = False, update_stats: bool = True) -> Grid:
    """Evaluate f_params(x). ``arch`` is a :class:`ign.model.ArchSpec`."""
    from ign.model import apply_arch

    return apply_arch(params, arch, x, training=training, update_stats=update_stats)


def frozen_eval(params_frozen: ParamSet, arch, x: Grid, training: bool = False) -> Grid:
    """forward() with the parameters treated as constants; gradients reach ``x`` only.

    Running statistics of the frozen copy are never updated, so it stays bitwise
    constant between synchronisations.
    """
    return forward(params_frozen.detached(), arch, x, training=training, update_stats=False)


@dataclass
class GradCheckReport:
    eps: float
    errors: dict[str, float] = field(default_factory=dict)
    analytic: GradMap = field(default_factory=dict, repr=False)
    numeric: GradMap = field(default_factory=dict, repr=False)
    unreliable: bool = False
    note: str = ""

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return not self.unreliable and self.max_error < tol


def relative_error(a: torch.Tensor, n: torch.Tensor) -> float:
    """Normwise relative error max|a - n| / max(max|a|, max|n|); 0 when both vanish."""
    diff = (a - n).abs().max().item() if a.numel() else 0.0
    scale = max(a.abs().max().item(), n.abs().max().item()) if a.numel() else 0.0
    if scale == 0.0:
        return diff
    return diff / scale


# Above this step the truncation error of a central difference swamps anything we'd care about.
MAX_RELIABLE_EPS = 1e-3


def check_gradients(
    params: ParamSet,
    arch,
    loss_fn: Callable[[ParamSet], torch.Tensor],
    eps: float = 1e-5,
    names: list[str] | None = None,
) -> GradCheckReport:
    """Compare autograd against central finite differences, in float64.

    ``loss_fn(p)`` must build a scalar loss from the ParamSet ``p`` alone (anything it
    should hold constant, such as a frozen copy, it closes over). ``arch`` is unused by
    the comparison itself and kept for symmetry with forward().
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    p64 = params.clone(requires_grad=True, dtype=ORACLE_DTYPE)
    names = names if names is not None else p64.trainable()
    loss = loss_fn(p64)
    analytic = backward(loss, p64)
    report = GradCheckReport(eps=eps)
    if eps > MAX_RELIABLE_EPS:
        report.unreliable = True
        report.note = f"eps={eps} > {MAX_RELIABLE_EPS}: truncation error dominates, comparison unreliable"

    base = params.clone(dtype=ORACLE_DTYPE)
    with torch.no_grad():
        for name in names:
            arr = base[name]
            flat = arr.view(-1)
            num = torch.zeros_like(arr)
            nflat = num.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                lp = loss_fn(base.clone()).item()
                flat[i] = orig - eps
                lm = loss_fn(base.clone()).item()
                flat[i] = orig
                nflat[i] = (lp - lm) / (2 * eps)
            report.numeric[name] = num
            report.analytic[name] = analytic[name].detach()
            report.errors[name] = relative_error(report.analytic[name], num)
    if any(math.isnan(e) for e in report.errors.values()):
        report.unreliable = True
        report.note = "NaN in gradient comparison"
    return report
