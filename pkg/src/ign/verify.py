"""Self-checks driven by ``ign verify``: gradient routing and the finite-space oracle."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import torch

from ign.engine import ORACLE_DTYPE, backward, check_gradients
from ign.model import build_identity, build_mlp, init_params
from ign.objectives import LossWeights, compute_losses, loss_idem, loss_rec, loss_tight_raw
from ign import theory

ROUTING_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def tiny_problem(seed: int = 0, batch: int = 8, hidden: int = 16, depth: int = 3):
    """A small float64 MLP with a frozen copy perturbed away from the live one.

    The perturbation makes sure a mix-up between live and frozen parameters would
    show up in the gradient comparison.
    """
    arch = build_mlp(2, hidden, depth)
    live = init_params(arch, seed=seed, std="fan_in").clone(dtype=ORACLE_DTYPE)
    gen = torch.Generator().manual_seed(seed + 1)
    frozen = live.clone()
    for k in frozen.trainable():
        frozen[k] = frozen[k] + 0.1 * torch.randn(frozen[k].shape, generator=gen, dtype=ORACLE_DTYPE)
    x = torch.randn(batch, 2, generator=gen, dtype=ORACLE_DTYPE)
    z = torch.randn(batch, 2, generator=gen, dtype=ORACLE_DTYPE)
    return arch, live, frozen, x, z


def gradient_checks(seed: int = 0, metric: str = "L2", eps: float = 1e-6) -> list[CheckResult]:
    """Autograd vs float64 central differences for each loss, frozen copy held constant."""
    arch, live, frozen, x, z = tiny_problem(seed)
    fns = {
        "rec": lambda p: loss_rec(p, arch, x, metric),
        "idem": lambda p: loss_idem(p, frozen, arch, z, metric),
        "tight": lambda p: loss_tight_raw(p, frozen, arch, z, metric),
    }
    out = []
    for name, fn in fns.items():
        rep = check_gradients(live, arch, fn, eps=eps)
        ok = rep.passed(ROUTING_TOL) and not rep.unreliable
        out.append(CheckResult(f"grad {name} ({metric})", ok, f"max rel. err {rep.max_error:.2e} (tol {ROUTING_TOL:g})"))
    return out


def frozen_path_checks(seed: int = 0) -> list[CheckResult]:
    """Gradients that must be exactly zero, not merely small."""
    arch, live, frozen, x, z = tiny_problem(seed)
    live = live.clone(requires_grad=True)
    frozen = frozen.clone(requires_grad=True)
    out = []

    g = backward(loss_idem(live, frozen, arch, z), frozen)
    worst = max(v.abs().max().item() for v in g.values())
    out.append(CheckResult("idem: d/d(frozen) == 0", worst == 0.0, f"max |grad| = {worst!r}"))

    g = backward(loss_tight_raw(live, frozen, arch, z), frozen)
    worst = max(v.abs().max().item() for v in g.values())
    out.append(CheckResult("tight: d/d(inner copy) == 0", worst == 0.0, f"max |grad| = {worst!r}"))

    zz = z.clone().requires_grad_(True)
    (gz,) = torch.autograd.grad(loss_tight_raw(live, frozen, arch, zz), zz, allow_unused=True)
    worst = 0.0 if gz is None else gz.abs().max().item()
    out.append(CheckResult("tight: d/dz == 0 (inner path detached)", worst == 0.0, f"max |grad| = {worst!r}"))

    # with the shared-f(z) formulation and live == frozen: the tightness term only
    # reaches parameters through the outer application
    same = live.clone(requires_grad=True)
    w = LossWeights(lambda_r=0.0, lambda_i=0.0, lambda_t=1.0, metric="L2")
    total, _, _ = compute_losses(same, same.clone(), arch, x, z, w)
    g_shared = backward(total, same)
    g_ref = backward(loss_tight_raw(same, same.clone(), arch, z), same)
    diff = max((g_shared[k] - g_ref[k]).abs().max().item() for k in same.trainable())
    out.append(CheckResult("shared f(z): tight gradient == outer-only gradient", diff == 0.0, f"max diff = {diff!r}"))
    return out


def identity_checks(tol: float = 1e-6) -> list[CheckResult]:
    """With f the identity every loss and every gradient (w.r.t. inputs) vanishes."""
    arch = build_identity((2,))
    from ign.engine import ParamSet

    p = ParamSet({})
    gen = torch.Generator().manual_seed(0)
    x = torch.randn(16, 2, generator=gen, dtype=ORACLE_DTYPE, requires_grad=True)
    z = torch.randn(16, 2, generator=gen, dtype=ORACLE_DTYPE, requires_grad=True)
    out = []
    for preset in ("code", "table"):
        total, rep, _ = compute_losses(p, p, arch, x, z, LossWeights.preset(preset))
        gx, gz = torch.autograd.grad(total, [x, z], allow_unused=True)
        worst = max(abs(v) for v in rep.as_dict().values())
        gworst = max(0.0 if g is None else g.abs().max().item() for g in (gx, gz))
        out.append(CheckResult(f"identity ({preset})", worst <= tol and gworst <= tol,
                               f"max |loss| = {worst:.1e}, max |grad| = {gworst:.1e}"))
    return out


def routing_suite(seed: int = 0) -> list[CheckResult]:
    return gradient_checks(seed, "L2") + gradient_checks(seed, "L1") + frozen_path_checks(seed) + identity_checks()


def theorem_suite(n: int = 3, lambda_t=1) -> list[theory.SearchResult]:
    """Exhaustive fixed-point search over every realizable full-support target on n points."""
    return [theory.fixed_point_search(*inst) for inst in theory.standard_instances(n, Fraction(lambda_t))]
