"""IGN losses.

Three terms over one network f:

* reconstruction  D(f(x), x)                      -- gradients through f
* idempotence     D(f'(f(z)), f(z))               -- f' a frozen copy: only the inner f learns
* tightness      -D(f(sg[f(z)]), sg[f(z)])        -- inner output detached: only the outer f learns

``sg`` is stop-gradient. The idempotence and tightness terms are each other's negation
with the two instantiations swapped, which is what makes training self-adversarial.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace

import torch

from ign.engine import Grid, ParamSet, detach, forward, frozen_eval

log = logging.getLogger(__name__)

METRICS = ("L1", "L2")


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 1.0
    lambda_i: float = 1.0
    lambda_t: float = 0.1
    clamp_ratio: float = 1.5
    metric: str = "L2"
    clamp: bool = False
    clamp_per_sample: bool = False

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.clamp_ratio < 1:
            raise ValueError(f"clamp_ratio must be >= 1, got {self.clamp_ratio}")
        for name in ("lambda_r", "lambda_i", "lambda_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def preset(cls, name: str, **overrides) -> "LossWeights":
        return replace(PRESETS[name], **overrides)


PRESETS = {
    # the MNIST training routine: squared error, no clamp
    "code": LossWeights(lambda_r=1.0, lambda_i=1.0, lambda_t=0.1, clamp_ratio=1.5, metric="L2", clamp=False),
    # the CelebA table: L1, heavier weights, tanh clamp
    "table": LossWeights(lambda_r=20.0, lambda_i=20.0, lambda_t=2.5, clamp_ratio=1.5, metric="L1", clamp=True),
}


@dataclass
class LossReport:
    rec: float
    idem: float
    tight_raw: float
    tight_clamped: float
    total: float
    weighted_rec: float
    weighted_idem: float
    weighted_tight: float

    FIELDS = ("rec", "idem", "tight_raw", "tight_clamped", "total")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def row(self, step: int) -> str:
        return "\t".join([str(step)] + [repr(float(getattr(self, f))) for f in self.FIELDS])

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())


def distance(a: Grid, b: Grid, metric: str, per_sample: bool = False) -> torch.Tensor:
    """Mean absolute (L1) or mean squared (L2) difference over all elements."""
    d = (a - b).abs() if metric == "L1" else (a - b).pow(2)
    if per_sample:
        return d.reshape(d.shape[0], -1).mean(dim=1)
    return d.mean()


def drift(params: ParamSet, arch, y: Grid, metric: str = "L2", training: bool = False) -> torch.Tensor:
    """D(y, f(y)): how far f moves y. Zero exactly on the model's fixed points."""
    return distance(forward(params, arch, y, training=training), y, metric)


def loss_rec(params: ParamSet, arch, x: Grid, metric: str = "L2", training: bool = True) -> torch.Tensor:
    return drift(params, arch, x, metric, training=training)


def loss_idem(
    params_live: ParamSet, params_frozen: ParamSet, arch, z: Grid, metric: str = "L2", training: bool = True
) -> torch.Tensor:
    fz = forward(params_live, arch, z, training=training)
    f_fz = frozen_eval(params_frozen, arch, fz, training=training)
    return distance(f_fz, fz, metric)


def loss_tight_raw(
    params_live: ParamSet, params_frozen: ParamSet, arch, z: Grid, metric: str = "L2", training: bool = True
) -> torch.Tensor:
    # inner instantiation is a constant input to the outer, live one
    f_z = detach(frozen_eval(params_frozen, arch, z, training=training))
    ff_z = forward(params_live, arch, f_z, training=training)
    return -distance(ff_z, f_z, metric)


def clamp_tight(distance_value, rec, a: float):
    """Smooth clamp tanh(d / (a*rec)) * a*rec of a nonnegative tightness distance.

    Works on floats or tensors. The bound a*rec is taken as given (callers pass a
    detached reconstruction value). rec == 0 returns 0, the limit from above.

    Tensors are clamped in float64 and returned as float64: a*rec is exact there for
    float32 rec, so a saturated tanh cannot round the result above the bound.
    """
    if a < 1:
        raise ValueError("clamp ratio must be >= 1")
    if isinstance(distance_value, torch.Tensor) or isinstance(rec, torch.Tensor):
        scale = a * torch.as_tensor(rec).to(torch.float64)
        d = torch.as_tensor(distance_value).to(torch.float64)
        safe = torch.where(scale > 0, scale, torch.ones_like(scale))
        out = torch.where(scale > 0, torch.tanh(d / safe) * safe, torch.zeros_like(d * safe))
        if bool((scale == 0).any()):
            log.warning("reconstruction loss is 0; tightness clamp returns 0")
        return out
    scale = a * rec
    if scale == 0:
        log.warning("reconstruction loss is 0; tightness clamp returns 0")
        return 0.0
    return math.tanh(distance_value / scale) * scale


def compute_losses(
    params_live: ParamSet,
    params_frozen: ParamSet,
    arch,
    x: Grid,
    z: Grid,
    weights: LossWeights,
    training: bool = True,
) -> tuple[torch.Tensor, LossReport, dict[str, torch.Tensor]]:
    """All three terms with one shared f(z). Returns (total, report, raw term tensors)."""
    if x.shape != z.shape:
        raise ValueError(f"x and z must share a shape, got {tuple(x.shape)} and {tuple(z.shape)}")
    metric = weights.metric
    fx = forward(params_live, arch, x, training=training)
    fz = forward(params_live, arch, z, training=training)
    f_z = detach(fz)
    ff_z = forward(params_live, arch, f_z, training=training)
    f_fz = frozen_eval(params_frozen, arch, fz, training=training)

    rec = distance(fx, x, metric)
    idem = distance(f_fz, fz, metric)
    tight_dist = distance(ff_z, f_z, metric, per_sample=weights.clamp_per_sample)
    if weights.clamp:
        if weights.clamp_per_sample:
            rec_ref = detach(distance(fx, x, metric, per_sample=True))
        else:
            rec_ref = detach(rec)
        tight_clamped = -clamp_tight(tight_dist, rec_ref, weights.clamp_ratio).mean()
    else:
        tight_clamped = -tight_dist.mean()
    tight_raw = -tight_dist.mean()

    w_rec = weights.lambda_r * rec
    w_idem = weights.lambda_i * idem
    w_tight = weights.lambda_t * tight_clamped.to(rec.dtype)
    total = w_rec + w_idem + w_tight
    report = LossReport(
        rec=rec.item(),
        idem=idem.item(),
        tight_raw=tight_raw.item(),
        tight_clamped=tight_clamped.item(),
        total=total.item(),
        weighted_rec=w_rec.item(),
        weighted_idem=w_idem.item(),
        weighted_tight=w_tight.item(),
    )
    terms = {"rec": rec, "idem": idem, "tight_raw": tight_raw, "tight_clamped": tight_clamped}
    return total, report, terms


def total_loss(params_live, params_frozen, arch, x, z, weights: LossWeights, training: bool = True) -> LossReport:
    return compute_losses(params_live, params_frozen, arch, x, z, weights, training=training)[1]
