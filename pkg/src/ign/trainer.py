"""IGN training loop.

Every step: copy the live parameters into the frozen copy, draw z, evaluate the three
losses sharing one f(z), sum them, take one Adam step on the live parameters only.

All randomness (epoch shuffles, then z for every step) comes from one torch.Generator
seeded with ``cfg.seed``; its state is saved in checkpoints so that a resumed run is
bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch

from ign import checkpoint as ckpt_io
from ign.data import Dataset
from ign.engine import Grid, ParamSet, backward, forward
from ign.model import ArchSpec, build_dcgan_ae, build_identity, build_mlp, init_params
from ign.noise import SpectrumStats, fit_spectrum, sample_gaussian, sample_spectral
from ign.objectives import LossReport, LossWeights, compute_losses, distance

log = logging.getLogger(__name__)

METRICS_COLUMNS = "step\trec\tidem\ttight_raw\ttight_clamped\ttotal"


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    # model
    arch: str = "dcgan_ae"  # dcgan_ae | mlp | identity
    channels: int = 1
    resolution: int = 28
    latent: int = 256
    width: int = 64
    mlp_dim: int = 2
    mlp_hidden: int = 64
    mlp_depth: int = 4
    init_std: float | str = 0.02  # or "fan_in"
    # loss
    preset: str = "table"
    lambda_r: float | None = None
    lambda_i: float | None = None
    lambda_t: float | None = None
    clamp_ratio: float | None = None
    metric: str | None = None
    clamp: bool | None = None
    clamp_per_sample: bool = False
    # optimizer
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    grad_clip: float = 0.0  # global-norm clip; 0 disables
    # schedule
    batch: int = 256
    iterations: int = 1000
    epochs: int = 0  # when > 0, overrides iterations: epochs * (N // batch)
    seed: int = 0
    noise: str = "gaussian"  # gaussian | spectral
    spectrum_fit_size: int = 10000
    eval_every: int = 0
    checkpoint_every: int = 0
    sample_every: int = 0
    # data
    data_kind: str = "idx"
    data_path: str = ""
    toy_size: int = 8192
    holdout: int = 0
    out_dir: str = "runs/ign"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.noise not in ("gaussian", "spectral"):
            raise ValueError(f"noise must be gaussian or spectral, got {self.noise!r}")
        if self.arch not in ("dcgan_ae", "mlp", "identity"):
            raise ValueError(f"unknown arch {self.arch!r}")

    def loss_weights(self) -> LossWeights:
        overrides = {
            k: getattr(self, k)
            for k in ("lambda_r", "lambda_i", "lambda_t", "clamp_ratio", "metric", "clamp")
            if getattr(self, k) is not None
        }
        return LossWeights.preset(self.preset, clamp_per_sample=self.clamp_per_sample, **overrides)

    def build_arch(self) -> ArchSpec:
        if self.arch == "dcgan_ae":
            return build_dcgan_ae(self.channels, self.resolution, self.latent, self.width)
        if self.arch == "mlp":
            return build_mlp(self.mlp_dim, self.mlp_hidden, self.mlp_depth)
        return build_identity((self.mlp_dim,))

    def total_steps(self, n_data: int) -> int:
        if self.epochs > 0:
            return self.epochs * max(1, n_data // self.batch)
        return self.iterations

    def snapshot(self) -> dict:
        return asdict(self)

    @classmethod
    def from_snapshot(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class TrainState:
    def __init__(self, cfg: TrainConfig, arch: ArchSpec, live: ParamSet, generator: torch.Generator):
        self.cfg = cfg
        self.arch = arch
        self.live = live
        self.frozen = live.clone()
        self.generator = generator
        self.step = 0
        self.epoch = 0
        self.perm: torch.Tensor | None = None
        self.cursor = 0
        self.spectrum: SpectrumStats | None = None
        self.optimizer = torch.optim.Adam(
            [live[k] for k in live.trainable()], lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), foreach=False
        )

    @classmethod
    def create(cls, cfg: TrainConfig, dataset: Dataset | None = None) -> "TrainState":
        arch = cfg.build_arch()
        gen = torch.Generator().manual_seed(cfg.seed)
        live = init_params(arch, generator=gen, std=cfg.init_std).clone(requires_grad=True)
        state = cls(cfg, arch, live, gen)
        if cfg.noise == "spectral":
            if dataset is None:
                raise ValueError("spectral noise needs the dataset to fit statistics")
            state.spectrum = fit_spectrum(dataset.images[: cfg.spectrum_fit_size])
        return state

    def sync(self) -> None:
        self.frozen.copy_(self.live)

    def draw_noise(self, shape) -> Grid:
        if self.spectrum is not None:
            return sample_spectral(self.spectrum, shape[0], generator=self.generator)
        return sample_gaussian(shape, generator=self.generator)

    def next_batch(self, dataset: Dataset) -> Grid:
        n = len(dataset)
        b = min(self.cfg.batch, n)
        if self.perm is None or self.cursor + b > n:
            self.perm = torch.randperm(n, generator=self.generator)
            self.cursor = 0
            self.epoch += 1
        idx = self.perm[self.cursor:self.cursor + b]
        self.cursor += b
        return dataset.images[idx]

    # -- checkpointing -------------------------------------------------------

    def to_checkpoint(self) -> ckpt_io.Checkpoint:
        entries: dict[str, torch.Tensor] = {}
        for k, v in self.live.items():
            entries[f"theta/{k}"] = v.detach()
        params = [self.live[k] for k in self.live.trainable()]
        for k, p in zip(self.live.trainable(), params):
            st = self.optimizer.state.get(p)
            if st:
                entries[f"adam/exp_avg/{k}"] = st["exp_avg"]
                entries[f"adam/exp_avg_sq/{k}"] = st["exp_avg_sq"]
                entries[f"adam/step/{k}"] = torch.as_tensor(st["step"]).reshape(())
        if self.perm is not None:
            entries["data/perm"] = self.perm
        entries["data/cursor"] = torch.tensor(self.cursor, dtype=torch.int64)
        entries["data/epoch"] = torch.tensor(self.epoch, dtype=torch.int64)
        if self.spectrum is not None:
            entries.update(self.spectrum.entries())
        meta = {
            "config": self.cfg.snapshot(),
            "buffers": sorted(self.live.buffers),
            "version": self.live.version,
        }
        if self.spectrum is not None:
            meta["spectrum_hw"] = [self.spectrum.height, self.spectrum.width]
        return ckpt_io.Checkpoint(
            self.arch.to_string(), self.step, entries, self.generator.get_state(), meta
        )

    @classmethod
    def from_checkpoint(cls, ck: ckpt_io.Checkpoint, cfg: TrainConfig | None = None) -> "TrainState":
        saved_cfg = TrainConfig.from_snapshot(ck.meta["config"])
        cfg = cfg or saved_cfg
        arch = cfg.build_arch()
        if arch.to_string() != ck.arch:
            raise ValueError(f"architecture mismatch:\n  checkpoint: {ck.arch}\n  config:     {arch.to_string()}")
        live = params_from_checkpoint(ck).clone(requires_grad=True)
        live.version = ck.meta.get("version", ck.step)
        gen = torch.Generator()
        if ck.rng_state is not None:
            gen.set_state(ck.rng_state)
        state = cls(cfg, arch, live, gen)
        state.step = ck.step
        state.cursor = int(ck.entries["data/cursor"])
        state.epoch = int(ck.entries["data/epoch"])
        state.perm = ck.entries.get("data/perm")
        if "spectrum/mean_re" in ck.entries:
            h, w = ck.meta["spectrum_hw"]
            state.spectrum = SpectrumStats.from_entries(ck.entries, h, w)
        for k in live.trainable():
            if f"adam/exp_avg/{k}" in ck.entries:
                state.optimizer.state[live[k]] = {
                    "step": ck.entries[f"adam/step/{k}"].clone(),
                    "exp_avg": ck.entries[f"adam/exp_avg/{k}"].clone(),
                    "exp_avg_sq": ck.entries[f"adam/exp_avg_sq/{k}"].clone(),
                }
        state.sync()
        return state


def params_from_checkpoint(ck: ckpt_io.Checkpoint) -> ParamSet:
    return ParamSet(ck.group("theta"), set(ck.meta.get("buffers", [])), ck.meta.get("version", ck.step))


def load_model(path: str | Path) -> tuple[ParamSet, ArchSpec, ckpt_io.Checkpoint]:
    """Read a checkpoint for inference: (params, arch, raw checkpoint)."""
    ck = ckpt_io.load(path)
    cfg = TrainConfig.from_snapshot(ck.meta["config"])
    arch = cfg.build_arch()
    if arch.to_string() != ck.arch:
        raise ValueError(f"architecture mismatch:\n  checkpoint: {ck.arch}\n  config:     {arch.to_string()}")
    return params_from_checkpoint(ck), arch, ck


def _grad_norms(grads: dict[str, torch.Tensor]) -> dict[str, float]:
    return {k: g.norm().item() for k, g in grads.items()}


def train_step(state: TrainState, batch_x: Grid, cfg: TrainConfig | None = None) -> tuple[TrainState, LossReport]:
    cfg = cfg or state.cfg
    state.sync()
    z = state.draw_noise(batch_x.shape)
    total, report, _ = compute_losses(
        state.live, state.frozen, state.arch, batch_x, z, cfg.loss_weights(), training=True
    )
    if not report.is_finite():
        raise TrainingDiverged(f"non-finite loss at step {state.step}: {report.as_dict()}")
    grads = backward(total, state.live)
    trainable = state.live.trainable()
    if not all(torch.isfinite(grads[k]).all() for k in trainable):
        norms = _grad_norms({k: grads[k] for k in trainable})
        raise TrainingDiverged(f"non-finite gradient at step {state.step}: loss={report.as_dict()} norms={norms}")
    if cfg.grad_clip > 0:
        norm = torch.sqrt(sum(grads[k].pow(2).sum() for k in trainable))
        if norm > cfg.grad_clip:
            log.info("step %d: clipping gradient norm %.4g to %.4g", state.step, norm.item(), cfg.grad_clip)
            for k in trainable:
                grads[k] = grads[k] * (cfg.grad_clip / norm)
    for k in trainable:
        state.live[k].grad = grads[k]
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.live.version += 1
    state.step += 1
    return state, report


@torch.no_grad()
def heldout_reconstruction(params: ParamSet, arch: ArchSpec, images: Grid, metric: str = "L1", batch: int = 256) -> float:
    """Mean reconstruction distance on held-out data, inference mode."""
    total = 0.0
    for start in range(0, images.shape[0], batch):
        x = images[start:start + batch]
        total += distance(forward(params, arch, x, training=False), x, metric).item() * x.shape[0]
    return total / images.shape[0]


def _write_metrics_header(path: Path, cfg: TrainConfig, resumed_at: int | None) -> None:
    if path.exists() and resumed_at is not None:
        with path.open("a") as fh:
            fh.write(f"# resumed at step {resumed_at}\n")
        return
    with path.open("w") as fh:
        fh.write(f"# seed={cfg.seed} ordering=torch.randperm per epoch, drop-last; noise={cfg.noise}\n")
        fh.write(f"# draw order per step: [epoch permutation when exhausted], z\n")
        fh.write(METRICS_COLUMNS + "\n")


def train(
    cfg: TrainConfig,
    dataset: Dataset,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    heldout: Dataset | None = None,
    on_step=None,
) -> Path:
    """Run training to ``cfg.total_steps`` and return the final checkpoint path.

    Writes ``metrics.tsv`` (one row per step), ``ckpt_<step>.ign`` every
    ``checkpoint_every`` steps, ``final.ign``, and sample sheets every ``sample_every``
    steps for image models. ``on_step(state, report)`` is called after each step.
    """
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = TrainState.from_checkpoint(ckpt_io.load(resume), cfg)
    else:
        state = TrainState.create(cfg, dataset)
    if tuple(dataset.sample_shape) != state.arch.in_shape:
        raise ValueError(f"dataset samples {dataset.sample_shape} do not match model input {state.arch.in_shape}")
    total_steps = cfg.total_steps(len(dataset))
    metrics_path = out / "metrics.tsv"
    _write_metrics_header(metrics_path, cfg, state.step if resume is not None else None)
    t0 = time.time()
    with metrics_path.open("a") as metrics:
        while state.step < total_steps:
            x = state.next_batch(dataset)
            _, report = train_step(state, x, cfg)
            metrics.write(report.row(state.step) + "\n")
            if on_step is not None:
                on_step(state, report)
            if cfg.eval_every and state.step % cfg.eval_every == 0:
                msg = f"step {state.step}/{total_steps} rec={report.rec:.4f} idem={report.idem:.4f} tight={report.tight_raw:.4f}"
                if heldout is not None:
                    msg += f" heldout_rec={heldout_reconstruction(state.live, state.arch, heldout.images, cfg.loss_weights().metric):.4f}"
                log.info("%s (%.1fs)", msg, time.time() - t0)
                metrics.flush()
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                ckpt_io.save(out / f"ckpt_{state.step:07d}.ign", state.to_checkpoint())
            if cfg.sample_every and state.step % cfg.sample_every == 0 and state.arch.kind == "dcgan_ae":
                from ign.sampler import write_generation_sheets

                write_generation_sheets(state.live, state.arch, out / "samples", count=16, n=2,
                                        seed=cfg.seed, tag=f"step{state.step:07d}", spectrum=state.spectrum)
    final = out / "final.ign"
    ckpt_io.save(final, state.to_checkpoint())
    return final

