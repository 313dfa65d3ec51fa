"""Command-line interface: ``ign <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.

Configuration files are INI-style with sections; every key maps onto a training
option and unknown keys are rejected. Command-line flags override the file, and the
``IGN_OUT_DIR`` environment variable overrides the output directory only.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

import torch

from ign import __version__

log = logging.getLogger("ign")

OUT_ENV = "IGN_OUT_DIR"

# config section -> TrainConfig fields it may hold
SECTIONS = {
    "model": ("arch", "channels", "resolution", "latent", "width", "mlp_dim", "mlp_hidden", "mlp_depth", "init_std"),
    "loss": ("preset", "lambda_r", "lambda_i", "lambda_t", "clamp_ratio", "metric", "clamp", "clamp_per_sample"),
    "optim": ("lr", "beta1", "beta2", "grad_clip"),
    "schedule": ("batch", "iterations", "epochs", "seed", "noise", "spectrum_fit_size",
                 "eval_every", "checkpoint_every", "sample_every"),
    "data": ("data_kind", "data_path", "toy_size", "holdout"),
    "output": ("out_dir",),
}


class UsageError(Exception):
    """Bad input from the operator; reported on stderr with exit code 2."""


# ---------------------------------------------------------------------------
# configuration


def _field_types() -> dict[str, object]:
    from ign.trainer import TrainConfig

    return {f.name: f.default for f in dataclasses.fields(TrainConfig)}


def _coerce(key: str, raw: str):
    """Parse a config/flag string according to the TrainConfig default for ``key``."""
    raw = raw.strip()
    if key == "init_std":
        return raw if raw == "fan_in" else float(raw)
    if key in ("lambda_r", "lambda_i", "lambda_t", "clamp_ratio"):
        return None if raw.lower() in ("", "none") else float(raw)
    if key == "metric":
        return None if raw.lower() in ("", "none") else raw
    if key in ("clamp", "clamp_per_sample"):
        low = raw.lower()
        if low in ("", "none") and key == "clamp":
            return None
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    default = _field_types()[key]
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config(path: str | Path) -> dict:
    """Flat {option: value} from an INI file. Unknown sections or keys are errors."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case so typos are reported verbatim
    try:
        cp.read(path)
    except configparser.Error as e:
        raise UsageError(f"{path}: cannot parse config: {e}") from e
    out = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise UsageError(f"{path}: unknown section [{section}]; expected one of {sorted(SECTIONS)}")
        for key, raw in cp.items(section):
            if key not in SECTIONS[section]:
                raise UsageError(f"{path}: unknown key '{key}' in section [{section}]")
            try:
                out[key] = _coerce(key, raw)
            except ValueError as e:
                raise UsageError(f"{path}: bad value for '{key}': {e}") from e
    return out


def resolve_config(args: argparse.Namespace):
    from ign.trainer import TrainConfig

    values = read_config(args.config) if args.config else {}
    for key in _field_types():
        flag = getattr(args, key, None)
        if flag is not None:
            try:
                values[key] = _coerce(key, str(flag))
            except ValueError as e:
                raise UsageError(f"bad value for --{key.replace('_', '-')}: {e}") from e
    if os.environ.get(OUT_ENV):
        values["out_dir"] = os.environ[OUT_ENV]
    if getattr(args, "out", None):
        values["out_dir"] = args.out
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid configuration: {e}") from e


def _out_dir(args: argparse.Namespace, default: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV) or default)


# ---------------------------------------------------------------------------
# commands


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, cfg, dataset) -> Path:
    """Run manifest, written once before training starts and never modified."""
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    body = {
        "config": cfg.snapshot(),
        "seed": cfg.seed,
        "version": __version__,
        "torch": torch.__version__,
        "dataset": {"kind": dataset.kind, "source": dataset.source, **dataset.fingerprint()},
        "start": _now(),
    }
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def _load_dataset(cfg):
    from ign.data import IDXFormatError, ingest_dataset

    try:
        return ingest_dataset(
            cfg.data_path or None, cfg.data_kind, resolution=cfg.resolution, channels=cfg.channels,
            toy_size=cfg.toy_size, seed=cfg.seed,
        )
    except FileNotFoundError as e:
        raise UsageError(str(e)) from e
    except IDXFormatError as e:
        raise UsageError(str(e)) from e


def cmd_train(args) -> int:
    from ign.trainer import train

    cfg = resolve_config(args)
    dataset = _load_dataset(cfg)
    heldout = None
    if cfg.holdout:
        dataset, heldout = dataset.split(cfg.holdout)
    out = Path(cfg.out_dir)
    write_manifest(out, cfg, dataset)
    final = train(cfg, dataset, out, resume=args.resume, heldout=heldout)
    (out / "run_end.json").write_text(json.dumps({"end": _now(), "final_checkpoint": final.name}) + "\n")
    print(f"final checkpoint: {final}")
    return 0


def _load_model(path):
    from ign.checkpoint import CheckpointError
    from ign.trainer import load_model

    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_model(path)
    except CheckpointError as e:
        raise UsageError(str(e)) from e
    except ValueError as e:
        # architecture mismatch: message carries both arch strings
        raise UsageError(str(e)) from e


def _spectrum(ck, mode: str):
    from ign.noise import SpectrumStats

    if mode == "gaussian":
        return None
    if "spectrum/mean_re" not in ck.entries:
        raise UsageError("checkpoint holds no fitted spectrum; use --noise gaussian")
    h, w = ck.meta["spectrum_hw"]
    return SpectrumStats.from_entries(ck.entries, h, w)


def cmd_generate(args) -> int:
    from ign.sampler import write_generation_sheets

    params, arch, ck = _load_model(args.checkpoint)
    if args.count < 1 or args.n < 1:
        raise UsageError("--count and --n must be >= 1")
    paths = write_generation_sheets(
        params, arch, _out_dir(args, "out/generate"), count=args.count, n=args.n, seed=args.seed,
        spectrum=_spectrum(ck, args.noise),
    )
    for p in paths:
        print(p)
    return 0


def _parse_rect(text: str | None):
    if text is None:
        return None
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError as e:
        raise UsageError(f"--rect expects top,left,height,width; got {text!r}") from e
    if len(vals) != 4:
        raise UsageError(f"--rect expects four integers, got {text!r}")
    return vals


def _image_files(inputs: list[str]) -> list[Path]:
    from ign.data import IMAGE_SUFFIXES

    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES)
        elif p.exists():
            files.append(p)
        else:
            raise UsageError(f"input not found: {p}")
    return files


def cmd_project(args) -> int:
    from PIL import UnidentifiedImageError

    from ign.data import load_image
    from ign.sampler import DegradationSpec, degrade, project, save_sheet, sheet_name

    params, arch, _ = _load_model(args.checkpoint)
    try:
        spec = DegradationSpec(args.degradation, sigma=args.sigma, kernel=args.kernel, rect=_parse_rect(args.rect))
    except ValueError as e:
        raise UsageError(str(e)) from e
    if arch.kind != "dcgan_ae":
        raise UsageError("project works on image models only")
    channels, res = arch.in_shape[0], arch.in_shape[1]
    out = _out_dir(args, "out/project")
    skipped = written = 0
    for i, f in enumerate(_image_files(args.inputs)):
        try:
            x = load_image(f, res, channels).unsqueeze(0)
        except (UnidentifiedImageError, OSError) as e:
            log.warning("skipping %s: %s", f, e)
            skipped += 1
            continue
        try:
            xd = degrade(x, spec, seed=args.seed + i)
        except ValueError as e:
            raise UsageError(f"{f}: {e}") from e
        seq = project(params, arch, xd, args.n)
        row = [x[0], xd[0]] + [s[0] for s in seq]
        save_sheet([row], out / sheet_name("project", args.seed, args.n, f"{f.stem}_{spec.tag()}"))
        written += 1
    print(f"projected {written} image(s), skipped {skipped}")
    return 0 if written or not skipped else 2


def cmd_interpolate(args) -> int:
    from ign.sampler import draw_source, interpolate, save_sheet, sheet_name, write_points

    params, arch, ck = _load_model(args.checkpoint)
    if args.steps < 2:
        raise UsageError("--steps must be >= 2")
    spectrum = _spectrum(ck, args.noise)
    z = draw_source(arch, 2, args.seed, spectrum)
    rows = interpolate(params, arch, z[0], z[1], args.steps)
    out = _out_dir(args, "out/interpolate")
    if len(arch.in_shape) == 1:
        cols = [torch.cat([r[c] for r in rows]) for c in range(4)]
        path = write_points(cols, out / f"interpolate_seed{args.seed}_n3.tsv")
    else:
        path = save_sheet([[c[0] for c in r] for r in rows], out / sheet_name("interpolate", args.seed, 3))
    print(path)
    return 0


def cmd_arithmetic(args) -> int:
    from ign.sampler import combine_latents, draw_source, latent_arithmetic, save_sheet, sheet_name, write_points

    params, arch, ck = _load_model(args.checkpoint)
    spectrum = _spectrum(ck, args.noise)
    k = args.k
    if k < 1:
        raise UsageError("--k must be >= 1")
    z_pos = draw_source(arch, k, args.seed_pos, spectrum)
    z_neg = draw_source(arch, k, args.seed_neg, spectrum)
    z = draw_source(arch, 1, args.seed, spectrum)
    reduce = "mean" if k > 1 else None
    res = latent_arithmetic(params, arch, z_pos, z_neg, z, reduce=reduce)
    out = _out_dir(args, "out/arithmetic")
    from ign.sampler import apply_n

    if len(arch.in_shape) == 1:
        path = write_points([combine_latents(z_pos, z_neg, z, reduce), res], out / f"arithmetic_seed{args.seed}_n1.tsv")
    else:
        fp = apply_n(params, arch, z_pos.mean(0, keepdim=True), 1)[0]
        fn = apply_n(params, arch, z_neg.mean(0, keepdim=True), 1)[0]
        fz = apply_n(params, arch, z, 1)[0]
        path = save_sheet([[fp[0], fn[0], fz[0], res[0]]], out / sheet_name("arithmetic", args.seed, 1))
    print(path)
    return 0


def cmd_verify(args) -> int:
    from fractions import Fraction

    from ign import theory, verify

    ok = True
    lines = []
    if args.suite in ("routing", "all"):
        checks = verify.routing_suite(args.seed)
        lines += [c.line() for c in checks]
        ok &= all(c.passed for c in checks)
    if args.suite in ("theorem", "all"):
        try:
            lam = Fraction(args.lambda_t)
        except ValueError as e:
            raise UsageError(f"bad --lambda-t: {e}") from e
        if lam < 0:
            raise UsageError("--lambda-t must be >= 0")
        if args.n < 1:
            raise UsageError("--n must be >= 1")
        if args.n > theory.MAX_EXHAUSTIVE_N:
            raise UsageError(
                f"--n {args.n} is too large for exhaustive search (max {theory.MAX_EXHAUSTIVE_N}); "
                "the sampled search is available as ign.theory.sampled_fixed_point_search"
            )
        results = verify.theorem_suite(args.n, lam)
        text, t_ok = theory.format_report(results)
        if args.report:
            Path(args.report).parent.mkdir(parents=True, exist_ok=True)
            Path(args.report).write_text(text)
        summary = f"theorem (N={args.n}, lambda_t={lam}): {len(results)} instance(s), " \
                  f"{sum(len(r.fixed_points) for r in results)} fixed point(s)"
        if lam > 1:
            lines.append(f"INFO  {summary}; lambda_t > 1 is outside the lambda_t <= 1 precondition, informational only")
        else:
            lines.append(f"{'PASS' if t_ok else 'FAIL'}  {summary}")
            ok &= t_ok
        if args.verbose:
            lines.append(text.rstrip())
    print("\n".join(lines))
    print("OVERALL:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_ingest_check(args) -> int:
    from ign.data import IDXFormatError, ingest_dataset

    try:
        ds = ingest_dataset(args.path, args.kind, resolution=args.resolution, channels=args.channels,
                            toy_size=args.toy_size, seed=args.seed)
    except (FileNotFoundError, IDXFormatError, ValueError) as e:
        raise UsageError(str(e)) from e
    fp = ds.fingerprint()
    lo, hi = ds.images.min().item(), ds.images.max().item()
    print(f"kind={ds.kind} count={fp['count']} shape={tuple(fp['shape'])} range=[{lo:.4f}, {hi:.4f}] sha256={fp['sha256']}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    """One flag per config key; all default to None so the file value survives."""
    for section, keys in SECTIONS.items():
        g = p.add_argument_group(f"[{section}] overrides")
        for key in keys:
            g.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ign", description="Idempotent generative network toolkit.")
    p.add_argument("--version", action="version", version=f"ign {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="more logging")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", help="INI config file")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--out", help="output directory (overrides config and environment)")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    def model_cmd(name, help_, func, default_seed=0):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--seed", type=int, default=default_seed)
        s.add_argument("--out", help="output directory")
        s.add_argument("--noise", choices=("gaussian", "spectral"), default="gaussian")
        s.set_defaults(func=func)
        return s

    g = model_cmd("generate", "sample sheets for application depths 1..n", cmd_generate)
    g.add_argument("--count", type=int, default=64)
    g.add_argument("--n", type=int, default=1)

    pr = model_cmd("project", "project (degraded) images onto the learned manifold", cmd_project)
    pr.add_argument("inputs", nargs="+", help="image files or directories")
    pr.add_argument("--degradation", default="none", choices=("none", "noise", "grayscale", "sketch", "mask_noise"))
    pr.add_argument("--sigma", type=float, default=0.15)
    pr.add_argument("--kernel", type=int, default=21)
    pr.add_argument("--rect", help="mask rectangle top,left,height,width")
    pr.add_argument("--n", type=int, default=3)

    it = model_cmd("interpolate", "linear interpolation between two source samples", cmd_interpolate)
    it.add_argument("--steps", type=int, default=8)

    ar = model_cmd("arithmetic", "f((z_pos - z_neg) + z)", cmd_arithmetic)
    ar.add_argument("--seed-pos", type=int, default=1)
    ar.add_argument("--seed-neg", type=int, default=2)
    ar.add_argument("--k", type=int, default=1, help="average k latents for z_pos and z_neg")

    v = sub.add_parser("verify", help="gradient-routing checks and the finite-space oracle")
    v.add_argument("suite", choices=("routing", "theorem", "all"))
    v.add_argument("--n", type=int, default=3)
    v.add_argument("--lambda-t", default="1")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", help="write the fixed-point report here")
    v.set_defaults(func=cmd_verify)

    ic = sub.add_parser("ingest-check", help="load a dataset and print its fingerprint")
    ic.add_argument("--kind", choices=("idx", "image_dir", "toy2d"), required=True)
    ic.add_argument("--path")
    ic.add_argument("--resolution", type=int)
    ic.add_argument("--channels", type=int, default=1)
    ic.add_argument("--toy-size", type=int, default=8192)
    ic.add_argument("--seed", type=int, default=0)
    ic.set_defaults(func=cmd_ingest_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors, 0 on --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
