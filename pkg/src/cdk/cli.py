"""Command-line entry point: ``cdk <subcommand> [--config C] [--seed S] [--out DIR]``.

Failures print one line ``error: code=N kind=K message="..."`` to stderr and
exit with 2 (usage), 3 (configuration, protocol or input data) or 4
(numerical failure at run time).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .cascade import CascadeStage, run_cascade
from .config import RunConfig, load_config
from .denoisers.data import BlobDataset, gen_blob_dataset
from .denoisers.gradcheck import grad_check_all
from .denoisers.prompts import encode_prompts, parse_prompt
from .denoisers.train import train_denoiser
from .denoisers.unet import ToyUNetConfig, UNetDenoiser
from .errors import ConfigError, ProtocolError
from .evaluation.human import aggregate_report, read_ratings, report_csv
from .evaluation.sweep import cascade_generator, guidance_sweep, model_generator, sweep_csv
from .guidance import sample
from .rng import RngStream
from .schedules import Schedule
from .store import FormatError, atomic_write, load_checkpoint, read_tsr, save_checkpoint, save_image_pgm, write_tsr

log = logging.getLogger("cdk")

EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 2, 3, 4
COMMANDS = ("gen-data", "train", "sample", "cascade", "sweep", "grad-check", "eval-human")

# independent random streams per pipeline step
STREAM_DATA, STREAM_REFERENCE, STREAM_TRAIN, STREAM_SAMPLE, STREAM_SWEEP, STREAM_GRADCHECK = 1, 2, 3, 5, 6, 7


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class NumericError(ArithmeticError):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration file")
    common.add_argument("--seed", type=lambda s: int(s, 0), help="override run.seed")
    common.add_argument("--out", type=Path, default=Path("run"), help="output directory (default: run)")
    parser = _Parser(prog="cdk", description="Toy cascaded text-to-image diffusion kit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "eval-human":
            p.add_argument("--ratings", type=Path, help="ratings CSV (overrides paths.ratings)")
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        cfg.seed = args.seed
    return cfg


def _write_dataset(out: Path, name: str, ds: BlobDataset):
    tensors = {"images": ds.images}
    if ds.lowres is not None:
        tensors["lowres"] = ds.lowres
    write_tsr(out / f"{name}.tsr", tensors)
    atomic_write(out / f"{name}.txt", "".join(" ".join(p) + "\n" for p in ds.prompts))


def _read_dataset(path: Path) -> BlobDataset:
    tensors = read_tsr(path)
    prompts = [parse_prompt(line) for line in path.with_suffix(".txt").read_text().splitlines()]
    if len(prompts) != len(tensors["images"]):
        raise FormatError(f"{path}: {len(prompts)} prompts for {len(tensors['images'])} images")
    return BlobDataset(tensors["images"], prompts, tensors.get("lowres"))


def _schedule_dict(s: Schedule) -> dict:
    return {"kind": s.kind, "beta_start": s.beta_start, "beta_end": s.beta_end, "n_steps": s.n_steps}


def _load_model(path: Path) -> tuple[UNetDenoiser, ToyUNetConfig]:
    params, meta = load_checkpoint(path)
    if "model" not in meta:
        raise FormatError(f"{path}: manifest has no model section")
    ucfg = ToyUNetConfig.from_dict(meta["model"])
    return UNetDenoiser(params, ucfg), ucfg


def _save_images(out: Path, stem: str, images: np.ndarray):
    for i, img in enumerate(images):
        save_image_pgm(img, out / f"{stem}_{i:03d}.{'pgm' if img.shape[0] == 1 else 'ppm'}")


def _check_finite(x: np.ndarray, what: str):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


# --- commands -------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, args) -> str:
    rng = RngStream(cfg.seed)
    ds = gen_blob_dataset(cfg.n_data, cfg.model.resolution, rng.spawn(STREAM_DATA))
    _write_dataset(args.out, "data", ds)
    return f"wrote {len(ds)} images at {ds.resolution}x{ds.resolution} to {args.out / 'data.tsr'}"


def cmd_train(cfg: RunConfig, args) -> str:
    rng = RngStream(cfg.seed)
    if "data" in cfg.paths:
        ds = _read_dataset(cfg.paths["data"])
    else:
        ds = gen_blob_dataset(cfg.n_data, cfg.model.resolution, rng.spawn(STREAM_DATA))
    if ds.resolution != cfg.model.resolution:
        ds = ds.at_resolution(cfg.model.resolution)
    tcfg = cfg.train
    if cfg.model.is_super_res and tcfg.aug == "fixed":
        tcfg = type(tcfg)(**{**tcfg.__dict__, "aug_level": cfg.sr_aug_level})
    result = train_denoiser(ds, cfg.model, tcfg, rng.spawn(STREAM_TRAIN), cfg.schedule)
    for epoch, loss in enumerate(result.loss_trace):
        if not np.isfinite(loss):
            raise NumericError(f"training loss became non-finite at epoch {epoch + 1}")
    save_checkpoint(args.out / "model", result.params, model=cfg.model.to_dict(),
                    schedule=_schedule_dict(cfg.schedule), train=tcfg.__dict__, seed=cfg.seed,
                    n_examples=result.n_examples, n_dropped=result.n_dropped)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "loss"))
    w.writerows((i + 1, f"{v:.6f}") for i, v in enumerate(result.loss_trace))
    atomic_write(args.out / "loss.csv", buf.getvalue())
    return (f"trained {len(result.loss_trace)} epochs, final loss {result.loss_trace[-1]:.4f}, "
            f"conditioning dropped {result.drop_fraction:.3f}; wrote {args.out / 'model.tsr'}")


def cmd_sample(cfg: RunConfig, args) -> str:
    if "checkpoint" not in cfg.paths:
        raise ConfigError("sample needs paths.checkpoint")
    denoiser, ucfg = _load_model(cfg.paths["checkpoint"])
    if ucfg.is_super_res:
        raise ConfigError("sample takes a base model; use cascade for super-resolution stages")
    cond = encode_prompts([cfg.sample_prompt] * cfg.sample_n)
    shape = (cfg.sample_n, ucfg.image_channels, ucfg.resolution, ucfg.resolution)
    images = sample(denoiser, cond, cfg.schedule, cfg.sampler, cfg.guidance,
                    RngStream(cfg.seed).spawn(STREAM_SAMPLE), shape)
    _check_finite(images, "samples")
    write_tsr(args.out / "samples.tsr", {"samples": images})
    _save_images(args.out, "sample", images)
    return f"wrote {len(images)} samples to {args.out}"


def _stages(cfg: RunConfig) -> list[CascadeStage]:
    if not cfg.stages:
        raise ConfigError("cascade needs at least one [stage.N] section")
    stages = []
    for st in cfg.stages:
        denoiser, ucfg = _load_model(st.checkpoint)
        if ucfg.resolution != st.out_res:
            raise ConfigError(f"stage.{st.index}: checkpoint resolution {ucfg.resolution} != out_res {st.out_res}")
        if ucfg.is_super_res != (st.role == "super_res"):
            raise ConfigError(f"stage.{st.index}: checkpoint does not match role {st.role}")
        stages.append(CascadeStage(st.role, st.out_res, denoiser, st.guidance, st.sampler, st.in_res,
                                   st.aug_level, ucfg.image_channels, st.prompt))
    return stages


def cmd_cascade(cfg: RunConfig, args) -> str:
    stages = _stages(cfg)
    result = run_cascade(stages, [cfg.sample_prompt] * cfg.sample_n, RngStream(cfg.seed).spawn(STREAM_SAMPLE),
                         cfg.schedule)
    for k, img in enumerate(result.intermediates):
        _check_finite(img, f"stage {k} output")
    write_tsr(args.out / "cascade.tsr", {f"stage{k}": img for k, img in enumerate(result.intermediates)})
    for k, img in enumerate(result.intermediates[:-1]):
        _save_images(args.out, f"stage{k}", img)
    _save_images(args.out, "final", result.final)
    return f"wrote {len(result.final)} cascade outputs at {stages[-1].out_res}x{stages[-1].out_res} to {args.out}"


def cmd_sweep(cfg: RunConfig, args) -> str:
    rng = RngStream(cfg.seed)
    if cfg.stages:
        stages = _stages(cfg)
        generate = cascade_generator(stages, cfg.schedule)
        resolution = stages[-1].out_res
    elif "checkpoint" in cfg.paths:
        denoiser, ucfg = _load_model(cfg.paths["checkpoint"])
        if ucfg.is_super_res:
            raise ConfigError("sweep over a single model needs a base checkpoint")
        generate = model_generator(denoiser, ucfg.resolution, cfg.sampler, cfg.guidance.threshold,
                                   cfg.guidance.p, cfg.schedule, ucfg.image_channels)
        resolution = ucfg.resolution
    else:
        raise ConfigError("sweep needs paths.checkpoint or [stage.N] sections")
    reference = gen_blob_dataset(cfg.n_reference, resolution, rng.spawn(STREAM_REFERENCE))
    rows = guidance_sweep(generate, reference, rng.spawn(STREAM_SWEEP), cfg.sweep_weights, cfg.sweep_n)
    for r in rows:
        if not (np.isfinite(r.fid_toy) and np.isfinite(r.align_toy)):
            raise NumericError(f"non-finite sweep metrics at w={r.w:g}")
    atomic_write(args.out / "sweep.csv", sweep_csv(rows))
    return f"wrote {len(rows)} sweep rows to {args.out / 'sweep.csv'}"


def cmd_grad_check(cfg: RunConfig, args) -> str:
    results = grad_check_all(RngStream(cfg.seed).spawn(STREAM_GRADCHECK))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("block", "n_probes", "max_rel_error", "max_rel_error_fd32", "passed"))
    for r in results:
        w.writerow((r.block, r.n_probes, f"{r.max_rel_error:.3e}", f"{r.max_rel_error_fd32:.3e}", int(r.passed)))
    atomic_write(args.out / "gradcheck.csv", buf.getvalue())
    failed = [r.block for r in results if not r.passed]
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)}")
    return f"gradient check passed for {len(results)} block types; wrote {args.out / 'gradcheck.csv'}"


def cmd_eval_human(cfg: RunConfig, args) -> str:
    path = args.ratings or cfg.paths.get("ratings")
    if path is None:
        raise ConfigError("eval-human needs --ratings or paths.ratings")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read ratings {path}: {exc.strerror}") from exc
    rows = aggregate_report(read_ratings(text))
    atomic_write(args.out / "aggregate.csv", report_csv(rows))
    return f"wrote {len(rows)} aggregate rows to {args.out / 'aggregate.csv'}"


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "cascade": cmd_cascade,
    "sweep": cmd_sweep,
    "grad-check": cmd_grad_check,
    "eval-human": cmd_eval_human,
}


def _fail(code: int, exc: BaseException) -> int:
    message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
    print(f"error: code={code} kind={type(exc).__name__} message={json.dumps(message)}", file=sys.stderr)
    return code


def _thread_limit():
    raw = os.environ.get("CDK_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CDK_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"CDK_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        with _thread_limit(), np.errstate(over="ignore", invalid="ignore"):
            cfg = _load(args)
            args.out.mkdir(parents=True, exist_ok=True)
            print(HANDLERS[args.command](cfg, args))
    except ArithmeticError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (ConfigError, ProtocolError, FormatError, ValueError, KeyError, OSError) as exc:
        return _fail(EXIT_CONFIG, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
