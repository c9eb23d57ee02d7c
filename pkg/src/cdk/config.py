"""Run configuration: flat ``key = value`` text with ``[section]`` headers.

Unknown sections or keys are rejected, and every path under ``[paths]`` or a
stage's ``checkpoint`` must exist (relative paths resolve against the config
file's directory). See ``README.md`` for the full key list.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .denoisers.train import TrainConfig
from .denoisers.unet import BlockSpec, ToyUNetConfig
from .errors import ConfigError, DomainError
from .evaluation.sweep import DEFAULT_WEIGHTS
from .guidance import GuidanceConfig, SamplerConfig
from .schedules import Schedule


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _bools(s: str) -> tuple[bool, ...]:
    return tuple(_bool(v) for v in s.split(",") if v.strip())


def _seed(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return v


SCHEMA: dict[str, dict] = {
    "run": {"seed": _seed},
    "schedule": {"kind": str, "beta_start": float, "beta_end": float, "steps": int},
    "model": {
        "resolution": int, "lowres_channels": int, "channels": _ints, "res_blocks": _ints,
        "self_attention": _bools, "cross_attention": _bools, "conditioning": str,
        "emb_dim": int, "heads": int,
    },
    "train": {
        "epochs": int, "batch_size": int, "lr": float, "warmup_steps": int, "optimizer": str,
        "p_drop": float, "grad_clip": float, "aug": str, "aug_level": float,
    },
    "data": {"n": int, "n_reference": int},
    "guidance": {"w": float, "threshold": str, "p": float},
    "sampler": {"kind": str, "steps": int, "gamma": float},
    "sr": {"aug_level": float},
    "sample": {"n": int, "prompt": str},
    "sweep": {"weights": _floats, "n": int},
    "paths": {"checkpoint": Path, "data": Path, "ratings": Path},
}
STAGE_KEYS = {
    "role": str, "in_res": int, "out_res": int, "checkpoint": Path, "w": float, "threshold": str,
    "p": float, "sampler": str, "steps": int, "gamma": float, "aug_level": float, "prompt": str,
}
_STAGE_RE = re.compile(r"stage\.(\d+)$")


@dataclass
class StageConfig:
    index: int
    role: str
    out_res: int
    checkpoint: Path
    guidance: GuidanceConfig
    sampler: SamplerConfig
    in_res: int | None = None
    aug_level: float = 0.0
    prompt: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    schedule: Schedule = field(default_factory=Schedule)
    model: ToyUNetConfig = field(default_factory=ToyUNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_data: int = 4096
    n_reference: int = 1024
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    sr_aug_level: float = 0.0
    sample_n: int = 8
    sample_prompt: str = "red left"
    sweep_weights: tuple[float, ...] = DEFAULT_WEIGHTS
    sweep_n: int = 64
    paths: dict[str, Path] = field(default_factory=dict)
    stages: list[StageConfig] = field(default_factory=list)


def _model_config(values: dict) -> ToyUNetConfig:
    base = ToyUNetConfig()
    chans = values.get("channels", tuple(b.channels for b in base.blocks))
    n = len(chans)

    def per_block(key, default):
        v = values.get(key)
        if v is None:
            return default
        if len(v) != n:
            raise ConfigError(f"model.{key} needs {n} entries, got {len(v)}")
        return v

    res = per_block("res_blocks", tuple(b.num_res_blocks for b in base.blocks) if n == len(base.blocks) else (1,) * n)
    sa = per_block("self_attention", (False,) * (n - 1) + (True,))
    ca = per_block("cross_attention", (False,) * (n - 1) + (True,))
    blocks = tuple(BlockSpec(c, r, s, x) for c, r, s, x in zip(chans, res, sa, ca))
    kw = {k: values[k] for k in ("resolution", "lowres_channels", "conditioning", "emb_dim", "heads") if k in values}
    return ToyUNetConfig(blocks=blocks, **kw)


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    """Parse and validate config text; raises :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None, strict=True, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from exc
    base_dir = Path(base_dir or ".")
    values: dict[str, dict] = {}
    stage_values: dict[int, dict] = {}
    for section in parser.sections():
        m = _STAGE_RE.match(section)
        schema = STAGE_KEYS if m else SCHEMA.get(section)
        if schema is None:
            raise ConfigError(f"unknown section [{section}]")
        parsed = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                parsed[key] = schema[key](raw.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
            if schema[key] is Path:
                p = parsed[key] if parsed[key].is_absolute() else base_dir / parsed[key]
                if not p.exists():
                    raise ConfigError(f"{section}.{key}: path not found: {p}")
                parsed[key] = p
        if m:
            stage_values[int(m.group(1))] = parsed
        else:
            values[section] = parsed

    g = lambda sec: values.get(sec, {})  # noqa: E731
    try:
        sched = g("schedule")
        cfg = RunConfig(
            seed=g("run").get("seed", 0),
            schedule=Schedule(sched.get("kind", "cosine"), sched.get("beta_start", 1e-4),
                              sched.get("beta_end", 0.02), sched.get("steps", 1000)),
            model=_model_config(g("model")),
            train=TrainConfig(**g("train")),
            n_data=g("data").get("n", 4096),
            n_reference=g("data").get("n_reference", 1024),
            guidance=GuidanceConfig(**g("guidance")),
            sampler=SamplerConfig(**g("sampler")),
            sr_aug_level=g("sr").get("aug_level", 0.0),
            sample_n=g("sample").get("n", 8),
            sample_prompt=g("sample").get("prompt", "red left"),
            sweep_weights=g("sweep").get("weights", DEFAULT_WEIGHTS),
            sweep_n=g("sweep").get("n", 64),
            paths=g("paths"),
        )
        for idx in sorted(stage_values):
            cfg.stages.append(_stage(idx, stage_values[idx]))
    except (DomainError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if not 0.0 <= cfg.sr_aug_level <= 1.0:
        raise ConfigError("sr.aug_level must be in [0, 1]")
    return cfg


def _stage(idx: int, v: dict) -> StageConfig:
    for key in ("role", "out_res", "checkpoint"):
        if key not in v:
            raise ConfigError(f"stage.{idx}.{key} is required")
    role = {"base": "base", "sr": "super_res", "super_res": "super_res"}.get(v["role"])
    if role is None:
        raise ConfigError(f"stage.{idx}.role must be base or super_res")
    return StageConfig(
        index=idx,
        role=role,
        out_res=v["out_res"],
        checkpoint=v["checkpoint"],
        guidance=GuidanceConfig(v.get("w", 1.0), v.get("threshold", "dynamic"), v.get("p", 99.5)),
        sampler=SamplerConfig(v.get("sampler", "ddim"), v.get("steps", 32), v.get("gamma", 0.0)),
        in_res=v.get("in_res"),
        aug_level=v.get("aug_level", 0.0),
        prompt=v.get("prompt"),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, path.parent)
