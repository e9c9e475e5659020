"""Run configuration: a flat, diff-friendly INI file mapped onto a dataclass.

Three sections — [model], [loss], [train] — cover the generator topology,
the loss weights / discriminator setup, and the optimization loop. Unknown
sections or keys are rejected so typos fail loudly. ``parse_config`` and
``serialize_config`` round-trip exactly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields
from pathlib import Path

from .attention import PyramidSpec
from .generator import GeneratorConfig
from .tensor import ContractError

__all__ = ["RunConfig", "desk_config", "parse_config", "serialize_config",
           "load_config", "save_config"]


@dataclass(frozen=True)
class RunConfig:
    # [model]
    variant: str = "xingpp"
    t_stages: int | None = None
    channels: int = 64
    height: int = 64
    width: int = 32
    n_candidates: int = 10
    pyramid: tuple[int, ...] | None = None
    fusion_mode: str = "dccaf"
    # [loss]
    lambda_gan: float = 5.0
    lambda_l1: float = 50.0
    lambda_p: float = 50.0
    gan_mode: str = "bce"
    disc_base: int = 64
    # [train]
    seed: int = 0
    iters: int = 500
    batch: int = 8
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eval_every: int = 50
    ckpt_every: int = 100
    holdout: int = 32
    checkpoint_dir: str = "runs/desk"
    log_path: str = ""
    resume: str = ""

    def __post_init__(self):
        if self.lambda_gan < 0 or self.lambda_l1 < 0 or self.lambda_p < 0:
            raise ContractError("loss weights must be >= 0")
        if self.gan_mode not in ("bce", "lsgan"):
            raise ContractError(f"gan_mode must be bce or lsgan, got {self.gan_mode!r}")
        if self.iters < 0 or self.batch < 1 or self.holdout < 0:
            raise ContractError("iters >= 0, batch >= 1, holdout >= 0 required")
        if self.eval_every < 1 or self.ckpt_every < 1:
            raise ContractError("eval_every and ckpt_every must be >= 1")
        if self.disc_base < 1:
            raise ContractError("disc_base must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.lr <= 0:
            raise ContractError("need 0 <= beta < 1 and lr > 0")
        self.generator_config()  # validates the model fields

    def generator_config(self) -> GeneratorConfig:
        pyr = PyramidSpec(self.pyramid) if self.pyramid is not None else None
        return GeneratorConfig(
            variant=self.variant,
            t_stages=self.t_stages,
            c=self.channels,
            h=self.height,
            w=self.width,
            n_candidates=self.n_candidates,
            pyramid=pyr,
            fusion_mode=self.fusion_mode,
        )

    def metrics_path(self) -> Path:
        if self.log_path:
            return Path(self.log_path)
        return Path(self.checkpoint_dir) / "metrics.csv"


def desk_config(**overrides) -> RunConfig:
    """Desk-scale preset: the 500-iteration single-workstation recipe.

    Model scale (xingpp, T=2, c=32, 64x32, N=3) and budget (batch 8,
    500 iterations, seed 0) are sized so a full run finishes in minutes on
    one CPU core while still clearly beating the copy baseline. Keyword
    overrides replace any field.
    """
    base = dict(variant="xingpp", t_stages=2, channels=32, height=64,
                width=32, n_candidates=3, disc_base=16, seed=0, iters=500,
                batch=8, eval_every=50, ckpt_every=100, holdout=32,
                checkpoint_dir="runs/desk")
    base.update(overrides)
    return RunConfig(**base)


# section -> (field, parser) ; parser turns the raw string into the field value
def _opt_int(s: str):
    return int(s) if s else None


def _opt_pyramid(s: str):
    return tuple(int(t) for t in s.split(",")) if s else None


_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "model": {
        "variant": ("variant", str),
        "t_stages": ("t_stages", _opt_int),
        "channels": ("channels", int),
        "height": ("height", int),
        "width": ("width", int),
        "n_candidates": ("n_candidates", int),
        "pyramid": ("pyramid", _opt_pyramid),
        "fusion_mode": ("fusion_mode", str),
    },
    "loss": {
        "lambda_gan": ("lambda_gan", float),
        "lambda_l1": ("lambda_l1", float),
        "lambda_p": ("lambda_p", float),
        "gan_mode": ("gan_mode", str),
        "disc_base": ("disc_base", int),
    },
    "train": {
        "seed": ("seed", int),
        "iters": ("iters", int),
        "batch": ("batch", int),
        "lr": ("lr", float),
        "beta1": ("beta1", float),
        "beta2": ("beta2", float),
        "eval_every": ("eval_every", int),
        "ckpt_every": ("ckpt_every", int),
        "holdout": ("holdout", int),
        "checkpoint_dir": ("checkpoint_dir", str),
        "log_path": ("log_path", str),
        "resume": ("resume", str),
    },
}


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a RunConfig; unknown sections/keys are errors."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ContractError(f"config parse error: {exc}") from exc
    kwargs = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ContractError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ContractError(f"unknown config key {key!r} in [{section}]")
            field_name, conv = _SCHEMA[section][key]
            try:
                kwargs[field_name] = conv(raw)
            except ValueError as exc:
                raise ContractError(f"bad value for {section}.{key}: {raw!r}") from exc
    return RunConfig(**kwargs)


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    by_field = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (field_name, _) in keys.items():
            out.write(f"{key} = {_format_value(by_field[field_name])}\n")
        out.write("\n")
    return out.getvalue()


def load_config(path) -> RunConfig:
    # Unreadable file is an I/O failure (OSError), not a validation failure;
    # the two map to different process exit codes.
    return parse_config(Path(path).read_text())


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(serialize_config(cfg))
