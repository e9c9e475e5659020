"""The full two-stream generator: encoders, T block stages, fusion.

Both streams are downsampled 4x by two stride-2 convolutions; the pose
stream encodes source and target heatmaps jointly (36 channels in) so the
correlation between the two poses is available from the first layer. Each
stage then updates the appearance code from the shape code and vice versa,
single-scale blocks in the base variant and multi-scale EA-refined blocks
in the extended one. Fusion decodes candidate images from the collected
stage codes and mixes them per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .attention import (
    ASParams,
    EMASParams,
    EMSAParams,
    PyramidSpec,
    SAParams,
    as_forward,
    emas_forward,
    emsa_forward,
    sa_forward,
)
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .fusion import (
    CoAttentionParams,
    DecoderParams,
    FusionConfig,
    co_attention,
    compose,
    decode_intermediates,
)
from .nn import Conv2dParams, check_unique_names
from .tensor import ContractError, ShapeError, Tensor

__all__ = [
    "GeneratorConfig",
    "EncoderParams",
    "GeneratorParams",
    "encode",
    "generator_forward",
    "save_generator",
    "load_generator",
    "config_to_arrays",
    "config_from_arrays",
]

VARIANTS = ("xing", "xingpp")


@dataclass(frozen=True)
class GeneratorConfig:
    variant: str = "xingpp"
    t_stages: int | None = None  # None -> 9 for xing, 5 for xingpp
    c: int = 64
    h: int = 64
    w: int = 32
    n_candidates: int = 10
    pyramid: PyramidSpec | None = None  # xingpp only; default (1,2,3,6)
    fusion_mode: str = "dccaf"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.t_stages is None:
            object.__setattr__(self, "t_stages", 9 if self.variant == "xing" else 5)
        if self.t_stages < 1:
            raise ContractError(f"t_stages must be >= 1, got {self.t_stages}")
        if self.variant == "xing":
            if self.pyramid is not None:
                raise ContractError("the base variant uses no pyramid")
        elif self.pyramid is None:
            object.__setattr__(self, "pyramid", PyramidSpec())
        if self.h % 4 or self.w % 4:
            raise ContractError(f"image size must be divisible by 4, got {self.h}x{self.w}")
        FusionConfig(self.n_candidates, self.fusion_mode)  # validates both

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(self.n_candidates, self.fusion_mode)

    @property
    def code_hw(self) -> tuple:
        return self.h // 4, self.w // 4


@dataclass
class EncoderParams:
    """Two stride-2 3x3 convs per stream; pose streams share one encoder."""

    img_conv1: Conv2dParams   # 3 -> c
    img_conv2: Conv2dParams   # c -> c
    pose_conv1: Conv2dParams  # 36 -> c
    pose_conv2: Conv2dParams  # c -> c

    @classmethod
    def init(cls, name: str, c: int, rng: np.random.Generator) -> "EncoderParams":
        return cls(
            img_conv1=Conv2dParams.init(f"{name}.img1", 3, c, 3, rng, stride=2, pad=1),
            img_conv2=Conv2dParams.init(f"{name}.img2", c, c, 3, rng, stride=2, pad=1),
            pose_conv1=Conv2dParams.init(f"{name}.pose1", 36, c, 3, rng, stride=2, pad=1),
            pose_conv2=Conv2dParams.init(f"{name}.pose2", c, c, 3, rng, stride=2, pad=1),
        )

    def params(self):
        return [*self.img_conv1.params(), *self.img_conv2.params(),
                *self.pose_conv1.params(), *self.pose_conv2.params()]


def _lift4(x: Tensor):
    if x.ndim == 3:
        return tz.reshape(x, (1, *x.shape)), False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"expected [c,h,w] or [b,c,h,w], got {x.shape}")


def encode(i_s: Tensor, p_s: Tensor, p_t: Tensor, enc: EncoderParams) -> tuple:
    """(appearance code, shape code) at quarter resolution."""
    x_i, batched = _lift4(i_s)
    x_ps, _ = _lift4(p_s)
    x_pt, _ = _lift4(p_t)
    _, ci, h, w = x_i.shape
    if ci != 3 or x_ps.shape[1] != 18 or x_pt.shape[1] != 18:
        raise ShapeError(
            f"need 3 image and 18+18 pose channels, got {ci}/{x_ps.shape[1]}/{x_pt.shape[1]}"
        )
    if x_ps.shape[-2:] != (h, w) or x_pt.shape[-2:] != (h, w):
        raise ShapeError("image and pose spatial sizes differ")
    if h % 4 or w % 4:
        raise ShapeError(f"spatial size must be divisible by 4, got {h}x{w}")

    f_i = tz.leaky_relu(enc.img_conv1(x_i), 0.2)
    f_i = tz.leaky_relu(enc.img_conv2(f_i), 0.2)
    poses = tz.concat([x_ps, x_pt], axis=1)
    f_p = tz.leaky_relu(enc.pose_conv1(poses), 0.2)
    f_p = tz.leaky_relu(enc.pose_conv2(f_p), 0.2)
    if not batched:
        f_i = tz.reshape(f_i, f_i.shape[1:])
        f_p = tz.reshape(f_p, f_p.shape[1:])
    return f_i, f_p


@dataclass
class GeneratorParams:
    config: GeneratorConfig
    encoder: EncoderParams
    stages: list  # [(appearance-update params, shape-update params)] per stage
    dec_i: DecoderParams
    dec_p: DecoderParams
    coatt: CoAttentionParams

    @classmethod
    def init(cls, config: GeneratorConfig, rng: np.random.Generator) -> "GeneratorParams":
        c = config.c
        ch, cw = config.code_hw
        stages = []
        for t in range(1, config.t_stages + 1):
            if config.variant == "xing":
                sa = SAParams.init(f"g.s{t}.sa", c, rng)
                as_ = ASParams.init(f"g.s{t}.as", c, rng)
            else:
                sa = EMSAParams.init(f"g.s{t}.sa", c, ch, cw, config.pyramid, rng)
                as_ = EMASParams.init(f"g.s{t}.as", c, ch, cw, config.pyramid, rng)
            stages.append((sa, as_))
        in_codes = config.fusion.codes_consumed(config.t_stages) * c
        gp = cls(
            config=config,
            encoder=EncoderParams.init("g.enc", c, rng),
            stages=stages,
            dec_i=DecoderParams.init("g.dec_i", in_codes, config.n_candidates, rng),
            dec_p=DecoderParams.init("g.dec_p", in_codes, config.n_candidates, rng),
            coatt=CoAttentionParams.init("g.coatt", 2 * in_codes, config.n_candidates, rng),
        )
        check_unique_names(gp.params())
        return gp

    def params(self):
        out = list(self.encoder.params())
        for sa, as_ in self.stages:
            out.extend(sa.params())
            out.extend(as_.params())
        out.extend(self.dec_i.params())
        out.extend(self.dec_p.params())
        out.extend(self.coatt.params())
        return out


def generator_forward(i_s: Tensor, p_s: Tensor, p_t: Tensor,
                      params: GeneratorParams, config: GeneratorConfig | None = None) -> tuple:
    """Full forward pass -> (generated image, diagnostics dict).

    Diagnostics carry the per-stage codes, the candidate images of both
    streams, and the attention maps, all still attached to the tape.
    """
    cfg = config or params.config
    f_i, f_p = encode(i_s, p_s, p_t, params.encoder)
    codes_i, codes_p = [f_i], [f_p]
    for sa, as_ in params.stages:
        if cfg.variant == "xing":
            f_i_new = sa_forward(f_i, f_p, sa)
            f_p = as_forward(f_p, f_i, f_i_new, as_)
        else:
            f_i_new = emsa_forward(f_i, f_p, sa)
            f_p = emas_forward(f_p, f_i, f_i_new, as_)
        f_i = f_i_new
        codes_i.append(f_i)
        codes_p.append(f_p)

    if cfg.fusion_mode == "dccaf":
        used_i, used_p = codes_i, codes_p
    else:
        used_i, used_p = [codes_i[-1]], [codes_p[-1]]
    apps = decode_intermediates(used_i, params.dec_i, cfg.n_candidates)
    shps = decode_intermediates(used_p, params.dec_p, cfg.n_candidates)
    attn = co_attention(used_i, used_p, params.coatt, cfg.n_candidates)
    img = compose(apps, shps, i_s, attn)
    diag = {
        "codes_i": codes_i,
        "codes_p": codes_p,
        "apps": apps,
        "shapes": shps,
        "attention": attn,
    }
    return img, diag


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_VARIANT_CODE = {"xing": 0.0, "xingpp": 1.0}
_MODE_CODE = {"dccaf": 0.0, "caf": 1.0}


def config_to_arrays(cfg: GeneratorConfig) -> dict:
    out = {
        "cfg.variant": np.asarray(_VARIANT_CODE[cfg.variant]),
        "cfg.t": np.asarray(float(cfg.t_stages)),
        "cfg.c": np.asarray(float(cfg.c)),
        "cfg.h": np.asarray(float(cfg.h)),
        "cfg.w": np.asarray(float(cfg.w)),
        "cfg.n": np.asarray(float(cfg.n_candidates)),
        "cfg.mode": np.asarray(_MODE_CODE[cfg.fusion_mode]),
    }
    if cfg.pyramid is not None:
        out["cfg.pyramid"] = np.asarray([float(s) for s in cfg.pyramid.scale_factors])
    return out


def config_from_arrays(arrays: dict) -> GeneratorConfig:
    try:
        variant = "xing" if arrays["cfg.variant"] == 0.0 else "xingpp"
        pyramid = None
        if "cfg.pyramid" in arrays and variant == "xingpp":
            pyramid = PyramidSpec(tuple(int(s) for s in np.atleast_1d(arrays["cfg.pyramid"])))
        return GeneratorConfig(
            variant=variant,
            t_stages=int(arrays["cfg.t"]),
            c=int(arrays["cfg.c"]),
            h=int(arrays["cfg.h"]),
            w=int(arrays["cfg.w"]),
            n_candidates=int(arrays["cfg.n"]),
            pyramid=pyramid,
            fusion_mode="dccaf" if arrays["cfg.mode"] == 0.0 else "caf",
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks a model config record: {exc}") from exc


def load_params_into(params, arrays: dict) -> None:
    """Copy arrays into existing Parameters by name, shape-checked."""
    for p in params:
        if p.name not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {p.name}")
        arr = arrays[p.name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"parameter {p.name}: checkpoint shape {arr.shape} != model {p.data.shape}"
            )
        p.data = arr


def save_generator(path, gparams: GeneratorParams, extra: dict | None = None) -> None:
    arrays = config_to_arrays(gparams.config)
    if extra:
        arrays.update(extra)
    for p in gparams.params():
        arrays[p.name] = p.data
    save_arrays(path, arrays)


def load_generator(path) -> tuple:
    """Rebuild a generator from a checkpoint -> (params, all raw arrays)."""
    arrays = load_arrays(path)
    cfg = config_from_arrays(arrays)
    gp = GeneratorParams.init(cfg, np.random.default_rng(0))
    load_params_into(gp.params(), arrays)
    return gp, arrays
