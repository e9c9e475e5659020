"""Co-attention fusion: decode candidate images, weight them per pixel.

Each stream's stage codes are channel-concatenated and decoded into N
candidate RGB images (Tanh range). A 1x1 convolution over the stacked codes
of both streams produces 2N+1 attention logits which, after upsampling to
image resolution and a channel softmax, convexly combine the N appearance
candidates, the N shape candidates, and the source image itself.

The densely connected mode consumes codes from every generator stage; the
plain mode consumes only the last stage's codes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .nn import Conv2dParams
from .tensor import ContractError, ShapeError, Tensor

__all__ = [
    "FusionConfig",
    "DecoderParams",
    "CoAttentionParams",
    "decode_intermediates",
    "co_attention",
    "compose",
]


@dataclass(frozen=True)
class FusionConfig:
    n_candidates: int = 10      # N candidate images per stream
    mode: str = "dccaf"         # dccaf: all-stage codes; caf: last stage only

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ContractError(f"N must be >= 1, got {self.n_candidates}")
        if self.mode not in ("dccaf", "caf"):
            raise ContractError(f"fusion mode must be dccaf or caf, got {self.mode!r}")

    def codes_consumed(self, t_stages: int) -> int:
        return t_stages + 1 if self.mode == "dccaf" else 1


@dataclass
class DecoderParams:
    """Two x2-upsample+conv stages then a 3x3 conv to N*3 Tanh channels."""

    conv1: Conv2dParams  # 3x3, in_ch -> width
    conv2: Conv2dParams  # 3x3, width -> width
    head: Conv2dParams   # 3x3, width -> N*3
    n_candidates: int

    @classmethod
    def init(cls, name: str, in_ch: int, n_candidates: int,
             rng: np.random.Generator, width: int | None = None) -> "DecoderParams":
        width = width or max(8, in_ch // 4)
        return cls(
            conv1=Conv2dParams.init(f"{name}.conv1", in_ch, width, 3, rng, pad=1),
            conv2=Conv2dParams.init(f"{name}.conv2", width, width, 3, rng, pad=1),
            head=Conv2dParams.init(f"{name}.head", width, n_candidates * 3, 3, rng, pad=1),
            n_candidates=n_candidates,
        )

    def params(self):
        return [*self.conv1.params(), *self.conv2.params(), *self.head.params()]


@dataclass
class CoAttentionParams:
    """1x1 conv from the stacked codes of both streams to 2N+1 logit maps."""

    conv: Conv2dParams
    n_candidates: int

    @classmethod
    def init(cls, name: str, stacked_ch: int, n_candidates: int,
             rng: np.random.Generator) -> "CoAttentionParams":
        return cls(
            conv=Conv2dParams.init(f"{name}.conv", stacked_ch, 2 * n_candidates + 1, 1, rng),
            n_candidates=n_candidates,
        )

    def params(self):
        return self.conv.params()


def _lift4(x: Tensor):
    if x.ndim == 3:
        return tz.reshape(x, (1, *x.shape)), False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"expected [c,h,w] or [b,c,h,w], got {x.shape}")


def _concat_codes(codes) -> tuple:
    if not codes:
        raise ContractError("code list is empty")
    lifted = [_lift4(c) for c in codes]
    batched = lifted[0][1]
    return tz.concat([t for t, _ in lifted], axis=1), batched


def decode_intermediates(codes, dec: DecoderParams, n_candidates: int) -> list:
    """Concat stage codes, decode to image resolution, split into N Tanh images."""
    if n_candidates != dec.n_candidates:
        raise ContractError(f"decoder built for N={dec.n_candidates}, asked for {n_candidates}")
    stacked, batched = _concat_codes(codes)
    _, _, hc, wc = stacked.shape

    x = tz.leaky_relu(dec.conv1(tz.upsample_bilinear(stacked, 2 * hc, 2 * wc)), 0.2)
    x = tz.leaky_relu(dec.conv2(tz.upsample_bilinear(x, 4 * hc, 4 * wc)), 0.2)
    imgs = tz.tanh(dec.head(x))
    parts = tz.split(imgs, [3] * n_candidates, axis=1)
    return [p if batched else tz.reshape(p, p.shape[1:]) for p in parts]


def co_attention(codes_i, codes_p, params: CoAttentionParams, n_candidates: int) -> Tensor:
    """2N+1 channel-softmaxed attention maps at image resolution."""
    if n_candidates != params.n_candidates:
        raise ContractError(f"co-attention built for N={params.n_candidates}, "
                            f"asked for {n_candidates}")
    if not codes_i or not codes_p:
        raise ContractError("code lists must be nonempty")
    stacked_i, batched = _concat_codes(codes_i)
    stacked_p, _ = _concat_codes(codes_p)
    if stacked_i.shape[-2:] != stacked_p.shape[-2:]:
        raise ShapeError(f"code spatial sizes differ: {stacked_i.shape} vs {stacked_p.shape}")

    stacked = tz.concat([stacked_i, stacked_p], axis=1)
    _, _, hc, wc = stacked.shape
    logits = tz.upsample_bilinear(params.conv(stacked), 4 * hc, 4 * wc)
    attn = tz.softmax(logits, axis=1)
    return attn if batched else tz.reshape(attn, attn.shape[1:])


def compose(apps, shapes, i_s: Tensor, attn: Tensor) -> Tensor:
    """Per-pixel convex combination of the 2N+1 candidates."""
    n = len(apps)
    if len(shapes) != n:
        raise ShapeError(f"candidate counts differ: {len(apps)} vs {len(shapes)}")
    a4, batched = _lift4(attn)
    if a4.shape[1] != 2 * n + 1:
        raise ShapeError(f"attention has {a4.shape[1]} channels, need {2 * n + 1}")
    i4, _ = _lift4(i_s)

    out = None
    for idx, img in enumerate([*apps, *shapes, i_s]):
        img4, _ = _lift4(img)
        if img4.shape[1] != 3 or img4.shape[-2:] != a4.shape[-2:]:
            raise ShapeError(f"candidate {idx} has shape {img4.shape}, "
                             f"attention is {a4.shape}")
        term = tz.narrow(a4, 1, idx, 1) * img4
        out = term if out is None else out + term
    return out if batched else tz.reshape(out, out.shape[1:])
