"""Cross-attention blocks between appearance and shape feature streams.

Two single-scale blocks update the streams each generator stage:

- SA: the shape code guides an update of the appearance code through an
  n x n position-correlation matrix (n = h*w), applied residually with a
  learned gain ``alpha`` that starts at exactly 0.
- AS: the previous appearance code guides the shape code the same way
  (gain ``beta``), then the result is fused with the *updated* appearance
  code by a 3x3 convolution over the channel concat.

The enhanced multi-scale variants (EMSA/EMAS) compute correlations at
several pyramid-pooled resolutions, refine each raw correlation map with an
external-attention consensus step (EA) before normalization, upsample the
per-scale results, and merge them with a 1x1 convolution, again residually.

All forward functions accept [c,h,w] or batched [b,c,h,w] tensors and
preserve the input rank. Correlation rows are distributions over guiding
positions: row j weights position i of the guiding code for output
position j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .nn import Conv2dParams, LayerNormParams, LinearParams, scalar_param
from .tensor import ContractError, Parameter, ShapeError, Tensor

__all__ = [
    "SAParams",
    "ASParams",
    "PyramidSpec",
    "EAParams",
    "EMSAParams",
    "EMASParams",
    "CorrelationMap",
    "sa_forward",
    "as_forward",
    "pyramid_pool",
    "ea_refine",
    "emsa_forward",
    "emas_forward",
    "scale_level_mix",
    "attention_oracle",
]


def _lift(x: Tensor):
    """Return (4-d tensor, had_batch_dim)."""
    if x.ndim == 3:
        c, h, w = x.shape
        return tz.reshape(x, (1, c, h, w)), False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"expected [c,h,w] or [b,c,h,w], got {x.shape}")


def _drop(x: Tensor, batched: bool) -> Tensor:
    return x if batched else tz.reshape(x, x.shape[1:])


def _same_shape(*tensors):
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"stream shapes differ: {ref} vs {t.shape}")


# ---------------------------------------------------------------------------
# single-scale blocks
# ---------------------------------------------------------------------------

@dataclass
class SAParams:
    """Shape-guided appearance update: three 1x1 projections and a gain."""

    conv_a: Conv2dParams
    conv_b: Conv2dParams
    conv_c: Conv2dParams
    alpha: Parameter  # scalar, must start at exactly 0

    @classmethod
    def init(cls, name: str, c: int, rng: np.random.Generator) -> "SAParams":
        return cls(
            conv_a=Conv2dParams.init(f"{name}.conv_a", c, c, 1, rng),
            conv_b=Conv2dParams.init(f"{name}.conv_b", c, c, 1, rng),
            conv_c=Conv2dParams.init(f"{name}.conv_c", c, c, 1, rng),
            alpha=scalar_param(f"{name}.alpha", 0.0),
        )

    def params(self):
        return [*self.conv_a.params(), *self.conv_b.params(), *self.conv_c.params(), self.alpha]


@dataclass
class ASParams:
    """Appearance-guided shape update plus fusion with the updated appearance."""

    conv_d: Conv2dParams
    conv_e: Conv2dParams
    conv_h: Conv2dParams
    beta: Parameter
    fuse_conv: Conv2dParams  # 3x3, 2c -> c

    @classmethod
    def init(cls, name: str, c: int, rng: np.random.Generator) -> "ASParams":
        return cls(
            conv_d=Conv2dParams.init(f"{name}.conv_d", c, c, 1, rng),
            conv_e=Conv2dParams.init(f"{name}.conv_e", c, c, 1, rng),
            conv_h=Conv2dParams.init(f"{name}.conv_h", c, c, 1, rng),
            beta=scalar_param(f"{name}.beta", 0.0),
            fuse_conv=Conv2dParams.init(f"{name}.fuse", 2 * c, c, 3, rng, pad=1),
        )

    def params(self):
        return [*self.conv_d.params(), *self.conv_e.params(), *self.conv_h.params(),
                self.beta, *self.fuse_conv.params()]


def _flatten_hw(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    return tz.reshape(x, (b, c, h * w))


def _correlate(query_feats: Tensor, key_feats: Tensor) -> Tensor:
    """Raw correlation logits [b,n,n]: row j = query position j against keys."""
    return tz.matmul(tz.transpose2d(query_feats), key_feats)


def _apply_attention(values: Tensor, corr: Tensor) -> Tensor:
    """Weighted value mix [b,c,n]: output column j = sum_i corr[j,i] * values[:,i]."""
    return tz.matmul(values, tz.transpose2d(corr))


def sa_forward(f_i: Tensor, f_p: Tensor, params: SAParams) -> Tensor:
    """out = alpha * (values from F_I mixed by the F_I->F_P correlation) + F_I."""
    _same_shape(f_i, f_p)
    x_i, batched = _lift(f_i)
    x_p, _ = _lift(f_p)
    b, c, h, w = x_i.shape

    cq = _flatten_hw(params.conv_c(x_i))
    bk = _flatten_hw(params.conv_b(x_p))
    corr = tz.softmax(_correlate(cq, bk), axis=-1)
    av = _flatten_hw(params.conv_a(x_i))
    mixed = tz.reshape(_apply_attention(av, corr), (b, c, h, w))
    return _drop(params.alpha.value * mixed + x_i, batched)


def as_forward(f_p: Tensor, f_i_prev: Tensor, f_i_new: Tensor, params: ASParams) -> Tensor:
    """Shape update guided by the previous appearance code, fused with the new one."""
    _same_shape(f_p, f_i_prev, f_i_new)
    x_p, batched = _lift(f_p)
    x_prev, _ = _lift(f_i_prev)
    x_new, _ = _lift(f_i_new)
    b, c, h, w = x_p.shape

    hq = _flatten_hw(params.conv_h(x_p))
    ek = _flatten_hw(params.conv_e(x_prev))
    corr = tz.softmax(_correlate(hq, ek), axis=-1)
    dv = _flatten_hw(params.conv_d(x_p))
    mixed = tz.reshape(_apply_attention(dv, corr), (b, c, h, w))
    pre_cat = params.beta.value * mixed + x_p
    return _drop(params.fuse_conv(tz.concat([pre_cat, x_new], axis=1)), batched)


# ---------------------------------------------------------------------------
# pyramid pooling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PyramidSpec:
    """Downsample factors; factor 1 keeps full resolution."""

    scale_factors: tuple = (1, 2, 3, 6)

    def __post_init__(self):
        f = tuple(int(s) for s in self.scale_factors)
        object.__setattr__(self, "scale_factors", f)
        if not f or f[0] != 1:
            raise ContractError(f"scale factors must start with 1, got {f}")
        if any(b <= a for a, b in zip(f, f[1:])) or any(s < 1 for s in f):
            raise ContractError(f"scale factors must be strictly increasing positive ints: {f}")

    def level_shape(self, h: int, w: int, s: int) -> tuple:
        return math.ceil(h / s), math.ceil(w / s)

    def token_counts(self, h: int, w: int) -> list:
        return [hh * ww for hh, ww in
                (self.level_shape(h, w, s) for s in self.scale_factors)]


def pyramid_pool(x: Tensor, spec: PyramidSpec) -> list:
    """Adaptive-average pool at every factor; factor 1 returns x itself."""
    x4, batched = _lift(x)
    _, _, h, w = x4.shape
    out = []
    for s in spec.scale_factors:
        if s == 1:
            out.append(x)
            continue
        hh, ww = spec.level_shape(h, w, s)
        out.append(_drop(tz.adaptive_avg_pool2d(x4, hh, ww), batched))
    return out


# ---------------------------------------------------------------------------
# EA refinement of correlation maps
# ---------------------------------------------------------------------------

@dataclass
class CorrelationMap:
    """Square position-correlation matrix; normalized means row-stochastic."""

    values: Tensor  # [n,n] or [b,n,n]
    normalized: bool = False

    def __post_init__(self):
        shape = self.values.shape
        if len(shape) not in (2, 3) or shape[-1] != shape[-2]:
            raise ShapeError(f"correlation map must be square, got {shape}")

    @property
    def n(self) -> int:
        return self.values.shape[-1]


@dataclass
class EAParams:
    """Consensus refinement over the columns of a raw correlation map.

    Each of the n columns is treated as an n-vector; columns attend to each
    other through a reduced d_e-dimensional key/query space, and the
    attended result is added back before row normalization.
    """

    n: int
    d_e: int
    reduce: LinearParams        # n -> d_e over the vector dim
    ln_kq: LayerNormParams      # over d_e
    ln_v: LayerNormParams       # over n
    proj_k: LinearParams        # d_e -> d_e
    proj_q: LinearParams        # d_e -> d_e
    out: LinearParams           # n -> n

    @classmethod
    def init(cls, name: str, n: int, rng: np.random.Generator, d_e: int | None = None) -> "EAParams":
        d_e = min(n, 64) if d_e is None else d_e
        if d_e > n:
            raise ContractError(f"EA reduced dim {d_e} must be <= n {n}")
        return cls(
            n=n,
            d_e=d_e,
            reduce=LinearParams.init(f"{name}.reduce", n, d_e, rng),
            ln_kq=LayerNormParams.init(f"{name}.ln_kq", d_e),
            ln_v=LayerNormParams.init(f"{name}.ln_v", n),
            proj_k=LinearParams.init(f"{name}.proj_k", d_e, d_e, rng),
            proj_q=LinearParams.init(f"{name}.proj_q", d_e, d_e, rng),
            out=LinearParams.init(f"{name}.out", n, n, rng),
        )

    def params(self):
        return [*self.reduce.params(), *self.ln_kq.params(), *self.ln_v.params(),
                *self.proj_k.params(), *self.proj_q.params(), *self.out.params()]


def _ea_apply(p_hat: Tensor, params: EAParams) -> Tensor:
    """Refine raw logits P-hat -> row-stochastic map (rank-preserving)."""
    if p_hat.shape[-1] != p_hat.shape[-2]:
        raise ShapeError(f"EA input must be square, got {p_hat.shape}")
    if p_hat.shape[-1] != params.n:
        raise ShapeError(f"EA params built for n={params.n}, got {p_hat.shape}")
    vec_axis = p_hat.ndim - 2  # the "column vector" dimension

    reduced = params.reduce(p_hat)                 # [., d_e, n]
    kq = params.ln_kq(reduced, axis=vec_axis)
    k = params.proj_k(kq)
    q = params.proj_q(kq)
    # att[i, j] = softmax over i of K_i . Q_j: how much column j listens to column i
    att = tz.softmax(tz.matmul(tz.transpose2d(k), q), axis=vec_axis)
    v = params.ln_v(p_hat, axis=vec_axis)
    ea1 = tz.matmul(v, att)                        # column j = sum_i att[i,j] * V[:,i]
    ea2 = ea1 + params.out(ea1)
    return tz.softmax(ea2 + p_hat, axis=-1)


def ea_refine(corr_raw: CorrelationMap, params: EAParams) -> CorrelationMap:
    """Public wrapper: unnormalized logits in, row-stochastic map out."""
    return CorrelationMap(values=_ea_apply(corr_raw.values, params), normalized=True)


# ---------------------------------------------------------------------------
# enhanced multi-scale blocks
# ---------------------------------------------------------------------------

@dataclass
class _ScaleParams:
    conv_a: Conv2dParams
    conv_b: Conv2dParams
    conv_c: Conv2dParams
    ea: EAParams

    def params(self):
        return [*self.conv_a.params(), *self.conv_b.params(),
                *self.conv_c.params(), *self.ea.params()]


def _init_scales(name, c, h, w, spec, rng, d_e):
    scales = []
    for s in spec.scale_factors:
        hh, ww = spec.level_shape(h, w, s)
        n_k = hh * ww
        scales.append(_ScaleParams(
            conv_a=Conv2dParams.init(f"{name}.s{s}.conv_a", c, c, 1, rng),
            conv_b=Conv2dParams.init(f"{name}.s{s}.conv_b", c, c, 1, rng),
            conv_c=Conv2dParams.init(f"{name}.s{s}.conv_c", c, c, 1, rng),
            ea=EAParams.init(f"{name}.s{s}.ea", n_k, rng,
                             d_e=None if d_e is None else min(d_e, n_k)),
        ))
    return scales


@dataclass
class EMSAParams:
    """Per-scale SA projections + EA, merged by a 1x1 conv, gained by alpha."""

    scales: list
    merge_conv: Conv2dParams  # 1x1, len(scales)*c -> c
    alpha: Parameter
    spec: PyramidSpec

    @classmethod
    def init(cls, name, c, h, w, spec: PyramidSpec, rng, d_e: int | None = None) -> "EMSAParams":
        return cls(
            scales=_init_scales(name, c, h, w, spec, rng, d_e),
            merge_conv=Conv2dParams.init(f"{name}.merge", len(spec.scale_factors) * c, c, 1, rng),
            alpha=scalar_param(f"{name}.alpha", 0.0),
            spec=spec,
        )

    def params(self):
        out = []
        for s in self.scales:
            out.extend(s.params())
        return [*out, *self.merge_conv.params(), self.alpha]


@dataclass
class EMASParams:
    """EMSA structure on the shape stream plus the AS-style fusion tail."""

    scales: list
    merge_conv: Conv2dParams
    beta: Parameter
    fuse_conv: Conv2dParams  # 3x3, 2c -> c
    spec: PyramidSpec

    @classmethod
    def init(cls, name, c, h, w, spec: PyramidSpec, rng, d_e: int | None = None) -> "EMASParams":
        return cls(
            scales=_init_scales(name, c, h, w, spec, rng, d_e),
            merge_conv=Conv2dParams.init(f"{name}.merge", len(spec.scale_factors) * c, c, 1, rng),
            beta=scalar_param(f"{name}.beta", 0.0),
            fuse_conv=Conv2dParams.init(f"{name}.fuse", 2 * c, c, 3, rng, pad=1),
            spec=spec,
        )

    def params(self):
        out = []
        for s in self.scales:
            out.extend(s.params())
        return [*out, *self.merge_conv.params(), self.beta, *self.fuse_conv.params()]


def scale_level_mix(query_stream: Tensor, key_stream: Tensor, sp, s: int,
                    spec: PyramidSpec) -> Tensor:
    """One pyramid level: pool, project, attend (with EA), mix, upsample."""
    b, c, h, w = query_stream.shape
    if s == 1:
        q_k, k_k = query_stream, key_stream
        hh, ww = h, w
    else:
        hh, ww = spec.level_shape(h, w, s)
        q_k = tz.adaptive_avg_pool2d(query_stream, hh, ww)
        k_k = tz.adaptive_avg_pool2d(key_stream, hh, ww)
    cq = _flatten_hw(sp.conv_c(q_k))
    bk = _flatten_hw(sp.conv_b(k_k))
    corr = _ea_apply(_correlate(cq, bk), sp.ea)
    av = _flatten_hw(sp.conv_a(q_k))
    mixed = tz.reshape(_apply_attention(av, corr), (b, c, hh, ww))
    return mixed if s == 1 else tz.upsample_bilinear(mixed, h, w)


def _multi_scale_mix(query_stream: Tensor, key_stream: Tensor, scales, spec: PyramidSpec) -> Tensor:
    """Shared EMSA/EMAS body: per-scale attention, upsample, channel concat."""
    maps = [scale_level_mix(query_stream, key_stream, sp, s, spec)
            for sp, s in zip(scales, spec.scale_factors)]
    return tz.concat(maps, axis=1)


def emsa_forward(f_i: Tensor, f_p: Tensor, params: EMSAParams, spec: PyramidSpec | None = None) -> Tensor:
    _same_shape(f_i, f_p)
    spec = spec or params.spec
    x_i, batched = _lift(f_i)
    x_p, _ = _lift(f_p)
    mix = _multi_scale_mix(x_i, x_p, params.scales, spec)
    return _drop(params.alpha.value * params.merge_conv(mix) + x_i, batched)


def emas_forward(f_p: Tensor, f_i_prev: Tensor, f_i_new: Tensor,
                 params: EMASParams, spec: PyramidSpec | None = None) -> Tensor:
    _same_shape(f_p, f_i_prev, f_i_new)
    spec = spec or params.spec
    x_p, batched = _lift(f_p)
    x_prev, _ = _lift(f_i_prev)
    x_new, _ = _lift(f_i_new)
    mix = _multi_scale_mix(x_p, x_prev, params.scales, spec)
    pre_cat = params.beta.value * params.merge_conv(mix) + x_p
    return _drop(params.fuse_conv(tz.concat([pre_cat, x_new], axis=1)), batched)


# ---------------------------------------------------------------------------
# scalar-loop oracle
# ---------------------------------------------------------------------------

def attention_oracle(c_mat: np.ndarray, b_mat: np.ndarray, a_mat: np.ndarray,
                     alpha: float, residual: np.ndarray) -> np.ndarray:
    """Reference for the correlate-normalize-mix-residual pattern.

    Explicit scalar loops over positions, no matrix algebra. c_mat plays the
    query projection, b_mat the key projection, a_mat the value projection;
    all are [c, n] with n <= 64.
    """
    c, n = c_mat.shape
    if n > 64:
        raise ContractError(f"oracle is for small n (<= 64), got {n}")
    out = np.zeros((c, n))
    for j in range(n):
        logits = np.zeros(n)
        for i in range(n):
            acc = 0.0
            for d in range(c):
                acc += c_mat[d, j] * b_mat[d, i]
            logits[i] = acc
        m = logits.max()
        weights = np.exp(logits - m)
        weights /= weights.sum()
        for ch in range(c):
            acc = 0.0
            for i in range(n):
                acc += weights[i] * a_mat[ch, i]
            out[ch, j] = alpha * acc + residual[ch, j]
    return out
