"""Named finite-difference checks for every op and block, plus the composite
training loss. ``run_suite`` evaluates each check at toy shapes, reports one
line per check, and is the engine behind the ``gradcheck`` CLI command.

Tolerances: 1e-5 for individual ops and blocks, 1e-4 for the full composite
loss (a product of many ops, so roundoff accumulates).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adversarial as adv
from . import attention as attn
from . import fusion as fus
from . import generator as gen
from . import tensor as tz
from .attention import PyramidSpec
from .config import RunConfig
from .tensor import Tensor

__all__ = ["CheckResult", "run_suite", "OP_TOL", "COMPOSITE_TOL"]

OP_TOL = 1e-5
COMPOSITE_TOL = 1e-4

# toy shapes: feature maps c=4..8 at 8x6, images 32x24 (code grid 8x6)
_C, _H, _W = 6, 8, 6
_IMG_H, _IMG_W = 32, 24


@dataclass(frozen=True)
class CheckResult:
    name: str
    err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.err <= self.tol


def _rng(tag: int) -> np.random.Generator:
    return np.random.default_rng(90_000 + tag)


def _probe(tag: int, shape) -> Tensor:
    return Tensor(_rng(tag).normal(size=shape))


def _away_from_zero(tag: int, shape, low=0.5, high=1.5) -> Tensor:
    r = _rng(tag)
    signs = np.where(r.uniform(size=shape) < 0.5, -1.0, 1.0)
    return Tensor(signs * r.uniform(low, high, size=shape))


def _check_arithmetic() -> float:
    y = _probe(1, (4, 5))

    def f(x):
        return tz.tsum((x + y) * (x - y) * 0.5 + x * x)

    return tz.grad_check(f, _probe(2, (4, 5)))


def _check_matmul() -> float:
    a = _probe(3, (3, 4, 5))

    def f(x):
        return tz.tsum(tz.matmul(a, tz.transpose2d(x)))

    return tz.grad_check(f, _probe(4, (3, 6, 5)))


def _check_concat() -> float:
    other = _probe(5, (2, 3, 4))

    def f(x):
        joined = tz.concat([x, other], axis=1)
        return tz.tmean(joined * joined)

    return tz.grad_check(f, _probe(6, (2, 2, 4)))


def _unary_check(op, tag: int, away: bool = False):
    def run() -> float:
        def f(x):
            return tz.tmean(op(x) * _probe(tag + 1, (_C, _H, _W)).data)

        x0 = _away_from_zero(tag, (_C, _H, _W)) if away else _probe(tag, (_C, _H, _W))
        return tz.grad_check(f, x0)

    return run


def _check_reductions() -> float:
    def f(x):
        return tz.tsum(tz.tmean(x, axis=2) * 2.0) + tz.tmean(x)

    return tz.grad_check(f, _probe(20, (3, 5, 4)))


def _check_softmax() -> float:
    def f(x):
        y = tz.softmax(x, axis=-1)
        return tz.tmean(y * _probe(22, (5, 7)).data)

    return tz.grad_check(f, _probe(21, (5, 7)))


def _check_layer_norm() -> float:
    gamma = _probe(23, (7,))
    beta = _probe(24, (7,))

    def f(x):
        y = tz.layer_norm(x, 1, gamma, beta)
        return tz.tmean(y * y)

    return tz.grad_check(f, _probe(25, (4, 7, 3)))


def _conv_check(stride: int, tag: int):
    def run() -> float:
        w = _probe(tag, (5, _C, 3, 3))
        b = _probe(tag + 1, (5,))

        def f(x):
            y = tz.conv2d(x, w, b, stride=stride, pad=1)
            return tz.tmean(y * y)

        return tz.grad_check(f, _probe(tag + 2, (1, _C, _H, _W)))

    return run


def _check_pool() -> float:
    def f(x):
        y = tz.adaptive_avg_pool2d(x, 3, 2)
        return tz.tmean(y * y)

    return tz.grad_check(f, _probe(30, (1, _C, _H, _W)))


def _check_upsample() -> float:
    def f(x):
        y = tz.upsample_bilinear(x, 2 * _H, 2 * _W)
        return tz.tmean(y * y)

    return tz.grad_check(f, _probe(31, (1, _C, 4, 3)))


def _sa_block() -> float:
    prm = attn.SAParams.init("sa", _C, _rng(40))
    prm.alpha.value.data = np.asarray(0.5)
    f_p = _probe(41, (_C, _H, _W))

    def f(x):
        y = attn.sa_forward(x, f_p, prm)
        return tz.tmean(y * y)

    return tz.grad_check(f, _probe(42, (_C, _H, _W)), eps=1e-4)


def _as_block() -> float:
    prm = attn.ASParams.init("as", _C, _rng(43))
    prm.beta.value.data = np.asarray(0.5)
    f_i_prev = _probe(44, (_C, _H, _W))
    f_i_new = _probe(45, (_C, _H, _W))

    def f(x):
        y = attn.as_forward(x, f_i_prev, f_i_new, prm)
        return tz.tmean(y * y)

    return tz.grad_check(f, _probe(46, (_C, _H, _W)), eps=1e-4)


def _ea_block() -> float:
    prm = attn.EAParams.init("ea", n=_H * _W, d_e=8, rng=_rng(47))

    def f(x):
        p_hat = tz.softmax(x, axis=-1)
        y = attn.ea_refine(attn.CorrelationMap(p_hat), prm).values
        return tz.tmean(y * _probe(49, (_H * _W, _H * _W)).data)

    return tz.grad_check(f, _probe(48, (_H * _W, _H * _W)), eps=1e-4)


def _emsa_block() -> float:
    spec = PyramidSpec((1, 2, 3))
    prm = attn.EMSAParams.init("emsa", _C, _H, _W, spec, _rng(50))
    prm.alpha.value.data = np.asarray(0.5)
    f_p = _probe(51, (_C, _H, _W))

    def f(x):
        y = attn.emsa_forward(x, f_p, prm)
        return tz.tmean(y * y)

    return tz.grad_check(f, _probe(52, (_C, _H, _W)), eps=1e-4)


def _emas_block() -> float:
    spec = PyramidSpec((1, 2, 3))
    prm = attn.EMASParams.init("emas", _C, _H, _W, spec, _rng(53))
    prm.beta.value.data = np.asarray(0.5)
    f_i_prev = _probe(54, (_C, _H, _W))
    f_i_new = _probe(55, (_C, _H, _W))

    def f(x):
        y = attn.emas_forward(x, f_i_prev, f_i_new, prm)
        return tz.tmean(y * y)

    return tz.grad_check(f, _probe(56, (_C, _H, _W)), eps=1e-4)


def _fusion_block() -> float:
    n = 2
    cfg = fus.FusionConfig(n_candidates=n, mode="dccaf")
    dec_i = fus.DecoderParams.init("dec_i", _C, n, _rng(60))
    dec_p = fus.DecoderParams.init("dec_p", _C, n, _rng(61))
    coatt = fus.CoAttentionParams.init("co", 2 * _C, n, _rng(62))
    i_s = _probe(63, (3, 4 * _H, 4 * _W))
    other = _probe(64, (_C, _H, _W))

    def f(x):
        apps = fus.decode_intermediates([x], dec_i, n)
        shps = fus.decode_intermediates([other], dec_p, n)
        att = fus.co_attention([x], [other], coatt, n)
        out = fus.compose(apps, shps, i_s, att)
        return tz.tmean(out * out)

    return tz.grad_check(f, _probe(65, (_C, _H, _W)), eps=1e-4)


def _disc_block() -> float:
    prm = adv.PatchDiscParams.init("d", 6, _rng(70), base=4)
    cond = _probe(71, (3, _IMG_H, _IMG_W))
    img = _probe(72, (3, _IMG_H, _IMG_W))

    def f(t):
        prm.convs[0].bias.value = t
        scores = adv.disc_forward(cond, img, prm)
        return tz.tmean(tz.softplus(scores))

    return tz.grad_check(f, Tensor(prm.convs[0].bias.data.copy()), eps=1e-4)


def _perceptual_block() -> float:
    # target shifted well away from the probe so no |feature diff| sits near
    # the L1 kink within the finite-difference step
    phi = adv.PerceptualExtractor(seed=73)
    r = np.random.default_rng(10_073)
    probe = Tensor(r.normal(size=(3, _IMG_H, _IMG_W)))
    target = Tensor(r.normal(size=(3, _IMG_H, _IMG_W)) * 0.3 + 1.2)

    def f(x):
        return adv.perceptual_loss(x, target, phi)

    return tz.grad_check(f, probe, eps=1e-4)


def _composite_loss() -> float:
    run_cfg = RunConfig(variant="xingpp", t_stages=1, channels=8,
                        height=_IMG_H, width=_IMG_W, n_candidates=2,
                        pyramid=(1, 2), disc_base=4, batch=1, holdout=0)
    state = adv.TrainState.init(run_cfg)
    for sa, as_ in state.gparams.stages:
        sa.alpha.value.data = np.asarray(0.3)
        as_.beta.value.data = np.asarray(0.3)
    i_s, i_t, p_s, p_t = adv._train_batch(run_cfg, 0)
    w = state.weights
    target = state.gparams.encoder.img_conv1.bias

    def f(t):
        target.value = t
        fake, _ = gen.generator_forward(i_s, p_s, p_t, state.gparams)
        live = [adv.disc_forward(i_s, fake, state.d_i),
                adv.disc_forward(p_t, fake, state.d_p)]
        _, l_adv = adv.gan_losses([s.detach() for s in live], live)
        return (l_adv * w.lambda_gan + adv.l1_loss(fake, i_t) * w.lambda_l1
                + adv.perceptual_loss(fake, i_t, state.phi) * w.lambda_p)

    return tz.grad_check(f, Tensor(target.data.copy()), eps=1e-4)


_CHECKS = (
    ("arithmetic", _check_arithmetic, OP_TOL),
    ("matmul", _check_matmul, OP_TOL),
    ("concat", _check_concat, OP_TOL),
    ("tanh", _unary_check(tz.tanh, 10), OP_TOL),
    ("sigmoid", _unary_check(tz.sigmoid, 12), OP_TOL),
    ("leaky_relu", _unary_check(tz.leaky_relu, 14, away=True), OP_TOL),
    ("softplus", _unary_check(tz.softplus, 16), OP_TOL),
    ("absolute", _unary_check(tz.absolute, 18, away=True), OP_TOL),
    ("reductions", _check_reductions, OP_TOL),
    ("softmax", _check_softmax, OP_TOL),
    ("layer_norm", _check_layer_norm, OP_TOL),
    ("conv2d", _conv_check(1, 26), OP_TOL),
    ("conv2d_stride2", _conv_check(2, 28), OP_TOL),
    ("adaptive_avg_pool", _check_pool, OP_TOL),
    ("upsample_bilinear", _check_upsample, OP_TOL),
    ("block_sa", _sa_block, OP_TOL),
    ("block_as", _as_block, OP_TOL),
    ("block_ea", _ea_block, OP_TOL),
    ("block_emsa", _emsa_block, OP_TOL),
    ("block_emas", _emas_block, OP_TOL),
    ("block_fusion", _fusion_block, OP_TOL),
    ("block_discriminator", _disc_block, OP_TOL),
    ("block_perceptual", _perceptual_block, OP_TOL),
    ("composite_loss", _composite_loss, COMPOSITE_TOL),
)


def run_suite(report=None) -> list:
    """Run every check; optionally print one line per check via ``report``."""
    results = []
    for name, fn, tol in _CHECKS:
        err = float(fn())
        result = CheckResult(name, err, tol)
        results.append(result)
        if report is not None:
            status = "ok" if result.ok else "FAIL"
            report(f"{name:<22} max rel err {err:10.3e}  tol {tol:.0e}  {status}")
    return results
