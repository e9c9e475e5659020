"""Operator entry point.

Subcommands:

- ``gradcheck``           run the gradient/oracle suite at toy shapes
- ``train --config F``    train per an INI config; checkpoints + metrics CSV
- ``generate --ckpt F --seed N --out D``  render one episode through a model
- ``eval --ckpt F --n K`` mean holdout SSIM vs the copy baseline
- ``bench --h H --w W --pyramid 1,2,3,6`` per-scale attention cost table

Exit codes: 0 success, 1 verification/validation failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import adversarial as adv
from . import attention as attn
from . import generator as gen
from . import imageio
from .attention import PyramidSpec
from .checkpoint import CheckpointError, CheckpointWriteError
from .config import load_config
from .gradsuite import run_suite
from .metrics import ssim
from .pose_synth import derive_seed, sample_episode
from .tensor import ContractError

__all__ = ["main", "bench_pyramid"]


class _ArgError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; 2 is reserved for I/O here,
    # so route usage problems through the validation path (exit 1) instead.
    def error(self, message):
        raise _ArgError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="xing", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gradcheck", help="finite-difference checks for ops/blocks")

    p_train = sub.add_parser("train", help="train from an INI config")
    p_train.add_argument("--config", required=True, help="path to the INI file")

    p_gen = sub.add_parser("generate", help="render one episode through a checkpoint")
    p_gen.add_argument("--ckpt", required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--png", action="store_true",
                       help="also write PNG copies next to the PPMs")

    p_eval = sub.add_parser("eval", help="holdout SSIM vs copy baseline")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--n", type=int, default=32)
    p_eval.add_argument("--seed", type=int, default=0)

    p_bench = sub.add_parser("bench", help="per-scale attention cost")
    p_bench.add_argument("--h", type=int, required=True)
    p_bench.add_argument("--w", type=int, required=True)
    p_bench.add_argument("--pyramid", default="1,2,3,6")
    p_bench.add_argument("--channels", type=int, default=16)
    p_bench.add_argument("--trials", type=int, default=5)
    return parser


def cmd_gradcheck() -> int:
    results = run_suite(report=print)
    bad = [r for r in results if not r.ok]
    if bad:
        print(f"FAIL: {bad[0].name} (err {bad[0].err:.3e} > tol {bad[0].tol:.0e})")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_train(config_path: str) -> int:
    run_cfg = load_config(config_path)

    def progress(row):
        if row["ssim_holdout"] != "":
            print(f"step {row['step']:>6}  d {row['loss_d']:.4f}  "
                  f"g_adv {row['loss_g_adv']:.4f}  l1 {row['loss_l1']:.4f}  "
                  f"p {row['loss_p']:.4f}  ssim {row['ssim_holdout']:.4f}")

    final, history = adv.fit(run_cfg, progress=progress)
    print(f"finished {len(history)} steps; checkpoint {final}; "
          f"metrics {run_cfg.metrics_path()}")
    return 0


def cmd_generate(ckpt: str, seed: int, out: str, png: bool = False) -> int:
    gparams, _ = gen.load_generator(ckpt)
    cfg = gparams.config
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ep = sample_episode(seed, cfg.h, cfg.w)
    img, diag = gen.generator_forward(ep.i_s, ep.p_s, ep.p_t, gparams)

    def put(name, data, **kw):
        imageio.write_image(out_dir / f"{name}.ppm", data, png=png, **kw)

    put("source", ep.i_s)
    put("target", ep.i_t)
    put("generated", img)
    put("pose_source", imageio.heatmap_overview(ep.p_s))
    put("pose_target", imageio.heatmap_overview(ep.p_t))
    for k, (app, shp) in enumerate(zip(diag["apps"], diag["shapes"])):
        put(f"candidate_app_{k}", app)
        put(f"candidate_shape_{k}", shp)
    att = diag["attention"].data
    for j in range(att.shape[0]):
        put(f"attention_{j:02d}", imageio.gray_to_rgb(att[j]))
    n_files = 5 + 2 * len(diag["apps"]) + att.shape[0]
    print(f"wrote {n_files} images to {out_dir} (seed {seed})")
    return 0


def cmd_eval(ckpt: str, n: int, seed: int = 0) -> int:
    if n < 1:
        raise ContractError(f"eval needs n >= 1, got {n}")
    gparams, _ = gen.load_generator(ckpt)
    cfg = gparams.config
    gen_scores, base_scores = [], []
    for i in range(n):
        ep = sample_episode(derive_seed(seed, 2, i), cfg.h, cfg.w)
        img, _ = gen.generator_forward(ep.i_s, ep.p_s, ep.p_t, gparams)
        gen_scores.append(ssim(img.data, ep.i_t.data))
        base_scores.append(ssim(ep.i_s.data, ep.i_t.data))
    print(f"episodes={n} ssim_generated={np.mean(gen_scores):.4f} "
          f"ssim_copy_baseline={np.mean(base_scores):.4f}")
    return 0


def bench_pyramid(h: int, w: int, factors, c: int = 16, trials: int = 5):
    """Time each pyramid level's attention pass; rows sorted by scale."""
    spec = PyramidSpec(tuple(factors))
    rng = np.random.default_rng(0)
    prm = attn.EMSAParams.init("bench", c, h, w, spec, rng)
    from .tensor import Tensor
    f_q = Tensor(rng.normal(size=(1, c, h, w)))
    f_k = Tensor(rng.normal(size=(1, c, h, w)))
    rows = []
    for sp, s in zip(prm.scales, spec.scale_factors):
        attn.scale_level_mix(f_q, f_k, sp, s, spec)  # warm up
        best = np.inf
        for _ in range(max(1, trials)):
            t0 = time.perf_counter()
            attn.scale_level_mix(f_q, f_k, sp, s, spec)
            best = min(best, time.perf_counter() - t0)
        hh, ww = spec.level_shape(h, w, s)
        tokens = hh * ww
        rows.append({"scale": s, "hh": hh, "ww": ww, "tokens": tokens,
                     "corr_cells": tokens * tokens, "ms": best * 1e3})
    return rows


def cmd_bench(h: int, w: int, pyramid: str, channels: int, trials: int) -> int:
    try:
        factors = tuple(int(tok) for tok in pyramid.split(","))
    except ValueError:
        raise ContractError(f"bad --pyramid value {pyramid!r}") from None
    rows = bench_pyramid(h, w, factors, c=channels, trials=trials)
    print(f"{'scale':>5}  {'level':>9}  {'tokens':>7}  {'corr':>11}  {'ms':>8}")
    for r in rows:
        print(f"{r['scale']:>5}  {r['hh']:>4}x{r['ww']:<4}  {r['tokens']:>7}  "
              f"{r['tokens']}^2={r['corr_cells']:<6}  {r['ms']:>8.3f}")
    full = rows[0]
    cheaper = all(r["ms"] < full["ms"] for r in rows[1:])
    print(f"full-resolution level: {full['ms']:.3f} ms; "
          f"all pooled levels cheaper: {'yes' if cheaper else 'NO'}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gradcheck":
            return cmd_gradcheck()
        if args.command == "train":
            return cmd_train(args.config)
        if args.command == "generate":
            return cmd_generate(args.ckpt, args.seed, args.out, png=args.png)
        if args.command == "eval":
            return cmd_eval(args.ckpt, args.n, args.seed)
        if args.command == "bench":
            return cmd_bench(args.h, args.w, args.pyramid, args.channels, args.trials)
        raise _ArgError(f"unknown command {args.command!r}")
    except _ArgError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except CheckpointWriteError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
