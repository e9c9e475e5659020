"""Train a miniature pose-transfer GAN end to end.

A few dozen iterations at toy scale are enough to watch the moving parts:
the composite loss (adversarial + L1 + feature-space L1) descending, the
periodic held-out SSIM probe, checkpoints appearing, and the trained
generator beating the "just copy the source" baseline it is measured
against. The full desk-scale recipe is the same config with the sizes
turned up (see README).

Run:  python3 demos/06_train_tiny_gan.py        (~1 min on one core)
"""

from pathlib import Path

from xing.adversarial import evaluate_holdout, fit
from xing.config import RunConfig
from xing.generator import load_generator
from xing.imageio import write_image
from xing.pose_synth import derive_seed, sample_episode

out_dir = Path("demo_out/tiny_gan")
cfg = RunConfig(
    variant="xingpp", t_stages=1, channels=16, height=32, width=16,
    n_candidates=2, pyramid=(1, 2), disc_base=8,
    seed=0, iters=60, batch=4, eval_every=20, ckpt_every=30, holdout=8,
    checkpoint_dir=str(out_dir),
)

# --- train ---------------------------------------------------------------------
print(f"training {cfg.variant} T={cfg.generator_config().t_stages}: "
      f"{cfg.iters} iters, batch {cfg.batch}, {cfg.height}x{cfg.width}")


def progress(row):
    if row["step"] % 20 == 0 or row["ssim_holdout"] != "":
        ssim = f"  ssim={row['ssim_holdout']:.3f}" if row["ssim_holdout"] != "" else ""
        print(f"  step {row['step']:3d}  d={row['loss_d']:.3f}  "
              f"g_adv={row['loss_g_adv']:.3f}  l1={row['loss_l1']:.3f}  "
              f"p={row['loss_p']:.3f}{ssim}")


final_ckpt, history = fit(cfg, progress=progress)
first = sum(r["loss_l1"] for r in history[:10]) / 10
final = sum(r["loss_l1"] for r in history[-10:]) / 10
print(f"L1 first-10 {first:.4f} -> final-10 {final:.4f}")
print(f"checkpoints: {sorted(p.name for p in out_dir.glob('*.xgpp'))}")
print(f"metrics CSV: {cfg.metrics_path()}")

# --- held-out evaluation ----------------------------------------------------------
# evaluate_holdout scores generated-vs-target SSIM against the copy baseline
# (source-vs-target SSIM): any model worth training must beat copying.
gparams, _ = load_generator(final_ckpt)
gen_ssim, copy_ssim = evaluate_holdout(gparams, cfg)
print(f"holdout SSIM: generated {gen_ssim:.4f} vs copy baseline {copy_ssim:.4f} "
      f"({'beats' if gen_ssim > copy_ssim else 'does not beat'} copying)")

# --- look at one result ------------------------------------------------------------
from xing.generator import generator_forward  # noqa: E402

ep = sample_episode(derive_seed(cfg.seed, 2, 0), cfg.height, cfg.width)
img, _ = generator_forward(ep.i_s, ep.p_s, ep.p_t, gparams)
for name, t in (("source", ep.i_s), ("target", ep.i_t), ("generated", img)):
    write_image(out_dir / f"{name}.ppm", t, png=True)
print(f"wrote source/target/generated images to {out_dir}/")
