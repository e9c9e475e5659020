"""Candidate decoding and per-pixel co-attention composition.

The fusion head turns the generator's stage codes into N appearance-stream
candidates and N shape-stream candidates (Tanh images), then blends all
2N+1 choices — the candidates plus the raw source image — with
channel-softmaxed attention maps. Because the maps are a per-pixel
probability distribution, the output is a convex combination: every output
pixel lies inside the range spanned by the candidate pixels, which is what
lets the network copy untouched background straight from the source.

Run:  python3 demos/05_fusion_composition.py
"""

import numpy as np

from xing import generator as gen
from xing.attention import PyramidSpec
from xing.generator import GeneratorConfig, GeneratorParams, generator_forward
from xing.pose_synth import sample_episode

rng = np.random.default_rng(5)

# --- a tiny generator and one synthetic episode --------------------------------
cfg = GeneratorConfig(variant="xingpp", t_stages=1, c=8, h=24, w=16,
                      n_candidates=2, pyramid=PyramidSpec((1, 2)),
                      fusion_mode="dccaf")
params = GeneratorParams.init(cfg, rng)
ep = sample_episode(11, cfg.h, cfg.w)
img, diag = generator_forward(ep.i_s, ep.p_s, ep.p_t, params)
print(f"generated image: {tuple(img.shape)}  range "
      f"[{img.data.min():+.3f}, {img.data.max():+.3f}]")

# --- the candidate inventory ----------------------------------------------------
apps, shapes, att = diag["apps"], diag["shapes"], diag["attention"]
print(f"appearance candidates: {len(apps)} x {tuple(apps[0].shape)}")
print(f"shape candidates:      {len(shapes)} x {tuple(shapes[0].shape)}")
print(f"attention maps:        {tuple(att.shape)}  (2N+1 = {2 * cfg.n_candidates + 1})")

# Candidates come out of a Tanh head, so they are already valid images.
worst = max(float(np.abs(t.data).max()) for t in apps + shapes)
print(f"max |candidate pixel| = {worst:.6f} (Tanh keeps them in (-1, 1))")

# --- attention maps are a per-pixel distribution --------------------------------
sums = att.data.sum(axis=0)
print(f"attention channel sums: max |sum - 1| = {np.abs(sums - 1).max():.2e}")

# --- convexity of the blend ------------------------------------------------------
# Stack the 2N+1 candidates and check the output never leaves their envelope.
stack = np.stack([t.data for t in apps + shapes] + [ep.i_s.data])
lo, hi = stack.min(axis=0), stack.max(axis=0)
slack = 1e-12
inside = (img.data >= lo - slack).all() and (img.data <= hi + slack).all()
print(f"output inside the candidate envelope everywhere: {inside}")

# --- where the mass sits at init -------------------------------------------------
# The 1x1 co-attention conv starts at a random draw, so the initial routing is
# an arbitrary (but valid) per-pixel distribution. Training then learns to
# route figure pixels to candidates and background pixels to the source image,
# which rides along as the last channel of the mixture.
share = att.data.mean(axis=(1, 2))
print("mean attention share per channel:", np.round(share, 3),
      f"(uniform would be {1 / (2 * cfg.n_candidates + 1):.3f})")
