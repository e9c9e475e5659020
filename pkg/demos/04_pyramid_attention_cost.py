"""Pyramid-pooled attention: exact geometry, then measured cost.

Full pairwise attention over n = h*w positions builds an n x n correlation
matrix, so cost grows with the fourth power of the image side. The
multi-scale blocks sidestep that by adaptive-average-pooling both feature
streams by factors s in the pyramid, attending at the pooled size, and
bilinearly upsampling the result back. This script prints the exact level
geometry for a small map, shows pyramid_pool producing those shapes, and
times each level on a 16x16 map with the same helper the `xing bench`
command uses.

Run:  python3 demos/04_pyramid_attention_cost.py
"""

import numpy as np

from xing.attention import PyramidSpec, pyramid_pool
from xing.cli import bench_pyramid
from xing.tensor import Tensor

rng = np.random.default_rng(4)

# --- level geometry ----------------------------------------------------------
# Pooled sides use ceiling division, so awkward sizes still produce at least
# one token per level. tokens = hh*ww, and the per-level correlation matrix
# is tokens x tokens.
spec = PyramidSpec((1, 2, 3, 6))
h, w = 12, 6
print(f"pyramid {spec.scale_factors} on a {h}x{w} feature map:")
for s in spec.scale_factors:
    hh, ww = spec.level_shape(h, w, s)
    print(f"  scale {s}: level {hh}x{ww}  tokens {hh * ww:3d}  "
          f"correlation {hh * ww}^2 = {(hh * ww) ** 2}")
assert spec.token_counts(h, w) == [72, 18, 8, 2]

# --- pooling really produces those shapes -------------------------------------
x = Tensor(rng.normal(size=(4, h, w)))
levels = pyramid_pool(x, spec)
print("pyramid_pool output shapes:", [tuple(t.shape) for t in levels])

# Pooling preserves the mean exactly when the factor divides the sides
# (every pooled cell averages an equal-sized window).
full_mean = float(x.data.mean())
pooled_mean = float(levels[1].data.mean())  # factor 2 divides 12 and 6
print(f"mean preserved under factor-2 pooling: {full_mean:+.6f} vs {pooled_mean:+.6f}")
assert abs(full_mean - pooled_mean) < 1e-12

# --- measured cost per level ---------------------------------------------------
# The full-resolution level (scale 1) pays for a 256x256 correlation on a
# 16x16 map; every pooled level is strictly cheaper.
rows = bench_pyramid(16, 16, (1, 2, 3, 6), c=16, trials=3)
print("\nper-level timing on 16x16 (c=16):")
print(f"  {'scale':>5}  {'level':>7}  {'correlation':>12}  {'ms':>8}")
for r in rows:
    print(f"  {r['scale']:>5}  {r['hh']:>3}x{r['ww']:<3}  "
          f"{str(r['tokens']) + '^2=' + str(r['corr_cells']):>12}  {r['ms']:>8.2f}")
full_ms = rows[0]["ms"]
cheaper = all(r["ms"] < full_ms for r in rows[1:])
print(f"all pooled levels cheaper than the full level: {'yes' if cheaper else 'NO'}")
