"""
Cross-attention block zoo
=========================

The generator alternates two co-attention updates per stage: one refreshes
the appearance stream under shape guidance, the other refreshes the shape
stream under appearance guidance. The enhanced multi-scale variants add a
pyramid of pooled attention levels and a correlation-map refinement step.
All of them are pure functions of (features, parameters).
"""

import numpy as np

from xing import attention as attn
from xing import tensor as tz
from xing.attention import (ASParams, EMSAParams, PyramidSpec, SAParams,
                            ea_refine, sa_forward, as_forward, emsa_forward)
from xing.tensor import Tensor

rng = np.random.default_rng(3)
c, h, w = 8, 8, 6
f_i = Tensor(rng.normal(size=(c, h, w)))   # appearance stream
f_p = Tensor(rng.normal(size=(c, h, w)))   # shape stream

# --- plain appearance update -------------------------------------------------
sa = SAParams.init("demo.sa", c, rng)
f_i_new = sa_forward(f_i, f_p, sa)
print("appearance update:", f_i.shape, "->", f_i_new.shape)

# the residual gate starts at zero, so a fresh block is the identity
assert np.array_equal(f_i_new.data, f_i.data)
print("freshly initialized block == identity (residual gate at 0)")

# open the gate and the attention mixing becomes visible
sa.alpha.data[...] = 0.5
moved = sa_forward(f_i, f_p, sa)
print("with gate 0.5, mean |delta| =", round(float(np.abs(moved.data - f_i.data).mean()), 4))

# --- the shape update consumes BOTH appearance codes -------------------------
as_ = ASParams.init("demo.as", c, rng)
f_p_new = as_forward(f_p, f_i, moved, as_)
print("shape update    :", f_p.shape, "->", f_p_new.shape)

# --- correlation maps are row-stochastic -------------------------------------
# Every attention row is a softmax: rows sum to one. (attention_oracle is the
# scalar-loop reference the vectorized path is tested against.)
q = Tensor(rng.normal(size=(1, c, h * w)))
k = Tensor(rng.normal(size=(1, c, h * w)))
probs = tz.softmax(tz.matmul(tz.transpose2d(q), k), axis=-1)
row_sums = probs.data.sum(axis=-1)
print("correlation row sums: max |sum - 1| =", f"{np.abs(row_sums - 1).max():.2e}")

# --- enhanced-attention refinement -------------------------------------------
# EA rewrites a correlation map through a small memory bank with a
# column-then-row double normalization; the result is again row-stochastic.
ea_in = attn.CorrelationMap(probs, normalized=True)
ea = attn.EAParams.init("demo.ea", h * w, rng, d_e=16)
refined = ea_refine(ea_in, ea)
print("EA refined row sums:  max |sum - 1| =",
      f"{np.abs(refined.values.data.sum(axis=-1) - 1).max():.2e}")

# --- multi-scale variant ------------------------------------------------------
spec = PyramidSpec((1, 2, 3))
emsa = EMSAParams.init("demo.emsa", c, h, w, spec, rng)
f_ms = emsa_forward(f_i, f_p, emsa, spec=spec)
print("multi-scale appearance update:", f_ms.shape,
      "| pyramid token counts:", spec.token_counts(h, w))
