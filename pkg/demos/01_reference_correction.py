"""
Correcting a source gradient toward a reference gradient
========================================================

When the gradient from the source batch points away from the gradient of
the target-domain references (negative cosine), it is replaced by the
result of a few ascent steps on ``cos(g, r) - lam * |g|^2``.
"""

import numpy as np

from nref.reference import CorrectionConfig, correct_gradient, cosine

rng = np.random.default_rng(0)

# two gradients that roughly agree: the gate stays shut and the source
# gradient is returned as is
g = rng.normal(size=8)
r = g + 0.5 * rng.normal(size=8)
out = correct_gradient(g, r)
print(f"agreeing pair: cos {out.cos_before:+.3f}, gate {out.gate_triggered}, same object {out.corrected is g}")

# a conflicting pair: the gate opens and the ascent rotates g toward r
r = -g + 1.5 * rng.normal(size=8)
out = correct_gradient(g, r)
print(f"conflicting pair: cos {out.cos_before:+.3f} -> {out.cos_after:+.3f} "
      f"after {out.inner_steps_taken} accepted steps")

# more inner steps keep rotating; the cosine's gradient is orthogonal to g,
# so finite steps lengthen it a little while lam pulls it back
for k in (1, 5, 20, 100):
    o = correct_gradient(g, r, CorrectionConfig(inner_steps=k))
    print(f"  K={k:3d}: cos {o.cos_after:+.3f}, |g~|/|g| {np.linalg.norm(o.corrected) / np.linalg.norm(g):.3f}")

# exactly opposite gradients are a stationary point of the cosine, so the
# gate fires but no step can improve it
out = correct_gradient(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), CorrectionConfig(lam=0.0))
print(f"antiparallel: gate {out.gate_triggered}, steps {out.inner_steps_taken}, cos {out.cos_after:+.1f}")

# raising the threshold epsilon makes the gate fire on any pair that is not
# perfectly aligned
cfg = CorrectionConfig(epsilon=1.0)
rate = np.mean([correct_gradient(rng.normal(size=8), rng.normal(size=8), cfg).gate_triggered
                for _ in range(200)])
print(f"epsilon = 1 gate rate over random pairs: {rate:.2f}, cos of the last pair {cosine(g, r):+.3f}")
