"""
Synthetic source and target domains
===================================

Each image has a smooth "true" saliency map.  Fixations are sampled from
it and blurred into the ground truth, and the input features are a
per-domain linear mix of the true map plus noise.  Layout and mixing
differ between the two domains.
"""

import numpy as np

from nref.datagen import DomainSpec, generate_dataset, mixing_coefficients

source = DomainSpec("natural_like", mixing_seed=14)
target = DomainSpec("webpage_like", mixing_seed=24)
print("source mixing", np.round(mixing_coefficients(source), 3))
print("target mixing", np.round(mixing_coefficients(target), 3))

src = generate_dataset(source, 200, 1)
tgt = generate_dataset(target, 30, 2, "target")


def top_band_share(ds):
    return ds.saliency[:, :4].sum(axis=(1, 2)) / ds.saliency.sum(axis=(1, 2))


# mean ground-truth mass per row band: natural images are center-heavy,
# web pages top-heavy
for name, ds in (("source", src), ("target", tgt)):
    rows = ds.saliency.mean(axis=(0, 2))
    bands = rows.reshape(4, 8).mean(axis=1)
    print(f"{name}: row-band means {np.round(bands, 3)}, top-band share {top_band_share(ds).mean():.3f}")

# a single feature channel whose sign flips between domains is what makes
# transfer non-trivial: a model that leans on it is wrong on the target
ms, mt = mixing_coefficients(source), mixing_coefficients(target)
print("cosine between mixings", round(float(ms @ mt / np.linalg.norm(ms) / np.linalg.norm(mt)), 3))
print("fixations per image", int(src.fixations[0].sum()), "| image", src.shape)
