"""n-reference transfer learning for saliency prediction.

A small numpy trainer in which a source-domain head gradient is steered
toward the gradient of a handful of target-domain references whenever the
two disagree, followed by ordinary fine-tuning on those references.
"""

__version__ = "0.1.0"
