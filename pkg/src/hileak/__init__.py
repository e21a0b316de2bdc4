"""Higher-order power side-channel leakage detection and elimination toolkit.

Detects second- and third-order leakage in masked straight-line assembly
kernels by emulating an instruction-level power model, running multivariate
fixed-vs-random t-tests over mean-centered sample products, locating root
causes through component elimination with a Monte-Carlo fallback, and
inserting barrier instructions that break the leaking interactions.
"""

__version__ = "0.1.0"

FIXED = 0
RANDOM = 1
