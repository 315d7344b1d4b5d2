"""
How the generalization bound scales
===================================

The gap between true and empirical risk shrinks like 1/sqrt(|D|) and grows
with the map size through m^(1/p).  A handful of images gives a loose
guarantee; the bound only becomes informative at source-set sizes.
"""

from nref.bound import generalization_bound

m = 32 * 32
for p in (1, 2):
    print(f"p = {p}, |H| = 1e6, delta = 0.05")
    for n in (1, 10, 150, 10_000, 1_000_000):
        print(f"  |D| = {n:>9,d}: {generalization_bound(m, p, 10**6, 0.05, n):10.4f}")
