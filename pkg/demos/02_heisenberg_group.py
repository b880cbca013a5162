"""The Heisenberg group as a graded group on R^3.

Multiplication is polynomial, dilations are automorphisms, and the two
block norms scale with the dilation. Each claim is checked numerically.
"""

import numpy as np

from flaglab import make_group
from flaglab.graded_group import block_norms, dilate, inverse, multiply, verify_group_axioms

H = make_group("heisenberg")
rng = np.random.default_rng(0)
x, y = rng.normal(size=(2, 3))

print("x . y      =", multiply(H, x, y))
print("y . x      =", multiply(H, y, x), "(differs in the last coordinate)")
print("x . x^-1   =", multiply(H, x, inverse(H, x)))

r = 3.0
lhs = dilate(H, r, multiply(H, x, y))
rhs = multiply(H, dilate(H, r, x), dilate(H, r, y))
print("dilation is an automorphism, residual", float(np.max(np.abs(lhs - rhs))))
print("block norms of x and of 3x:", block_norms(H, x), block_norms(H, dilate(H, r, x)))

rep = verify_group_axioms(H, samples=1000, seed=0)
print({k: rep[k] for k in ("associativity_residual", "dilation_residual", "symbolic_associativity")})
