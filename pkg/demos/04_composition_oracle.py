"""Composition of two abelian flag kernels, checked against the Fourier side.

On R^2 convolution multiplies Fourier multipliers. Splitting the double sum
over index pairs into shuffle classes must not lose anything, so the class
kernels together reproduce the product multiplier.
"""

import numpy as np

from flaglab import Partition
from flaglab.convolution import compose_classes, fourier_oracle
from flaglab.kernel_lab import gauss_family, monotone_window

p = Partition((1, 1))
fam = gauss_family(p, (1, 1))
win = monotone_window(2, -2, 2)
kernels = compose_classes(fam, fam, win, win)
for mu, k in sorted(kernels.items(), key=lambda kv: kv[0].i_positions):
    print(f"i at positions {mu.i_positions}: {k.pairs} index pairs")
xi = np.random.default_rng(1).uniform(-4, 4, (128, 2))
print("max |sum of class multipliers - product multiplier| =",
      f"{fourier_oracle(fam, fam, win, win, kernels, xi):.2e}")
