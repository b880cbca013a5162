"""Two independent estimates of an L^2 operator norm.

For a convolution operator on R the norm is the sup of its multiplier. A
power iteration on a periodic box measures the same number without using
the Fourier characterization of the kernel.
"""

from flaglab import Partition
from flaglab.kernel_lab import KernelApprox, gauss_family, monotone_window
from flaglab.operator_lab import CalderonPair, l2_norm

K = KernelApprox(gauss_family(Partition((1,)), (1,), order=2), monotone_window(1, -3, 3))
a = l2_norm(K, "multiplier-sup")
b = l2_norm(K, "power-iteration", L=16.0, n=1024, seed=0)
print(f"multiplier sup   {a.value:.6f}")
print(f"power iteration  {b.value:.6f}  (converged={b.converged})")
print(f"relative gap     {abs(a.value - b.value) / a.value:.2e}")

res = CalderonPair(Partition((1,))).reproducing_residual()
print(f"Calderon reproducing identity residual {res:.2e}")
