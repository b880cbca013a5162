"""Shuffle classes of index pairs for two partitions of R^5.

Two flag kernels on R^5 with block sizes (2,3) and (1,2,2) compose into a
finite sum of pieces, one per way of interleaving their dyadic indices.
This script lists those interleavings and the partition each one produces.
"""

from math import comb

from flaglab import Partition, emit_tables, shuffles
from flaglab.combinatorics import table_text

pA, pB = Partition((2, 3)), Partition((1, 2, 2))
rows = emit_tables(pA, pB)
print(f"{len(rows)} classes for {pA.sizes} x {pB.sizes}")
print(table_text(rows))

# every interleaving of n and m ordered indices appears exactly once
for n, m in ((2, 3), (3, 3), (4, 2)):
    print(f"P({n},{m}) has {len(shuffles(n, m))} members, C({n + m},{n}) = {comb(n + m, n)}")
