"""Numerical laboratory for flag kernels on graded nilpotent groups."""

__version__ = "0.1.0"

from .combinatorics import Partition, emit_tables, shuffles  # noqa: E402
from .graded_group import GroupSpec, make_group  # noqa: E402

__all__ = ["GroupSpec", "Partition", "__version__", "emit_tables", "make_group", "shuffles"]
