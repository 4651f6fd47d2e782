"""Multi-dimensional homomorphisms: high-level algebra, tuning space, lowering,
reference interpreter and C/OpenMP code emission."""

__version__ = "0.1.0"
