"""Node cardinality estimation with privileged feature distillation."""

__version__ = "0.1.0"
