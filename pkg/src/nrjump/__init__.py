"""Reversible and non-reversible jump samplers for nested model selection."""

from .core import (ChainTrace, ConfigurationError, MoveKind, NestedTarget, RunConfig,
                   TransDimState, run_chain, validate_target)

__all__ = ["ChainTrace", "ConfigurationError", "MoveKind", "NestedTarget", "RunConfig",
           "TransDimState", "run_chain", "validate_target"]
__version__ = "0.1.0"
