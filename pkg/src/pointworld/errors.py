"""Structured error types shared across the package.

Every error carries a stable machine-readable ``code`` so the CLI can emit
single-line parsable diagnostics, plus an ``exit_status`` for process exits.
"""

from __future__ import annotations


class WorldEngineError(Exception):
    """Base class for all structured engine errors."""

    code = "engine_error"
    exit_status = 1


class DimensionMismatchError(WorldEngineError):
    """Inputs that must share a shape (image grids, clips) do not."""

    code = "dimension_mismatch"
    exit_status = 4


class DegenerateInputError(WorldEngineError):
    """Numerically degenerate input: rank-deficient system, zero IQR, etc."""

    code = "degenerate_input"
    exit_status = 4


class EmptyInputError(WorldEngineError):
    """An operation that requires at least one element received none."""

    code = "empty_input"
    exit_status = 4


class InvariantError(WorldEngineError):
    """A domain-type invariant was violated at construction time."""

    code = "invariant_violation"
    exit_status = 4


class FormatError(WorldEngineError):
    """Unparsable or malformed on-disk data (PFM, PLY, JSON)."""

    code = "format_error"
    exit_status = 3


class DenoiserContractError(WorldEngineError):
    """A denoiser implementation violated the port contract."""

    code = "denoiser_contract"
    exit_status = 5
