"""Exception types shared across the simulation stack."""
from __future__ import annotations


class LinkError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(LinkError):
    """Inconsistent or invalid configuration (wrong grid, bad parameter combination)."""


class NumericalFaultError(LinkError):
    """A non-finite value or degenerate quantity appeared during computation.

    Carries the name of the operation (and optionally the training step) that
    produced the fault so runs can be diagnosed post mortem.
    """

    def __init__(self, message: str, *, op: str | None = None, step: int | None = None):
        self.op = op
        self.step = step
        parts = [message]
        if op is not None:
            parts.append(f"op={op}")
        if step is not None:
            parts.append(f"step={step}")
        super().__init__(" ".join(parts))


class EstimationError(LinkError):
    """A statistical estimate could not be formed (e.g. a level missing from the pilot)."""


class CalibrationError(LinkError):
    """Noise calibration failed (e.g. zero signal energy at the decision point)."""


class ScreeningError(LinkError):
    """Every learning-rate candidate diverged; carries per-candidate diagnostics."""

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        self.diagnostics = diagnostics or []
        if self.diagnostics:
            message = message + "\n" + "\n".join(self.diagnostics)
        super().__init__(message)
