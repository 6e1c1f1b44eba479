"""Exception types shared across the framework."""

from __future__ import annotations


class ForgeError(Exception):
    """Base class for all framework errors."""


class CapExceeded(ForgeError):
    """An enumeration or solver would exceed its configured state cap.

    Carries the number of states the operation would have needed.
    """

    def __init__(self, required: int, cap: int, what: str = "enumeration"):
        self.required = required
        self.cap = cap
        self.what = what
        super().__init__(f"{what} needs {required} states, cap is {cap}")


class BudgetExceeded(ForgeError):
    """An adversary strategy attempted corruption number t+1."""


class ScheduleViolation(ForgeError):
    """An adversary action targeted a party that cannot act in this slot."""


class InvalidTargetSet(ForgeError):
    """A security target set M is malformed for the protocol's output width."""


class ShapeMismatch(ForgeError):
    """A matrix or transcript does not match the protocol's dimensions."""


class WidthMismatch(ForgeError):
    """Requested output width is incompatible with the message length."""


class SupportMismatch(ForgeError):
    """Two distributions do not live on the same output universe."""


class AbsoluteContinuityViolated(ForgeError):
    """KL divergence requested where the second argument has a zero mass
    at a point the first argument charges."""


class EmptyConsistentSet(ForgeError):
    """The reduction adversary's consistent matrix set became empty.

    The run is recorded as halted with output flagged bottom.
    """

    def __init__(self, round_: int, slot: int):
        self.round = round_
        self.slot = slot
        super().__init__(f"consistent set empty before message {slot} of round {round_}")


class EmptyFamily(ForgeError):
    """A matrix family argument was empty."""


class ConfigError(ForgeError):
    """Experiment config rejected; carries per-field diagnostics."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
