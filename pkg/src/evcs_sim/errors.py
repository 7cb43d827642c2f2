"""Exception hierarchy shared by every subsystem."""

from __future__ import annotations


class EvcsSimError(Exception):
    """Base class for all simulator errors."""


class DomainError(EvcsSimError, ValueError):
    """An argument lies outside the domain of a formula."""


class InsufficientEnergy(DomainError):
    """Stored energy does not cover the trip reserve, so the session is charge-only."""


class LengthMismatch(DomainError):
    pass


class GridMismatch(DomainError):
    pass


class InfeasibleDecision(EvcsSimError):
    """A decision cannot be turned into a schedule that finishes by the deadline."""


class ScheduleViolation(EvcsSimError):
    def __init__(self, violations):
        self.violations = list(violations)
        names = ", ".join(f"{v.constraint}@{v.slot}" for v in self.violations[:5])
        super().__init__(f"schedule violates {len(self.violations)} constraint(s): {names}")


class SimulationDefect(EvcsSimError):
    """An engine-produced schedule failed validation. Always a bug, never recoverable."""


class ConfigError(EvcsSimError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class AgentError(EvcsSimError):
    """Any failure of a non-baseline decision agent."""


class TransportError(AgentError):
    pass


class FixtureMiss(AgentError):
    def __init__(self, fingerprint: str):
        self.fingerprint = fingerprint
        super().__init__(f"no recorded response for request {fingerprint[:16]}")


class SchemaError(AgentError):
    pass


class GridSpecError(EvcsSimError, ValueError):
    """An incentive grid specification is malformed or not ascending."""
