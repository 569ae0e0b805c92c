"""Exception hierarchy.

Validation problems (bad input files, bad settings) derive from
``ValidationError``; solver and controller failures derive from
``NumericalError``. The CLI maps the two families to exit codes 2 and 3.
"""


class FeederVoltError(Exception):
    pass


class ValidationError(FeederVoltError, ValueError):
    pass


class FeederFormatError(ValidationError):
    """A feeder description line could not be parsed."""

    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


class DanglingReferenceError(ValidationError):
    def __init__(self, bus_id, context=""):
        self.bus_id = bus_id
        msg = f"unknown bus {bus_id!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class TopologyError(ValidationError):
    pass


class ProfileError(ValidationError):
    pass


class ScenarioError(ValidationError):
    pass


class NumericalError(FeederVoltError, RuntimeError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, worst_residual=None):
        self.worst_residual = worst_residual
        super().__init__(message)


class ControlOscillationError(NumericalError):
    def __init__(self, regulator_ids, rounds):
        self.regulator_ids = list(regulator_ids)
        self.rounds = rounds
        super().__init__(
            f"regulator control did not settle after {rounds} rounds; "
            f"still moving: {', '.join(self.regulator_ids)}"
        )


class LocalControlError(NumericalError):
    """Volt/VAR curve and network did not reach a self-consistent point."""


class DispatchError(NumericalError):
    pass


class SimulationError(FeederVoltError):
    """Wraps a module error with the timestep (and candidate) it occurred at."""

    def __init__(self, cause, step=None, candidate=None):
        self.cause = cause
        self.step = step
        self.candidate = candidate
        parts = []
        if candidate is not None:
            parts.append(f"candidate {candidate}")
        if step is not None:
            parts.append(f"step {step}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {cause}" if prefix else str(cause))
