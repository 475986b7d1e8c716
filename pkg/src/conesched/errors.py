"""Exception types shared across the package.

Everything user-facing derives from either ``InputError`` (bad data or
configuration, CLI exit code 1) or plain runtime exceptions (exit code 2).
"""


class InputError(ValueError):
    """Invalid user input: data, configuration, or preconditions."""


class DimensionMismatchError(InputError):
    """Vector/matrix dimensions do not agree."""


class ConfigNotInScheduleError(InputError):
    """A scheduling decision is not a member of the schedule set."""

    def __init__(self, config, line=None):
        self.config = config
        self.line = line
        where = f" (record {line})" if line is not None else ""
        super().__init__(f"decision {list(config)} not in schedule set{where}")


class HorizonTooShortError(InputError):
    """Horizon too short for the learning-rate formula to be valid."""


class ExpertValidationError(InputError):
    """Expert parameters violate the required structure."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class TraceFormatError(InputError):
    """A trace record is malformed; carries the offending record number."""

    def __init__(self, message, line=None):
        self.line = line
        where = f"record {line}: " if line is not None else ""
        super().__init__(where + message)


class RunConfigError(InputError):
    """Run configuration file fails schema validation."""


class CheckpointError(InputError):
    """Checkpoint file is unusable or inconsistent with the run."""
