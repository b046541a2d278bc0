"""Exception hierarchy shared across the toolkit.

Validation failures (bad shapes, bad arguments, unknown labels) and IO/format
failures are kept separate so the CLI can map them to distinct exit codes.
"""


class SkillzipError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SkillzipError):
    """Operands have incompatible or invalid dimensions."""


class ValidationError(SkillzipError):
    """An argument or data value violates a documented precondition."""


class FormatError(SkillzipError):
    """A serialized file is malformed: bad magic, bad CRC, truncation,
    duplicate names, non-finite payload values, inconsistent shapes."""


class RoutingError(SkillzipError):
    """A request carries a task label with no registered skillpack."""

    def __init__(self, label: str):
        super().__init__(f"no skillpack registered for task label {label!r}")
        self.label = label
