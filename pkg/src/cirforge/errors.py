"""Exception taxonomy shared across the pipeline.

Exit-code mapping for the CLI: ValidationError subclasses exit 2,
TransportError exits 3, anything else exits 1.
"""


class ValidationError(Exception):
    """Input data violates a documented contract."""

    exit_code = 2


class CorpusParseError(ValidationError):
    """A corpus line could not be parsed; carries the 1-based line number."""

    def __init__(self, path, line_number, reason):
        super().__init__(f"{path}:{line_number}: {reason}")
        self.path = str(path)
        self.line_number = line_number
        self.reason = reason


class FormatError(ValidationError):
    """A binary container does not match its wire format."""


class ConfigMismatch(ValidationError):
    """Resume-time configuration differs from the checkpoint's."""

    def __init__(self, field, expected, actual):
        super().__init__(f"config field {field!r} differs: checkpoint={expected!r}, requested={actual!r}")
        self.field = field


class TransportError(Exception):
    """The chat transport failed to deliver a response."""

    exit_code = 3


class LlmParseError(Exception):
    """An LLM response does not follow the expected two-marker grammar."""

    def __init__(self, field, message=None):
        super().__init__(message or f"{field}: unparseable response")
        self.field = field


class MissingField(LlmParseError):
    def __init__(self, field):
        super().__init__(field, f"response has no {field!r} line")


class EmptyField(LlmParseError):
    def __init__(self, field):
        super().__init__(field, f"{field!r} marker present but content empty")


class NotApplicable(Exception):
    """An edit type cannot be applied to this caption; absence, not failure."""

    def __init__(self, edit_type, reason):
        super().__init__(f"{getattr(edit_type, 'value', edit_type)}: {reason}")
        self.edit_type = edit_type
        self.reason = reason
