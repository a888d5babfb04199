"""Exception hierarchy.

The CLI maps these onto exit codes: validation problems (``SchemaError``,
``AnnotationError``, ``ConfigError``) exit 4, ``ExternalServiceError`` exits 3.
"""


class RoIEvalError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(RoIEvalError, ValueError):
    """A record does not conform to its schema."""


class ConfigError(RoIEvalError, ValueError):
    """Invalid configuration or parameters."""


class AnnotationError(SchemaError):
    """Malformed bracketed annotation string.

    Attributes:
        field_index: 0-based index of the offending field, or None.
        offset: byte offset into the UTF-8 encoded line, or None.
    """

    def __init__(self, message, field_index=None, offset=None):
        where = []
        if field_index is not None:
            where.append(f"field {field_index}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field_index = field_index
        self.offset = offset


class ExternalServiceError(RoIEvalError):
    """A remote extraction or embedding service failed."""
