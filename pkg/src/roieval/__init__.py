"""Evaluation toolkit for RoI-grounded PET/CT report generation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AnnotationError,
    ConfigError,
    ExternalServiceError,
    RoIEvalError,
    SchemaError,
)

__all__ = [
    "__version__",
    "AnnotationError",
    "ConfigError",
    "ExternalServiceError",
    "RoIEvalError",
    "SchemaError",
]
