"""Reference inference microservice for generator candidates and entailment
scoring behind the versioned HTTP protocol."""

from .config import BackendConfig
from .service import create_app
from .stub import load_transcript

__all__ = ["BackendConfig", "create_app", "load_transcript"]

__version__ = "0.1.0"
