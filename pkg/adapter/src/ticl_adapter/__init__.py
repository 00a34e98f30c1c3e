"""Bridge from encoder/ASR models to the retrieval engine's file formats
and provider wire protocol."""

__version__ = "0.1.0"

from .extract import ExtractionJob, ExtractionResult, extract
from .models import pool_frames
from .server import ServiceConfig, build_app

__all__ = [
    "ExtractionJob",
    "ExtractionResult",
    "extract",
    "pool_frames",
    "ServiceConfig",
    "build_app",
]
