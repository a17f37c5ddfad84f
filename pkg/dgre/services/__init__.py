"""
Services module
"""
from dgre.services.pipeline import run_pipeline

__all__ = [
    "run_pipeline",
]
