"""HTTP service wrapping the probing toolkit."""

from .app import app

__all__ = ["app"]
