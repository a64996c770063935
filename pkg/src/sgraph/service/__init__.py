"""HTTP service exposing evaluation, perturbation, inference and training."""

from .app import app, create_app

__all__ = ["app", "create_app"]
