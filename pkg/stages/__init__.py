"""Pipeline stages sharing the prefixed-log, fail-soft batch base class."""

from .base import BaseStage

__all__ = ["BaseStage"]
