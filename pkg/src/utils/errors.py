"""Exception hierarchy shared by the numerics, training and CLI layers.

The CLI maps ConfigError (and CheckpointError) to exit code 2 and
TrainingAborted to exit code 3.
"""
from __future__ import annotations

from typing import Iterable, List, Sequence


class BridgecraftError(Exception):
    """Base class for all package errors."""


class UsageError(BridgecraftError, ValueError):
    """A precondition of an operation was violated by the caller."""


class DomainError(UsageError):
    """A value lies outside the domain of a density (e.g. non-positive variance)."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class ConfigError(BridgecraftError):
    """Invalid run configuration; carries one message per offending field."""

    def __init__(self, message: str, fields: Iterable[str] | None = None):
        super().__init__(message)
        self.fields: List[str] = list(fields or [])

    def __str__(self) -> str:
        base = super().__str__()
        if not self.fields:
            return base
        return base + "\n" + "\n".join(f"  - {f}" for f in self.fields)


class CheckpointError(ConfigError):
    """Checkpoint format version or parameter shapes do not match."""


class DivergedError(BridgecraftError):
    """A rollout produced a non-finite state."""

    def __init__(self, step: int, trajectories: Sequence[int] = ()):
        self.step = int(step)
        self.trajectories = [int(i) for i in trajectories]
        shown = self.trajectories[:5]
        super().__init__(f"non-finite state at step {self.step} (trajectories {shown}{'...' if len(self.trajectories) > 5 else ''})")


class TrainingAborted(BridgecraftError):
    """Training gave up after repeated divergence."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


__all__ = [
    "BridgecraftError",
    "UsageError",
    "DomainError",
    "ConfigError",
    "CheckpointError",
    "DivergedError",
    "TrainingAborted",
]
