"""Access zones keeping autonomic managers on the target model.

Manager code runs inside :func:`manager_zone`.  Guarded objects (the source
model and the container) call :func:`check_access`, which raises unless an
adaptation operator has temporarily re-entered :func:`platform_zone`.
"""

from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar

from .errors import DirectAccessViolation

_zone: ContextVar[str] = ContextVar("rtmodels_zone", default="platform")


def current_zone() -> str:
    return _zone.get()


@contextmanager
def _enter(name: str):
    token = _zone.set(name)
    try:
        yield
    finally:
        _zone.reset(token)


def manager_zone():
    return _enter("manager")


def platform_zone():
    return _enter("platform")


def check_access(what: str) -> None:
    if _zone.get() == "manager":
        raise DirectAccessViolation(f"manager code accessed {what} directly")
