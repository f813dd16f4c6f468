"""Warning emission that bootstrap and Monte Carlo workers can silence.

``warnings.catch_warnings`` is process-global and not thread-safe, so the
resampling loops switch warnings off through a context variable instead.
Only warnings raised on the original sample reach the caller, in the order
they were raised.
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
import warnings

logger = logging.getLogger("didkit")

_quiet = contextvars.ContextVar("didkit_quiet", default=False)


class DidWarning(UserWarning):
    pass


class SmallCellWarning(DidWarning):
    pass


class SkippedPairWarning(DidWarning):
    pass


def emit(message: str, category=DidWarning) -> None:
    if _quiet.get():
        return
    logger.warning(message)
    warnings.warn(message, category, stacklevel=3)


@contextlib.contextmanager
def quiet():
    token = _quiet.set(True)
    try:
        yield
    finally:
        _quiet.reset(token)


def is_quiet() -> bool:
    return _quiet.get()
