"""Backend selection for the hot loops.

Numba is used when importable unless ``FRACDIL_DISABLE_NUMBA`` is set to a
truthy value, in which case every kernel runs through the vectorised numpy
implementation instead.
"""
import os

_FLAG = "FRACDIL_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, identity decorator otherwise."""
    if HAVE_NUMBA:
        import numba

        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]):
        return args[0]

    def _wrap(f):
        return f

    return _wrap
