"""Selection between numba-compiled kernels and the plain numpy path.

``GOALADAPT_NUMBA=0`` forces the numpy path; any other value (or unset) uses
numba when it can be imported. ``GOALADAPT_THREADS`` caps the numba thread
pool.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

HAVE_NUMBA = numba is not None


def _flag():
    return os.environ.get("GOALADAPT_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


def use_numba():
    """True when the compiled kernels should be used."""
    return HAVE_NUMBA and _flag()


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def configure_threads():
    n = os.environ.get("GOALADAPT_THREADS")
    if n and HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


configure_threads()
