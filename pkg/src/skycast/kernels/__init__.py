"""Recurrent-scan kernels with a compiled fast path.

Two interchangeable backends implement the same ``lstm_forward`` /
``lstm_backward`` contract: ``pure`` (numpy, always available) and
``fast`` (Cython + BLAS, built at install time when a compiler exists).
The fast backend is picked automatically when importable. Set the
environment variable ``SKYCAST_KERNELS`` to ``pure`` or ``fast`` to force
one; forcing ``fast`` on a build without the extension is an error.
"""

from __future__ import annotations

import os

from . import pure

__all__ = ["lstm_forward", "lstm_backward", "backend_name", "available_backends"]

_ENV_VAR = "SKYCAST_KERNELS"


def _select():
    forced = os.environ.get(_ENV_VAR, "").strip().lower()
    if forced not in ("", "pure", "fast"):
        raise ImportError(
            f"{_ENV_VAR} must be 'pure' or 'fast', got {forced!r}"
        )
    if forced == "pure":
        return "pure", pure
    try:
        from . import _fast
    except ImportError:
        if forced == "fast":
            raise ImportError(
                f"{_ENV_VAR}=fast but the compiled extension is not available"
            ) from None
        return "pure", pure
    return "fast", _fast


_name, _impl = _select()
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward


def backend_name() -> str:
    """Which backend import-time selection chose: 'pure' or 'fast'."""
    return _name


def available_backends() -> dict[str, object]:
    """Importable backend modules keyed by name (for tests/benchmarks)."""
    out: dict[str, object] = {"pure": pure}
    try:
        from . import _fast
        out["fast"] = _fast
    except ImportError:
        pass
    return out
