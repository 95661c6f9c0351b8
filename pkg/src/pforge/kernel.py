"""Kernel backend selection: compiled extension if built, else pure Python."""

try:  # pragma: no cover - depends on build environment
    from . import _kernel as _impl
except ImportError:  # pragma: no cover
    from . import _purekernel as _impl

reduce_word = _impl.reduce_word
concat = _impl.concat
invert_word = _impl.invert_word
substitute = _impl.substitute
cyclic_bounds = _impl.cyclic_bounds
count_letters = _impl.count_letters


def backend_name() -> str:
    return _impl.BACKEND
