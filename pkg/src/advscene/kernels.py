"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy implementations in ``_kernels_py`` are used. Set
``ADVSCENE_KERNELS=python`` to force the fallback.
"""
import importlib
import os
from types import ModuleType

_NAMES = {"cython": "advscene._ckernels", "python": "advscene._kernels_py"}


def load_backend(name: str) -> ModuleType:
    """Import a specific backend; raises ImportError if it is unavailable."""
    try:
        return importlib.import_module(_NAMES[name])
    except KeyError:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {sorted(_NAMES)}")


def available_backends() -> list:
    found = []
    for name in _NAMES:
        try:
            load_backend(name)
        except ImportError:
            continue
        found.append(name)
    return found


def _select() -> tuple:
    wanted = os.environ.get("ADVSCENE_KERNELS", "").strip().lower()
    if wanted == "python":
        return "python", load_backend("python")
    try:
        return "cython", load_backend("cython")
    except ImportError:
        if wanted == "cython":
            raise
        return "python", load_backend("python")


BACKEND, _impl = _select()

rasterize_streaks = _impl.rasterize_streaks
densify_nearest = _impl.densify_nearest
convex_clip_area = _impl.convex_clip_area
quad_overlap_matrix = _impl.quad_overlap_matrix
