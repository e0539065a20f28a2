"""Backend selection for the simulation hot loop.

The compiled extension is used when it imports; otherwise the pure-Python
reference runs.  Setting ``FUZZY_HINF_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from . import _kernels_py
from .model import Grade, TsDelayModel

log = logging.getLogger(__name__)

GRADE_CODES = {
    "logistic_complement": 0,
    "logistic": 1,
    "gaussian": 2,
    "triangular": 3,
    "constant": 4,
    "table": 5,
}

_BACKENDS = {"python": _kernels_py}
try:
    from . import _kernels as _compiled

    _BACKENDS["cython"] = _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

if os.environ.get("FUZZY_HINF_PURE_PYTHON") == "1" or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"
log.debug("simulation kernel backend: %s", BACKEND)


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str | None = None):
    """Module exposing ``integrate``; ``None`` means the selected default."""
    name = BACKEND if name is None else name
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None


def pack_grades(grades: list[Grade]):
    """Flatten grades into the ``codes, params, tx, ty, toff, tlen`` arrays."""
    p = len(grades)
    codes = np.zeros(p, dtype=np.int_)
    params = np.zeros((p, 3))
    tx, ty = [], []
    toff = np.zeros(p, dtype=np.int_)
    tlen = np.zeros(p, dtype=np.int_)
    for i, g in enumerate(grades):
        codes[i] = GRADE_CODES[g.family]
        if g.family == "table":
            toff[i] = len(tx)
            tlen[i] = len(g.params["breakpoints"])
            tx.extend(g.params["breakpoints"])
            ty.extend(g.params["values"])
        else:
            vals = list(g.params.values())
            params[i, : len(vals)] = vals
    if not tx:
        tx, ty = [0.0], [0.0]
    return codes, params, np.asarray(tx, float), np.asarray(ty, float), toff, tlen


def pack_model(model: TsDelayModel) -> dict[str, np.ndarray]:
    return {k: np.ascontiguousarray(model.stacked(k)) for k in ("A", "A_tau", "B", "C", "C_tau", "D")}
