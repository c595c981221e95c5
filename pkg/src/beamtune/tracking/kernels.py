"""Particle-push kernels.

Two implementations of the same loop: a numba ``@njit`` kernel that pushes
one particle through the whole segment at a time, and a vectorised numpy
path that pushes the whole bunch one element at a time.  Both perform the
same floating-point operations in the same order, so results agree
bit-for-bit on IEEE hardware.

Set ``BEAMTUNE_BACKEND=numpy`` to force the numpy path; the default is
``numba`` when it can be imported.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def track_numpy(coords, mats, offs, kicks, apx, apy, lengths):
    """Push ``coords`` (N, 6) through a compiled segment.

    Returns ``(survivors, mask)`` where ``mask`` marks input rows that
    survived, and ``survivors`` holds their final coordinates in input order.
    """
    x = np.array(coords, dtype=np.float64, copy=True)
    alive = np.arange(x.shape[0])
    for k in range(mats.shape[0]):
        r = mats[k]
        new = np.empty_like(x)
        for i in range(6):
            acc = r[i, 0] * x[:, 0]
            for j in range(1, 6):
                acc = acc + r[i, j] * x[:, j]
            new[:, i] = acc + offs[k, i]
        new[:, 1] = new[:, 1] + kicks[k, 0]
        new[:, 3] = new[:, 3] + kicks[k, 1]
        new[:, 4] = new[:, 4] + lengths[k]
        if apx[k] > 0.0:
            u = new[:, 0] / apx[k]
            v = new[:, 2] / apy[k]
            keep = u * u + v * v <= 1.0
            new = new[keep]
            alive = alive[keep]
        x = new
    mask = np.zeros(coords.shape[0], dtype=np.bool_)
    mask[alive] = True
    return x, mask


def _track_one(p, mats, offs, kicks, apx, apy, lengths, tmp):
    for k in range(mats.shape[0]):
        for i in range(6):
            acc = mats[k, i, 0] * p[0]
            for j in range(1, 6):
                acc = acc + mats[k, i, j] * p[j]
            tmp[i] = acc + offs[k, i]
        tmp[1] = tmp[1] + kicks[k, 0]
        tmp[3] = tmp[3] + kicks[k, 1]
        tmp[4] = tmp[4] + lengths[k]
        for i in range(6):
            p[i] = tmp[i]
        if apx[k] > 0.0:
            u = p[0] / apx[k]
            v = p[2] / apy[k]
            if u * u + v * v > 1.0:
                return False
    return True


if HAVE_NUMBA:
    _track_one_jit = numba.njit(cache=True, nogil=True)(_track_one)

    @numba.njit(cache=True, nogil=True)
    def _track_loop_jit(coords, mats, offs, kicks, apx, apy, lengths):
        n = coords.shape[0]
        out = np.empty((n, 6))
        mask = np.zeros(n, dtype=np.bool_)
        p = np.empty(6)
        tmp = np.empty(6)
        m = 0
        for a in range(n):
            for i in range(6):
                p[i] = coords[a, i]
            if _track_one_jit(p, mats, offs, kicks, apx, apy, lengths, tmp):
                mask[a] = True
                for i in range(6):
                    out[m, i] = p[i]
                m += 1
        return out[:m].copy(), mask

    def track_numba(coords, mats, offs, kicks, apx, apy, lengths):
        coords = np.ascontiguousarray(coords, dtype=np.float64).reshape(-1, 6)
        return _track_loop_jit(coords, mats, offs, kicks, apx, apy, lengths)

else:  # pragma: no cover
    track_numba = None


_BACKENDS = {"numpy": track_numpy}
if HAVE_NUMBA:
    _BACKENDS["numba"] = track_numba


def default_backend() -> str:
    name = os.environ.get("BEAMTUNE_BACKEND", "").strip().lower()
    if name:
        if name not in _BACKENDS:
            raise ValueError(f"BEAMTUNE_BACKEND={name!r}; choose from {sorted(_BACKENDS)}")
        return name
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = default_backend()


def get_kernel(name: str | None = None):
    return _BACKENDS[name or BACKEND]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)
