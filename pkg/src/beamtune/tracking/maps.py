"""First-order 6x6 transfer maps.

Coordinates are ``(x, x', y, y', s, delta)``.  The ``s`` row of a map holds
only the path-length *deviation*; the nominal element length is added by the
tracker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..lattice import Element, ElementKind

K1_LIMIT = 1.0e4

# standard form for the transverse (x, x', y, y') block
J4 = np.array(
    [[0.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -1.0, 0.0]]
)


@dataclass(frozen=True)
class TransferMap:
    matrix: np.ndarray
    offset: np.ndarray

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return coords @ self.matrix.T + self.offset


def drift_matrix(length: float) -> np.ndarray:
    r = np.eye(6)
    r[0, 1] = length
    r[2, 3] = length
    return r


def _focusing_block(k: float, length: float) -> np.ndarray:
    sk = math.sqrt(k)
    phi = sk * length
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, s / sk], [-sk * s, c]])


def _defocusing_block(k: float, length: float) -> np.ndarray:
    sk = math.sqrt(k)
    phi = sk * length
    c, s = math.cosh(phi), math.sinh(phi)
    return np.array([[c, s / sk], [sk * s, c]])


def quad_matrix(k1: float, length: float) -> np.ndarray:
    """Thick quadrupole; ``k1 > 0`` focuses horizontally."""
    if abs(k1) > K1_LIMIT:
        raise ValueError(f"|K1| = {abs(k1)} exceeds the supported range {K1_LIMIT}")
    if k1 == 0.0 or length == 0.0:
        return drift_matrix(length)
    r = np.eye(6)
    if k1 > 0:
        r[0:2, 0:2] = _focusing_block(k1, length)
        r[2:4, 2:4] = _defocusing_block(k1, length)
    else:
        r[0:2, 0:2] = _defocusing_block(-k1, length)
        r[2:4, 2:4] = _focusing_block(-k1, length)
    return r


def sbend_matrix(angle: float, length: float) -> np.ndarray:
    """Sector bend with dispersion and path-length terms (no edge focusing)."""
    if angle == 0.0 or length == 0.0:
        return drift_matrix(length)
    rho = length / angle
    c, s = math.cos(angle), math.sin(angle)
    r = np.eye(6)
    r[0, 0] = c
    r[0, 1] = rho * s
    r[1, 0] = -s / rho
    r[1, 1] = c
    r[0, 5] = rho * (1.0 - c)
    r[1, 5] = s
    r[2, 3] = length
    r[4, 0] = s
    r[4, 1] = rho * (1.0 - c)
    r[4, 5] = rho * (angle - s)
    return r


def element_map(element: Element) -> TransferMap:
    """Linear map of one element.  Corrector kicks are not included."""
    if element.length < 0:
        raise ValueError(f"{element.name}: negative length")
    offset = np.zeros(6)
    kind = element.kind
    if kind is ElementKind.QUAD:
        matrix = quad_matrix(element.k1, element.length)
    elif kind is ElementKind.SBEND:
        matrix = sbend_matrix(element.angle, element.length)
        # first-order field error: thin exit kick
        offset[1] = -element.angle * element.fse
    else:
        matrix = drift_matrix(element.length)
    return TransferMap(matrix, offset)


def symplectic_residual(matrix: np.ndarray) -> float:
    """Max-abs residual of R^T J R - J on the transverse 4x4 block."""
    m = np.asarray(matrix)[:4, :4]
    return float(np.max(np.abs(m.T @ J4 @ m - J4)))
