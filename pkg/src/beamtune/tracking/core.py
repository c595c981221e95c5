"""Bunch generation and segment tracking."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..lattice import Element, ElementKind
from . import kernels
from .maps import element_map

# column indices of a particle row
X, XP, Y, YP, S, DELTA = range(6)
TRANSVERSE = (X, XP, Y, YP)


@dataclass(frozen=True)
class BunchGenParams:
    """Uncorrelated Gaussian bunch: ``sigma`` = std of (x, x', y, y', delta)."""

    n0: int
    sigma: tuple[float, float, float, float, float]
    seed: int = 0

    def __post_init__(self):
        if int(self.n0) < 1:
            raise ValueError("n0 must be >= 1")
        sigma = tuple(float(v) for v in self.sigma)
        if len(sigma) != 5:
            raise ValueError("sigma needs 5 entries: x, xp, y, yp, delta")
        if any(not v >= 0.0 for v in sigma):
            raise ValueError("sigma entries must be >= 0")
        object.__setattr__(self, "n0", int(self.n0))
        object.__setattr__(self, "sigma", sigma)

    def with_n0(self, n0: int) -> "BunchGenParams":
        return BunchGenParams(n0, self.sigma, self.seed)


@dataclass
class Bunch:
    """Surviving particles as an (N, 6) array, plus the initial count."""

    particles: np.ndarray
    n0: int
    seed: int | None = None

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=np.float64).reshape(-1, 6)
        if self.particles.shape[0] > self.n0:
            raise ValueError("more particles than n0")

    def __len__(self) -> int:
        return self.particles.shape[0]

    @property
    def survival(self) -> float:
        return len(self) / self.n0

    def copy(self) -> "Bunch":
        return Bunch(self.particles.copy(), self.n0, self.seed)


def make_rng(seed: int) -> np.random.Generator:
    """Philox4x64-10 counter-based generator, portable across platforms."""
    return np.random.Generator(np.random.Philox(int(seed)))


def generate_bunch(params: BunchGenParams) -> Bunch:
    """Draw ``n0`` particles; normals come from the generator's ziggurat
    sampler, filled row-major as an (n0, 5) block, so a larger bunch with the
    same seed starts with the particles of a smaller one."""
    z = make_rng(params.seed).standard_normal((params.n0, 5))
    p = np.zeros((params.n0, 6))
    p[:, [X, XP, Y, YP, DELTA]] = z * np.asarray(params.sigma)
    return Bunch(p, params.n0, params.seed)


@lru_cache(maxsize=8192)
def _element_arrays(element: Element):
    tm = element_map(element)
    kick = (element.hkick, element.vkick) if element.kind is ElementKind.QUAD else (0.0, 0.0)
    if element.kind is ElementKind.APERTURE:
        ap = (element.ax, element.ay)
    else:
        ap = (0.0, 0.0)
    return tm.matrix, tm.offset, kick, ap, element.length


@dataclass(frozen=True)
class CompiledSegment:
    """Stacked per-element arrays consumed by the kernels."""

    mats: np.ndarray
    offs: np.ndarray
    kicks: np.ndarray
    apx: np.ndarray
    apy: np.ndarray
    lengths: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return self.mats.shape[0]


def compile_segment(segment: Sequence[Element]) -> CompiledSegment:
    n = len(segment)
    mats = np.empty((n, 6, 6))
    offs = np.empty((n, 6))
    kicks = np.empty((n, 2))
    apx = np.empty(n)
    apy = np.empty(n)
    lengths = np.empty(n)
    for k, e in enumerate(segment):
        mats[k], offs[k], kicks[k], (apx[k], apy[k]), lengths[k] = _element_arrays(e)
    return CompiledSegment(mats, offs, kicks, apx, apy, lengths, tuple(e.name for e in segment))


def track_compiled(bunch: Bunch, seg: CompiledSegment, backend: str | None = None) -> Bunch:
    if len(seg) == 0 or len(bunch) == 0:
        return bunch.copy()
    kernel = kernels.get_kernel(backend)
    out, _ = kernel(bunch.particles, seg.mats, seg.offs, seg.kicks, seg.apx, seg.apy, seg.lengths)
    return Bunch(out, bunch.n0, bunch.seed)


def track_segment(bunch: Bunch, segment: Sequence[Element], backend: str | None = None) -> Bunch:
    """Propagate ``bunch`` through ``segment`` in order.

    Per element: linear map (plus map offset), exit kicks for quadrupoles,
    nominal length added to ``s``, then culling if the element is an
    aperture.  Survivor order is preserved.
    """
    return track_compiled(bunch, compile_segment(segment), backend)


def apply_kicks(bunch: Bunch, element: Element) -> Bunch:
    """Thin corrector kick of a quadrupole: x' += HKICK, y' += VKICK."""
    if element.kind is not ElementKind.QUAD:
        raise ValueError(f"{element.name}: kicks apply to QUAD elements only")
    p = bunch.particles.copy()
    p[:, XP] += element.hkick
    p[:, YP] += element.vkick
    return Bunch(p, bunch.n0, bunch.seed)


def cull_aperture(bunch: Bunch, ax: float, ay: float) -> Bunch:
    """Keep particles with x^2/ax^2 + y^2/ay^2 <= 1, in order."""
    if not (ax > 0 and ay > 0):
        raise ValueError("aperture semi-axes must be > 0")
    u = bunch.particles[:, X] / ax
    v = bunch.particles[:, Y] / ay
    keep = u * u + v * v <= 1.0
    return Bunch(bunch.particles[keep], bunch.n0, bunch.seed)


def bunch_stats(bunch: Bunch) -> dict[str, float]:
    """Mean and population std of the transverse coordinates."""
    out = {"n_survivors": len(bunch)}
    names = ("x", "xp", "y", "yp")
    for name, col in zip(names, TRANSVERSE):
        if len(bunch):
            v = bunch.particles[:, col]
            out[f"mean_{name}"] = float(v.mean())
            out[f"std_{name}"] = float(v.std())
        else:
            out[f"mean_{name}"] = 0.0
            out[f"std_{name}"] = 0.0
    return out


def beam_profile(elements: Sequence[Element], bunch: Bunch, at=None, backend=None) -> list[dict]:
    """Track element by element, recording :func:`bunch_stats` after each
    element (or only after positions listed in ``at``)."""
    rows = []
    s = 0.0
    positions = None if at is None else set(at)
    for pos, e in enumerate(elements):
        bunch = track_segment(bunch, [e], backend)
        s += e.length
        if positions is None or pos in positions:
            rows.append({"pos": pos, "element": e.name, "s": s, **bunch_stats(bunch)})
    return rows
