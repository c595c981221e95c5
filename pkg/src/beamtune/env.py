"""Beamline tuning as an episodic MDP.

One step sets one tunable element: the observation is taken at the watch
point upstream of it, the action sets its parameters, and the bunch is then
tracked to the next watch point.

State layout (57 floats)::

    [0:16]   median, IQR, P10, P90 of x, x', y, y' (grouped by coordinate)
    [16:41]  5x5 x-y occupancy over the upstream aperture box, x-major
    [41]     survival N_t / N0
    [42]     element type: 0 quadrupole, 1 dipole
    [43:53]  upper triangle of the 4x4 population covariance of (x, x', y, y')
    [53:57]  Ax, Ay of the nearest aperture before, Ax, Ay after (metres)
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .lattice import (
    BeamlineGraph,
    Element,
    ElementKind,
    aperture_after,
    aperture_before,
    element_keys,
    first_watch,
    is_preprocessed,
    next_tunable,
    next_watch,
    preprocess,
)
from .tracking import Bunch, BunchGenParams, compile_segment, generate_bunch, track_compiled

STATE_DIM = 57
ACTION_DIM = 4
HIST_BINS = 5
DEFAULT_BORE = 0.025

STATS = slice(0, 16)
HISTOGRAM = slice(16, 41)
SURVIVAL = 41
ELEMENT_TYPE = 42
COVARIANCE = slice(43, 53)
APERTURES = slice(53, 57)

# half-width of the physical range mapped from a normalised action of +-1
PARAM_RANGES = {"K1": 25.0, "HKICK": 0.005, "VKICK": 0.005, "FSE": 0.005}
ACTION_SLOT = {"K1": 0, "HKICK": 1, "VKICK": 2, "FSE": 3}
KIND_PARAMS = {ElementKind.QUAD: ("K1", "HKICK", "VKICK"), ElementKind.SBEND: ("FSE",)}
PARAM_GROUP = {"K1": "K1", "HKICK": "KICKS", "VKICK": "KICKS", "FSE": "FSE"}
ALL_GROUPS = frozenset({"K1", "KICKS", "FSE"})
_ATTR = {"K1": "k1", "HKICK": "hkick", "VKICK": "vkick", "FSE": "fse"}

_TRIU = np.triu_indices(4)


def element_parameters(element: Element) -> dict[str, float]:
    return {p: float(getattr(element, _ATTR[p])) for p in KIND_PARAMS.get(element.kind, ())}


def set_parameters(element: Element, **values: float) -> Element:
    """Copy of a tunable ``element`` with the named parameters changed."""
    allowed = KIND_PARAMS.get(element.kind)
    if allowed is None:
        raise ValueError(f"{element.name} ({element.kind.value}) is not tunable")
    changes = {}
    for key, value in values.items():
        key = key.upper()
        if key not in allowed:
            raise ValueError(f"{key} is not a parameter of {element.kind.value} {element.name}")
        changes[_ATTR[key]] = float(value)
    return replace(element, **changes)


def zero_settings(element: Element) -> Element:
    if not element.tunable:
        return element
    return set_parameters(element, **{p: 0.0 for p in KIND_PARAMS[element.kind]})


def apply_action(element: Element, action, active_groups: Iterable[str] = ALL_GROUPS):
    """Map a normalised 4-vector onto ``element``.

    Quadrupoles read slots 0-2 (K1, HKICK, VKICK), dipoles slot 3 (FSE);
    every component is clamped to [-1, 1] first.  Parameters whose group is
    not in ``active_groups`` are set to 0.  Returns the updated element and
    the applied physical values.
    """
    if not element.tunable:
        raise ValueError(f"{element.name} ({element.kind.value}) is not tunable")
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(ACTION_DIM), -1.0, 1.0)
    active = set(active_groups)
    applied = {}
    for p in KIND_PARAMS[element.kind]:
        if PARAM_GROUP[p] in active:
            applied[p] = PARAM_RANGES[p] * float(a[ACTION_SLOT[p]])
        else:
            applied[p] = 0.0
    return set_parameters(element, **applied), applied


def compute_reward(n_prev: int, n_t: int, n0: int, t: int, m: int, n_min: int = 5) -> float:
    """Transmission reward for the step that produced ``n_t`` survivors.

    ``t`` is the 1-based index of the completed step, ``m`` the number of
    steps in the episode.
    """
    if n_prev <= 0:
        raise ValueError("n_prev must be positive; the episode should already have ended")
    if not (0 <= n_t <= n_prev <= n0):
        raise ValueError(f"inconsistent counts n_t={n_t}, n_prev={n_prev}, n0={n0}")
    if not (1 <= t <= m):
        raise ValueError(f"step index t={t} outside [1, {m}]")
    base = n_t / n0
    if n_t <= n_min:
        return base - math.sqrt(m * m - t * t) / m
    return base * (n_t / n_prev)


def _histogram(x: np.ndarray, y: np.ndarray, ax: float, ay: float) -> np.ndarray:
    """5x5 counts over [-ax, ax] x [-ay, ay]; outliers clamp to edge cells."""
    ix = np.clip(np.floor((x + ax) / (2.0 * ax) * HIST_BINS), 0, HIST_BINS - 1).astype(np.int64)
    iy = np.clip(np.floor((y + ay) / (2.0 * ay) * HIST_BINS), 0, HIST_BINS - 1).astype(np.int64)
    counts = np.bincount(ix * HIST_BINS + iy, minlength=HIST_BINS * HIST_BINS)
    return counts.astype(np.float64)


def aperture_context(graph: BeamlineGraph, pos: int, default_bore: float = DEFAULT_BORE):
    before = aperture_before(graph, pos)
    after = aperture_after(graph, pos)
    bx, by = (before.ax, before.ay) if before is not None else (default_bore, default_bore)
    cx, cy = (after.ax, after.ay) if after is not None else (default_bore, default_bore)
    return bx, by, cx, cy


def extract_state(
    bunch: Bunch, graph: BeamlineGraph, element_pos: int, default_bore: float = DEFAULT_BORE
) -> np.ndarray:
    """57-component observation for the element at ``element_pos``.

    If ``element_pos`` is not tunable (terminal watch), the element type of
    the last tunable upstream of it is used.
    """
    state = np.zeros(STATE_DIM)
    n = len(bunch)
    bx, by, cx, cy = aperture_context(graph, element_pos, default_bore)
    state[APERTURES] = (bx, by, cx, cy)
    state[SURVIVAL] = n / bunch.n0

    kind = graph.elements[element_pos].kind
    if not kind.tunable:
        upstream = [p for p in graph.tunable_index if p < element_pos]
        kind = graph.elements[upstream[-1]].kind if upstream else ElementKind.QUAD
    state[ELEMENT_TYPE] = 1.0 if kind is ElementKind.SBEND else 0.0

    if n == 0:
        return state
    q = bunch.particles[:, :4]
    p10, p25, p50, p75, p90 = np.percentile(q, [10, 25, 50, 75, 90], axis=0)
    state[STATS] = np.column_stack([p50, p75 - p25, p10, p90]).ravel()
    state[HISTOGRAM] = _histogram(q[:, 0], q[:, 2], bx, by) / n
    centred = q - q.mean(axis=0)
    cov = centred.T @ centred / n
    state[COVARIANCE] = cov[_TRIU]
    return state


@dataclass
class StepRecord:
    t: int
    element: str
    params: dict[str, float]
    n_survivors: int
    reward: float
    done: bool


@dataclass
class EpisodeRecord:
    steps: list[StepRecord] = field(default_factory=list)
    n0: int = 0
    transmission: float | None = None
    settings: dict[str, float] = field(default_factory=dict)

    @property
    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))


class EpisodeFinished(RuntimeError):
    pass


StateFn = Callable[[Bunch, BeamlineGraph, int, float], np.ndarray]


class BeamlineEnv:
    """Gym-style environment over a (preprocessed) beamline.

    ``active_prefix`` limits the episode to the first k tunable elements and
    ends it at the watch after the k-th; ``active_groups`` restricts which
    parameter groups ("K1", "KICKS", "FSE") the action may set.  Elements
    not stepped keep their reset value of 0.
    """

    def __init__(
        self,
        graph: BeamlineGraph,
        bunch_params: BunchGenParams,
        n_min: int = 5,
        default_bore: float = DEFAULT_BORE,
        active_prefix: int | None = None,
        active_groups: Iterable[str] = ALL_GROUPS,
        state_fn: StateFn = extract_state,
        backend: str | None = None,
    ):
        if not is_preprocessed(graph):
            graph = preprocess(graph)
        if not graph.tunable_index:
            raise ValueError("lattice has no tunable elements")
        if n_min < 1:
            raise ValueError("n_min must be >= 1")
        prefix = len(graph.tunable_index) if active_prefix is None else int(active_prefix)
        if not 1 <= prefix <= len(graph.tunable_index):
            raise ValueError(f"active_prefix must be in [1, {len(graph.tunable_index)}]")
        groups = frozenset(g.upper() for g in active_groups)
        if not groups <= ALL_GROUPS:
            raise ValueError(f"unknown parameter groups {sorted(groups - ALL_GROUPS)}")
        self.graph = graph
        self.bunch_params = bunch_params
        self.n_min = n_min
        self.default_bore = default_bore
        self.active_groups = groups
        self.state_fn = state_fn
        self.backend = backend
        self.tunables = graph.tunable_index[:prefix]
        self.m = prefix
        self.end_watch = next_watch(graph, self.tunables[-1])
        self.keys = element_keys(graph, graph.tunable_index)
        self._initial = generate_bunch(bunch_params)
        self._elements: list[Element] = []
        self._done = True
        self.record: EpisodeRecord | None = None

    @property
    def n0(self) -> int:
        return self.bunch_params.n0

    @property
    def elements(self) -> tuple[Element, ...]:
        return tuple(self._elements)

    def current_graph(self) -> BeamlineGraph:
        return BeamlineGraph(tuple(self._elements), self.graph.line_name)

    def _track(self, start: int, stop: int) -> None:
        seg = compile_segment(self._elements[start : stop + 1])
        self.bunch = track_compiled(self.bunch, seg, self.backend)

    def _state(self, pos: int) -> np.ndarray:
        return self.state_fn(self.bunch, self.graph, pos, self.default_bore)

    def reset(self) -> np.ndarray:
        self._elements = [zero_settings(e) for e in self.graph.elements]
        self.bunch = self._initial.copy()
        self.watch = first_watch(self.graph)
        self._track(0, self.watch)
        self.t = 0
        self.n_prev = len(self.bunch)
        self.record = EpisodeRecord(n0=self.n0)
        self._done = False
        self.state = self._state(next_tunable(self.graph, self.watch))
        return self.state

    def step(self, action):
        if self._done:
            raise EpisodeFinished("step() called on a finished episode; call reset()")
        pos = next_tunable(self.graph, self.watch)
        element, applied = apply_action(self._elements[pos], action, self.active_groups)
        self._elements[pos] = element
        w_next = next_watch(self.graph, pos)
        self._track(self.watch + 1, w_next)
        n = len(self.bunch)
        t1 = self.t + 1
        reward = compute_reward(self.n_prev, n, self.n0, t1, self.m, self.n_min)
        done = n <= self.n_min or t1 == self.m
        if t1 < self.m:
            self.state = self._state(next_tunable(self.graph, w_next))
        else:
            self.state = self._state(w_next)
        info = StepRecord(t1, self.keys[pos], dict(applied), n, reward, done)
        self.record.steps.append(info)
        for p, v in applied.items():
            self.record.settings[f"{self.keys[pos]}.{p}"] = v
        if done:
            self.record.transmission = n / self.n0
        self.watch = w_next
        self.t = t1
        self.n_prev = n
        self._done = done
        return self.state, reward, done, info

    def settings_vector(self) -> np.ndarray:
        """Physical parameters of every tunable element (all stages)."""
        return settings_to_vector(self.graph, self._elements)


def parameter_layout(graph: BeamlineGraph) -> list[tuple[int, str]]:
    """(position, parameter) per entry of the flat parameter vector."""
    return [(p, name) for p in graph.tunable_index for name in KIND_PARAMS[graph.elements[p].kind]]


def parameter_names(graph: BeamlineGraph) -> list[str]:
    keys = element_keys(graph, graph.tunable_index)
    return [f"{keys[p]}.{name}" for p, name in parameter_layout(graph)]


def parameter_bounds(graph: BeamlineGraph) -> np.ndarray:
    """(D, 2) physical lower/upper bounds of the flat vector."""
    half = np.array([PARAM_RANGES[name] for _, name in parameter_layout(graph)])
    return np.column_stack([-half, half])


def settings_to_vector(graph: BeamlineGraph, elements: Sequence[Element] | None = None) -> np.ndarray:
    elements = graph.elements if elements is None else elements
    return np.array([getattr(elements[p], _ATTR[name]) for p, name in parameter_layout(graph)], dtype=float)


def configure(graph: BeamlineGraph, vector) -> BeamlineGraph:
    """Graph with every tunable parameter set from the flat physical vector."""
    vector = np.asarray(vector, dtype=float)
    layout = parameter_layout(graph)
    if vector.shape != (len(layout),):
        raise ValueError(f"expected a vector of length {len(layout)}, got shape {vector.shape}")
    per_pos: dict[int, dict[str, float]] = {}
    for (p, name), v in zip(layout, vector):
        per_pos.setdefault(p, {})[name] = float(v)
    elements = list(graph.elements)
    for p, values in per_pos.items():
        elements[p] = set_parameters(elements[p], **values)
    return BeamlineGraph(tuple(elements), graph.line_name)


class TransmissionObjective:
    """Full-beamline transmission of a flat parameter vector.

    Fixed elements are compiled once; only tunable maps are rebuilt per call.
    """

    def __init__(self, graph: BeamlineGraph, bunch_params: BunchGenParams, backend: str | None = None):
        self.graph = graph
        self.bunch = generate_bunch(bunch_params)
        self.backend = backend
        self.layout = parameter_layout(graph)
        self.bounds = parameter_bounds(graph)
        self._base = compile_segment(graph.elements)
        self.evaluations = 0

    @property
    def dim(self) -> int:
        return len(self.layout)

    def survivors(self, vector) -> Bunch:
        g = configure(self.graph, vector)
        tun = compile_segment([g.elements[p] for p in g.tunable_index])
        base = self._base
        mats, offs, kicks = base.mats.copy(), base.offs.copy(), base.kicks.copy()
        idx = list(g.tunable_index)
        mats[idx], offs[idx], kicks[idx] = tun.mats, tun.offs, tun.kicks
        seg = type(base)(mats, offs, kicks, base.apx, base.apy, base.lengths, base.names)
        return track_compiled(self.bunch, seg, self.backend)

    def __call__(self, vector) -> float:
        self.evaluations += 1
        return len(self.survivors(vector)) / self.bunch.n0


def transmission(graph: BeamlineGraph, bunch_params: BunchGenParams, vector=None, backend=None) -> float:
    """Transmission of ``graph`` (optionally reconfigured by ``vector``)."""
    if vector is not None:
        graph = configure(graph, vector)
    out = track_compiled(generate_bunch(bunch_params), compile_segment(graph.elements), backend)
    return len(out) / bunch_params.n0


EPISODE_LOG_COLUMNS = [
    "episode",
    "step",
    "element",
    "K1",
    "HKICK",
    "VKICK",
    "FSE",
    "n_survivors",
    "reward",
    "done",
    "transmission",
]


def episode_rows(episode: int, record: EpisodeRecord) -> list[dict]:
    rows = []
    for s in record.steps:
        row = {"episode": episode, "step": s.t, "element": s.element}
        for p in ("K1", "HKICK", "VKICK", "FSE"):
            row[p] = repr(s.params[p]) if p in s.params else ""
        row["n_survivors"] = s.n_survivors
        row["reward"] = repr(s.reward)
        row["done"] = int(s.done)
        row["transmission"] = repr(record.transmission) if s.done and record.transmission is not None else ""
        rows.append(row)
    return rows


def append_episode_log(path, episode: int, record: EpisodeRecord) -> None:
    """Append an episode to the per-step CSV log, writing the header if new."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EPISODE_LOG_COLUMNS)
        if new:
            writer.writeheader()
        writer.writerows(episode_rows(episode, record))
