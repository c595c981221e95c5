"""Stage-learning driver: a sequence of DDPG runs over growing beamline
prefixes and parameter groups, sharing weights and replay data."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..env import (
    ALL_GROUPS,
    DEFAULT_BORE,
    KIND_PARAMS,
    PARAM_GROUP,
    BeamlineEnv,
    EpisodeRecord,
    TransmissionObjective,
    append_episode_log,
    parameter_names,
)
from ..lattice import BeamlineGraph, ElementKind, is_preprocessed, preprocess
from ..tracking import BunchGenParams, make_rng
from .ddpg import ACTION_DIM, DdpgAgent, DdpgConfig


@dataclass(frozen=True)
class Stage:
    """``prefix`` is the number of leading tunable elements the agent steps
    (None means all of them); ``groups`` the parameter groups it may set."""

    prefix: int | None
    groups: frozenset = ALL_GROUPS
    episodes: int = 1000
    carry_weights: bool = True
    carry_buffer: bool = True

    def __post_init__(self):
        groups = frozenset(g.upper() for g in self.groups)
        if not groups or not groups <= ALL_GROUPS:
            raise ValueError(f"stage groups must be a non-empty subset of {sorted(ALL_GROUPS)}")
        object.__setattr__(self, "groups", groups)
        if self.prefix is not None and self.prefix < 1:
            raise ValueError("stage prefix must be >= 1")
        if self.episodes < 0:
            raise ValueError("stage episode budget must be >= 0")


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("a stage plan needs at least one stage")

    @property
    def total_episodes(self) -> int:
        return sum(s.episodes for s in self.stages)

    def resolved_prefixes(self, graph: BeamlineGraph) -> list[int]:
        n = len(graph.tunable_index)
        out = []
        for s in self.stages:
            p = n if s.prefix is None else s.prefix
            if p > n:
                raise ValueError(f"stage prefix {p} exceeds the {n} tunable elements")
            out.append(p)
        return out

    def trainable(self, graph: BeamlineGraph, k: int) -> set[tuple[int, str]]:
        """(tunable ordinal, parameter) pairs stage ``k`` may change."""
        stage = self.stages[k]
        prefix = self.resolved_prefixes(graph)[k]
        out = set()
        for i, pos in enumerate(graph.tunable_index[:prefix]):
            for p in KIND_PARAMS[graph.elements[pos].kind]:
                if PARAM_GROUP[p] in stage.groups:
                    out.add((i, p))
        return out

    def validate(self, graph: BeamlineGraph) -> None:
        prefixes = self.resolved_prefixes(graph)
        if any(b < a for a, b in zip(prefixes, prefixes[1:])):
            raise ValueError("stage prefixes must be non-decreasing")
        for a, b in zip(self.stages, self.stages[1:]):
            if not a.groups <= b.groups:
                raise ValueError("stage parameter groups must be non-decreasing")
        if prefixes[-1] != len(graph.tunable_index) or self.stages[-1].groups != ALL_GROUPS:
            raise ValueError("the final stage must cover the full beamline and all parameter groups")


def quad_prefix(graph: BeamlineGraph, n_quads: int) -> int:
    """Smallest tunable prefix containing the first ``n_quads`` quadrupoles."""
    seen = 0
    for i, pos in enumerate(graph.tunable_index):
        if graph.elements[pos].kind is ElementKind.QUAD:
            seen += 1
            if seen == n_quads:
                return i + 1
    return len(graph.tunable_index)


def default_plan(graph: BeamlineGraph, episodes=(1000, 1000, 3000), n_quads: int = 3) -> StagePlan:
    """Three stages: leading quadrupoles with K1 only, the same with
    steering added, then the whole line with every parameter."""
    e1, e2, e3 = episodes
    prefix = quad_prefix(graph, n_quads)
    return StagePlan(
        (
            Stage(prefix, frozenset({"K1"}), e1),
            Stage(prefix, frozenset({"K1", "KICKS"}), e2),
            Stage(None, ALL_GROUPS, e3),
        )
    )


def direct_plan(episodes: int) -> StagePlan:
    return StagePlan((Stage(None, ALL_GROUPS, episodes),))


@dataclass
class EvalRecord:
    """A noise-free evaluation episode.  ``transmission`` is the full-line
    value of the settings it produced; ``stage_transmission`` is survivors
    at the stage's final watch over N0."""

    episode: int
    stage: int
    transmission: float
    stage_transmission: float
    vector: np.ndarray
    cumulative_max: float = 0.0


@dataclass
class TrainResult:
    best_vector: np.ndarray
    best_transmission: float
    best_episode: int
    evaluations: list[EvalRecord] = field(default_factory=list)
    parameter_names: list[str] = field(default_factory=list)
    agent: DdpgAgent | None = None
    episodes: int = 0


def _greedy_episode(env: BeamlineEnv, agent: DdpgAgent) -> EpisodeRecord:
    s = env.reset()
    done = False
    while not done:
        s, _, done, _ = env.step(agent.act(s, 0.0))
    return env.record


def train(
    graph: BeamlineGraph,
    bunch_params: BunchGenParams,
    config: DdpgConfig = DdpgConfig(),
    plan: StagePlan | None = None,
    n_min: int = 5,
    default_bore: float = DEFAULT_BORE,
    backend: str | None = None,
    episode_log=None,
    checkpoint_dir=None,
    save_buffer: bool = False,
    callback: Callable[[EvalRecord], None] | None = None,
    stage_callback: Callable[[str, int, DdpgAgent], None] | None = None,
) -> TrainResult:
    """Run ``plan`` (default: :func:`default_plan` sized by ``config.episodes``).

    Before any training the zero configuration is scored as episode 0, so a
    plan with no episodes returns the untuned lattice.  Afterwards a greedy
    episode is scored after every ``config.eval_every`` training episodes
    and at the end of each stage.  ``stage_callback("start" | "end", k,
    agent)`` is invoked around each stage.
    """
    if not is_preprocessed(graph):
        graph = preprocess(graph)
    if plan is None:
        e = config.episodes
        plan = default_plan(graph, (e // 4, e // 4, e - 2 * (e // 4)))
    plan.validate(graph)
    prefixes = plan.resolved_prefixes(graph)

    objective = TransmissionObjective(graph, bunch_params, backend)
    names = parameter_names(graph)
    zero = np.zeros(objective.dim)
    t0 = objective(zero)
    evals = [EvalRecord(0, 0, t0, t0, zero, t0)]
    best = evals[0]
    if callback is not None:
        callback(best)

    agent = DdpgAgent(config)
    explore_rng = make_rng(config.seed + 2)
    episode = 0
    steps = 0

    def evaluate(env, k):
        nonlocal best
        rec = _greedy_episode(env, agent)
        vec = env.settings_vector()
        t = objective(vec)
        cm = max(evals[-1].cumulative_max, t)
        ev = EvalRecord(episode, k, t, rec.transmission, vec, cm)
        evals.append(ev)
        if t > best.transmission:
            best = ev
        if callback is not None:
            callback(ev)

    for k, stage in enumerate(plan.stages, start=1):
        if k > 1 and not stage.carry_weights:
            old = agent.buffer
            agent = DdpgAgent(config, seed=config.seed + 1000 * k)
            if stage.carry_buffer:
                agent.buffer = old
        elif k > 1 and not stage.carry_buffer:
            agent.buffer.clear()
        env = BeamlineEnv(
            graph, bunch_params, n_min, default_bore, prefixes[k - 1], stage.groups, backend=backend
        )
        if stage_callback is not None:
            stage_callback("start", k, agent)
        n_ep = stage.episodes
        for j in range(n_ep):
            frac = j / (n_ep - 1) if n_ep > 1 else 0.0
            sigma = config.noise_sigma + (config.noise_final - config.noise_sigma) * frac
            s = env.reset()
            done = False
            while not done:
                if steps < config.warmup_steps:
                    a = explore_rng.uniform(-1.0, 1.0, ACTION_DIM)
                else:
                    a = agent.act(s, sigma)
                s2, r, done, _ = env.step(a)
                agent.store(s, a, r, s2, done)
                steps += 1
                if len(agent.buffer) >= config.batch_size:
                    agent.update()
                s = s2
            episode += 1
            if episode_log is not None:
                append_episode_log(episode_log, episode, env.record)
            if episode % config.eval_every == 0 or j == n_ep - 1:
                evaluate(env, k)
        if stage_callback is not None:
            stage_callback("end", k, agent)
        if checkpoint_dir is not None:
            os.makedirs(checkpoint_dir, exist_ok=True)
            path = os.path.join(checkpoint_dir, f"stage{k}.json")
            buf = os.path.join(checkpoint_dir, f"stage{k}_buffer.npz") if save_buffer else None
            agent.save(path, extra={"stage": k, "episode": episode}, buffer_path=buf)

    return TrainResult(best.vector.copy(), best.transmission, best.episode, evals, names, agent, episode)


TRAINING_LOG_FIXED = ["episode", "stage", "transmission", "cumulative_max"]


def write_training_log(path, result: TrainResult) -> None:
    """One row per evaluation episode; floats written with repr()."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAINING_LOG_FIXED + list(result.parameter_names))
        for ev in result.evaluations:
            w.writerow(
                [ev.episode, ev.stage, repr(ev.transmission), repr(ev.cumulative_max)]
                + [repr(float(v)) for v in ev.vector]
            )


def read_training_log(path):
    """Returns (parameter_names, rows) with rows as dicts of floats/ints."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[: len(TRAINING_LOG_FIXED)] != TRAINING_LOG_FIXED:
            raise ValueError(f"{path}: not a training log (missing or wrong header)")
        names = header[len(TRAINING_LOG_FIXED) :]
        rows = []
        for line in reader:
            if not line:
                continue
            rows.append(
                {
                    "episode": int(line[0]),
                    "stage": int(line[1]),
                    "transmission": float(line[2]),
                    "cumulative_max": float(line[3]),
                    "vector": np.array([float(v) for v in line[4:]]),
                }
            )
    return names, rows
