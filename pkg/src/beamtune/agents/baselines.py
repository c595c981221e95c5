"""Derivative-free baselines over the flat parameter vector."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..env import TransmissionObjective
from ..lattice import BeamlineGraph
from ..tracking import BunchGenParams, make_rng


@dataclass(frozen=True)
class DeConfig:
    """best/1/bin differential evolution.

    ``popsize`` is ``popsize_factor * dim`` capped at ``max_popsize`` unless
    given explicitly.  The mutation factor F is redrawn uniformly from
    ``[f_min, f_max]`` once per generation.  With ``updating="immediate"``
    an improved trial replaces its target (and possibly the best member)
    before the next trial is built; ``"deferred"`` builds and scores a whole
    generation at once, which is what ``workers > 1`` requires.
    """

    max_evaluations: int = 2000
    popsize: int | None = None
    popsize_factor: int = 15
    max_popsize: int = 600
    crossover: float = 0.7
    f_min: float = 0.5
    f_max: float = 1.0
    seed: int = 0
    workers: int = 1
    updating: str = "immediate"

    def population_size(self, dim: int) -> int:
        n = self.popsize if self.popsize is not None else min(self.popsize_factor * dim, self.max_popsize)
        if n < 4:
            raise ValueError(f"differential evolution needs a population of at least 4, got {n}")
        return n


@dataclass
class OptimizeResult:
    vector: np.ndarray
    transmission: float
    evaluations: int
    history: list[float] = field(default_factory=list)  # best-so-far after each evaluation


class _Evaluator:
    """Ordered batch evaluation, optionally in worker processes."""

    def __init__(self, objective: TransmissionObjective, workers: int):
        self.objective = objective
        self.workers = max(1, int(workers))
        self._pool = None

    def __enter__(self):
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(self.workers)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()

    def __call__(self, vectors: np.ndarray) -> np.ndarray:
        if self._pool is None:
            return np.array([self.objective(v) for v in vectors])
        chunks = max(1, len(vectors) // (4 * self.workers))
        return np.array(list(self._pool.map(self.objective, list(vectors), chunksize=chunks)))


def _trial(pop, best, i, f, cr, rng):
    npop, dim = pop.shape
    candidates = [j for j in range(npop) if j != i]
    r1, r2 = rng.choice(candidates, size=2, replace=False)
    mutant = pop[best] + f * (pop[r1] - pop[r2])
    cross = rng.random(dim) < cr
    cross[rng.integers(dim)] = True
    trial = np.where(cross, mutant, pop[i])
    outside = np.abs(trial) > 1.0
    if outside.any():
        trial[outside] = rng.uniform(-1.0, 1.0, size=int(outside.sum()))
    return trial


def optimize_de(
    graph: BeamlineGraph, bunch_params: BunchGenParams, config: DeConfig = DeConfig(), backend=None
) -> OptimizeResult:
    """Maximise full-beamline transmission with differential evolution.

    The search runs in normalised coordinates u in [-1, 1]^D and maps to the
    physical bounds.  Trial components leaving the box are redrawn uniformly.
    A generation is cut short when the evaluation budget runs out.
    """
    objective = TransmissionObjective(graph, bunch_params, backend)
    dim = objective.dim
    if dim == 0:
        raise ValueError("lattice has no tunable parameters")
    half = objective.bounds[:, 1]
    npop = config.population_size(dim)
    budget = int(config.max_evaluations)
    if budget < 1:
        raise ValueError("max_evaluations must be >= 1")
    if config.updating not in ("immediate", "deferred"):
        raise ValueError(f"updating must be 'immediate' or 'deferred', got {config.updating!r}")
    immediate = config.updating == "immediate"
    if immediate and config.workers > 1:
        raise ValueError("parallel evaluation needs updating='deferred'")
    rng = make_rng(config.seed)

    history: list[float] = []
    best = -np.inf

    def note(scores):
        nonlocal best
        for s in scores:
            best = max(best, s)
            history.append(best)

    with _Evaluator(objective, config.workers) as evaluate:
        pop = rng.uniform(-1.0, 1.0, size=(npop, dim))
        n_init = min(npop, budget)
        fitness = np.full(npop, -np.inf)
        fitness[:n_init] = evaluate(pop[:n_init] * half)
        note(fitness[:n_init])
        used = n_init
        while used < budget:
            f = rng.uniform(config.f_min, config.f_max)
            n_trial = min(npop, budget - used)
            if immediate:
                for i in range(n_trial):
                    trial = _trial(pop, int(np.argmax(fitness)), i, f, config.crossover, rng)
                    score = float(evaluate(trial[None, :] * half)[0])
                    note([score])
                    if score >= fitness[i]:
                        pop[i] = trial
                        fitness[i] = score
            else:
                b = int(np.argmax(fitness))
                trials = np.array([_trial(pop, b, i, f, config.crossover, rng) for i in range(n_trial)])
                scores = evaluate(trials * half)
                note(scores)
                for i in range(n_trial):
                    if scores[i] >= fitness[i]:
                        pop[i] = trials[i]
                        fitness[i] = scores[i]
            used += n_trial
    b = int(np.argmax(fitness))
    return OptimizeResult(pop[b] * half, float(fitness[b]), used, history)


def random_search(
    graph: BeamlineGraph, bunch_params: BunchGenParams, trials: int, seed: int = 0, backend=None
) -> OptimizeResult:
    """Best of ``trials`` uniform samples inside the parameter bounds."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    objective = TransmissionObjective(graph, bunch_params, backend)
    rng = make_rng(seed)
    lo, hi = objective.bounds[:, 0], objective.bounds[:, 1]
    best_v, best_t, history = None, -np.inf, []
    for _ in range(trials):
        v = rng.uniform(lo, hi)
        t = objective(v)
        if t > best_t:
            best_v, best_t = v, t
        history.append(best_t)
    return OptimizeResult(best_v, float(best_t), trials, history)
