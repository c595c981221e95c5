"""Random-policy self-checks of the environment contract."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .env import (
    DEFAULT_BORE,
    HISTOGRAM,
    STATE_DIM,
    SURVIVAL,
    BeamlineEnv,
    extract_state,
)
from .lattice import BeamlineGraph, ElementKind
from .tracking import BunchGenParams, make_rng

CHECK_NAMES = (
    "state_length",
    "histogram_normalization",
    "reward_bounds",
    "reward_formula",
    "action_masking",
    "replay_determinism",
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


class _Tally:
    def __init__(self):
        self.failures: dict[str, str] = {}
        self.counts = dict.fromkeys(CHECK_NAMES, 0)

    def check(self, name: str, ok: bool, detail: str) -> None:
        self.counts[name] += 1
        if not ok and name not in self.failures:
            self.failures[name] = detail


def _reward_oracle(n_prev, n_t, n0, t, m, n_min):
    # written out again here, independently of env.compute_reward
    if n_t > n_min:
        return (n_t / n0) * (n_t / n_prev)
    return n_t / n0 - math.sqrt(m * m - t * t) / m


def _check_state(tally: _Tally, state: np.ndarray, where: str) -> None:
    tally.check(
        "state_length",
        state.shape == (STATE_DIM,) and bool(np.all(np.isfinite(state))),
        f"{where}: shape {state.shape}",
    )
    hist = float(np.sum(state[HISTOGRAM])) if state.shape == (STATE_DIM,) else float("nan")
    expect = 1.0 if state.shape == (STATE_DIM,) and state[SURVIVAL] > 0 else 0.0
    tally.check("histogram_normalization", abs(hist - expect) <= 1e-12, f"{where}: histogram sums to {hist!r}")


def _masking_probe(env: BeamlineEnv, action: np.ndarray, rng) -> tuple[bool, str]:
    """Perturb the action components the current element ignores and
    compare the outcome with the unperturbed step."""
    pos = env.tunables[env.t]
    kind = env.graph.elements[pos].kind
    ignored = [3] if kind is ElementKind.QUAD else [0, 1, 2]
    other = action.copy()
    other[ignored] = rng.uniform(-1.0, 1.0, len(ignored))
    a_env, b_env = copy.deepcopy(env), copy.deepcopy(env)
    sa, ra, da, _ = a_env.step(action)
    sb, rb, db, _ = b_env.step(other)
    same = (
        np.array_equal(sa, sb)
        and ra == rb
        and da == db
        and np.array_equal(a_env.bunch.particles, b_env.bunch.particles)
    )
    return same, f"step {env.t + 1} ({kind.value}) depends on ignored components {ignored}"


def run_env_checks(
    graph: BeamlineGraph,
    bunch_params: BunchGenParams,
    episodes: int = 10,
    seed: int = 0,
    n_min: int = 5,
    default_bore: float = DEFAULT_BORE,
    state_fn=extract_state,
    backend: str | None = None,
) -> list[CheckResult]:
    """Run ``episodes`` uniform-random episodes and report one result per
    check.  With ``episodes == 0`` every check passes vacuously."""
    if episodes < 0:
        raise ValueError("episodes must be >= 0")
    if episodes == 0:
        return [CheckResult(n, True, "vacuous: 0 episodes run") for n in CHECK_NAMES]
    env = BeamlineEnv(graph, bunch_params, n_min, default_bore, state_fn=state_fn, backend=backend)
    rng = make_rng(seed)
    probe_rng = make_rng(seed + 1)
    tally = _Tally()
    for ep in range(episodes):
        s = env.reset()
        _check_state(tally, s, f"episode {ep} reset")
        trajectory = [s.copy()]
        actions, rewards = [], []
        n_prev = len(env.bunch)
        done = False
        while not done:
            a = rng.uniform(-1.0, 1.0, 4)
            same, detail = _masking_probe(env, a, probe_rng)
            tally.check("action_masking", same, f"episode {ep}: {detail}")
            t1 = env.t + 1
            s, r, done, info = env.step(a)
            where = f"episode {ep} step {t1}"
            _check_state(tally, s, where)
            tally.check("reward_bounds", -1.0 <= r <= 1.0, f"{where}: reward {r!r}")
            expect = _reward_oracle(n_prev, info.n_survivors, env.n0, t1, env.m, env.n_min)
            tally.check("reward_formula", r == expect, f"{where}: reward {r!r} != {expect!r}")
            n_prev = info.n_survivors
            trajectory.append(s.copy())
            actions.append(a)
            rewards.append(r)
        # a fresh environment regenerates the bunch from its seed
        replay = BeamlineEnv(graph, bunch_params, n_min, default_bore, state_fn=state_fn, backend=backend)
        states = [replay.reset()]
        replayed = []
        for a in actions:
            s2, r2, _, _ = replay.step(a)
            states.append(s2)
            replayed.append(r2)
        identical = replayed == rewards and all(np.array_equal(x, y) for x, y in zip(states, trajectory))
        tally.check("replay_determinism", identical, f"episode {ep}: replay diverged")
    return [
        CheckResult(n, n not in tally.failures, tally.failures.get(n, f"{tally.counts[n]} checks"))
        for n in CHECK_NAMES
    ]
