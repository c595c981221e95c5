"""Plain-text magnet settings: one tunable element per line.

::

    # comment
    Q1 K1=-21.87 HKICK=0.0 VKICK=0.0
    B1 FSE=0.001

Element keys are lattice names, or ``NAME#k`` (k-th occurrence, from 1) when a
name appears more than once in the line.  Elements that are not listed are
set to zero.
"""

from __future__ import annotations

import numpy as np

from .env import KIND_PARAMS, parameter_layout
from .lattice import BeamlineGraph, element_keys


class ParamsError(ValueError):
    pass


def parse_params(text: str, source: str = "<params>") -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        # only whole-line comments: '#' also appears in NAME#k keys
        if not line or line.startswith("#"):
            continue
        name, *assignments = line.split()
        name = name.upper()
        if name in out:
            raise ParamsError(f"{source}:{lineno}: {name} listed twice")
        values = {}
        for item in assignments:
            key, sep, val = item.partition("=")
            if not sep:
                raise ParamsError(f"{source}:{lineno}: expected KEY=value, got {item!r}")
            try:
                values[key.upper()] = float(val)
            except ValueError:
                raise ParamsError(f"{source}:{lineno}: bad number {val!r} for {key}") from None
        out[name] = values
    return out


def read_params(path) -> dict[str, dict[str, float]]:
    with open(path) as fh:
        return parse_params(fh.read(), str(path))


def params_to_vector(graph: BeamlineGraph, params: dict[str, dict[str, float]]) -> np.ndarray:
    """Flat physical vector (see :func:`beamtune.env.parameter_layout`)."""
    keys = element_keys(graph, graph.tunable_index)
    by_key = {keys[p]: p for p in graph.tunable_index}
    unknown = sorted(set(params) - set(by_key))
    if unknown:
        raise ParamsError(f"unknown tunable element(s) in params: {', '.join(unknown)}")
    for key, values in params.items():
        allowed = KIND_PARAMS[graph.elements[by_key[key]].kind]
        bad = sorted(set(values) - set(allowed))
        if bad:
            raise ParamsError(f"{key} has no parameter(s) {', '.join(bad)}; allowed: {', '.join(allowed)}")
    return np.array(
        [params.get(keys[p], {}).get(name, 0.0) for p, name in parameter_layout(graph)], dtype=float
    )


def format_params(graph: BeamlineGraph, vector, header: str | None = None) -> str:
    vector = np.asarray(vector, dtype=float)
    layout = parameter_layout(graph)
    if vector.shape != (len(layout),):
        raise ValueError(f"expected a vector of length {len(layout)}")
    keys = element_keys(graph, graph.tunable_index)
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    current, parts = None, []
    for (p, name), v in zip(layout, vector):
        if p != current:
            if parts:
                lines.append(" ".join(parts))
            current, parts = p, [keys[p]]
        parts.append(f"{name}={float(v)!r}")
    if parts:
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def write_params(path, graph: BeamlineGraph, vector, header: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(format_params(graph, vector, header))
