"""Tracking throughput of the numba and numpy backends.

Tracks bunches of several sizes through the bundled desk lattice with one
quadrupole detuned (so the aperture cull actually removes particles) and
reports the median wall time per pass.  Both backends must agree bit for
bit; the script exits with status 1 if they do not.

    python benchmarks/bench_tracking.py [--repeat 7] [--sizes 1000 10000 100000]
"""

import argparse
import statistics
import sys
import time

import numpy as np

from beamtune.config import DEFAULT_SIGMA, bundled_path
from beamtune.lattice import Element, ElementKind, preprocess, read_lattice
from beamtune.tracking import BunchGenParams, available_backends, compile_segment, generate_bunch, track_compiled


def _segment():
    g = preprocess(read_lattice(bundled_path("desk.lte")))
    elements = list(g.elements)
    q = g.tunable_index[0]
    elements[q] = Element(elements[q].name, ElementKind.QUAD, elements[q].length, k1=-12.0, hkick=5e-4)
    return compile_segment(elements)


def _time(bunch, seg, backend, repeat):
    track_compiled(bunch, seg, backend)  # warm-up (JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        track_compiled(bunch, seg, backend)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 10_000, 100_000])
    args = ap.parse_args(argv)

    backends = available_backends()
    seg = _segment()
    print(f"backends: {', '.join(backends)}; lattice: desk ({len(seg)} elements)")
    header = f"{'N0':>8} " + " ".join(f"{b + ' [ms]':>12}" for b in backends)
    if len(backends) > 1:
        header += f" {'speedup':>8}"
    print(header + f" {'survivors':>10}")
    ok = True
    for n in args.sizes:
        bunch = generate_bunch(BunchGenParams(n, DEFAULT_SIGMA, 0))
        res = {b: _time(bunch, seg, b, args.repeat) for b in backends}
        outs = {b: track_compiled(bunch, seg, b) for b in backends}
        ref = outs[backends[0]]
        same = all(np.array_equal(ref.particles, o.particles) for o in outs.values())
        ok &= same
        line = f"{n:>8} " + " ".join(f"{res[b] * 1e3:>12.3f}" for b in backends)
        if len(backends) > 1:
            line += f" {res['numpy'] / res['numba']:>7.1f}x"
        print(line + f" {len(ref):>10}" + ("" if same else "  MISMATCH"))
    if not ok:
        print("backends disagree", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
