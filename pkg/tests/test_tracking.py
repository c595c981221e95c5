import cmath
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.linalg import expm

from beamtune.lattice import Element, ElementKind
from beamtune.tracking import (
    Bunch,
    BunchGenParams,
    apply_kicks,
    available_backends,
    beam_profile,
    compile_segment,
    cull_aperture,
    drift_matrix,
    element_map,
    generate_bunch,
    quad_matrix,
    sbend_matrix,
    symplectic_residual,
    track_compiled,
    track_segment,
)
from beamtune.tracking.kernels import track_numpy


def quad_oracle(k1, length):
    """Closed form via complex sqrt: one expression for both signs of K1."""
    r = np.eye(6)
    for plane, k in ((0, k1), (2, -k1)):
        sk = cmath.sqrt(k)
        phi = sk * length
        block = np.array(
            [[cmath.cos(phi), cmath.sin(phi) / sk], [-sk * cmath.sin(phi), cmath.cos(phi)]]
        )
        assert np.max(np.abs(block.imag)) < 1e-12
        r[plane : plane + 2, plane : plane + 2] = block.real
    return r


def generator_quad(k1):
    a = np.zeros((6, 6))
    a[0, 1] = a[2, 3] = 1.0
    a[1, 0] = -k1
    a[3, 2] = k1
    return a


def generator_sbend(angle, length):
    # x'' = -x/rho^2 + delta/rho, dl/ds = x/rho, y'' = 0
    h = angle / length
    a = np.zeros((6, 6))
    a[0, 1] = a[2, 3] = 1.0
    a[1, 0] = -h * h
    a[1, 5] = h
    a[4, 0] = h
    return a


K1_VALUES = [-25.0, -3.7, -1e-3, 1e-3, 0.5, 4.2, 25.0, 1234.5]


@pytest.mark.parametrize("k1", K1_VALUES)
@pytest.mark.parametrize("length", [0.05, 0.08, 0.3])
def test_quad_matches_closed_form_oracle(k1, length):
    assert np.max(np.abs(quad_matrix(k1, length) - quad_oracle(k1, length))) < 1e-12


@pytest.mark.parametrize("k1", K1_VALUES[:-1])
def test_quad_matches_matrix_exponential(k1):
    length = 0.08
    assert np.allclose(quad_matrix(k1, length), expm(generator_quad(k1) * length), rtol=0, atol=1e-12)


@pytest.mark.parametrize("angle, length", [(0.15, 0.8), (-0.05, 0.5), (0.3, 2.0), (1e-4, 0.1)])
def test_sbend_matches_matrix_exponential(angle, length):
    ref = expm(generator_sbend(angle, length) * length)
    assert np.allclose(sbend_matrix(angle, length), ref, rtol=0, atol=1e-12)


def test_sbend_hand_entries():
    theta, length = 0.15, 0.8
    rho = length / theta
    r = sbend_matrix(theta, length)
    assert r[4, 0] == pytest.approx(np.sin(theta), abs=1e-15)
    assert r[4, 1] == pytest.approx(rho * (1 - np.cos(theta)), abs=1e-15)
    assert r[4, 5] == pytest.approx(rho * (theta - np.sin(theta)), abs=1e-15)
    assert r[0, 5] == pytest.approx(rho * (1 - np.cos(theta)), abs=1e-15)
    assert r[1, 5] == pytest.approx(np.sin(theta), abs=1e-15)
    assert r[2, 3] == length


def _elements():
    yield Element("D", ElementKind.DRIFT, 1.3)
    for k in K1_VALUES:
        yield Element("Q", ElementKind.QUAD, 0.08, k1=k, hkick=1e-3, vkick=-2e-3)
    yield Element("B", ElementKind.SBEND, 0.8, angle=0.15, fse=0.003)
    yield Element("B", ElementKind.SBEND, 0.5, angle=-0.4)
    yield Element("C", ElementKind.CAVITY, 0.6)
    yield Element("A", ElementKind.APERTURE, ax=0.01, ay=0.02)
    yield Element("W", ElementKind.WATCH)
    yield Element("M", ElementKind.MARKER)


@pytest.mark.parametrize("element", list(_elements()), ids=lambda e: f"{e.kind.value}")
def test_every_map_is_unimodular_and_symplectic(element):
    r = element_map(element).matrix
    assert abs(np.linalg.det(r) - 1.0) < 1e-9
    assert symplectic_residual(r) < 1e-9


def test_quad_limit_is_drift():
    for k in (1e-6, -1e-6, 1e-9):
        assert np.max(np.abs(quad_matrix(k, 0.3) - drift_matrix(0.3))) < 1e-6
    assert np.array_equal(quad_matrix(0.0, 0.3), drift_matrix(0.3))


def test_quad_rejects_absurd_gradient():
    with pytest.raises(ValueError):
        quad_matrix(1e5, 0.1)


def test_fse_offset():
    b = Element("B", ElementKind.SBEND, 0.8, angle=0.15, fse=0.002)
    m = element_map(b)
    assert m.offset[1] == pytest.approx(-0.15 * 0.002, abs=0)
    assert np.count_nonzero(m.offset) == 1


# -- tracking ----------------------------------------------------------------


def _bunch(n=500, seed=3, scale=2e-3):
    return generate_bunch(BunchGenParams(n, (scale, scale, scale, scale, 1e-3), seed))


def test_bunch_generation_reproducible_and_prefix_stable():
    a = generate_bunch(BunchGenParams(1000, (1e-3,) * 5, 7))
    b = generate_bunch(BunchGenParams(1000, (1e-3,) * 5, 7))
    c = generate_bunch(BunchGenParams(5000, (1e-3,) * 5, 7))
    assert np.array_equal(a.particles, b.particles)
    assert np.array_equal(c.particles[:1000], a.particles)
    assert np.all(a.particles[:, 4] == 0.0)
    d = generate_bunch(BunchGenParams(1000, (1e-3,) * 5, 8))
    assert not np.array_equal(a.particles, d.particles)


def test_bunch_sample_moments():
    sigma = (1e-3, 2e-3, 3e-3, 4e-3, 5e-4)
    p = generate_bunch(BunchGenParams(200_000, sigma, 0)).particles
    for col, s in zip((0, 1, 2, 3, 5), sigma):
        assert p[:, col].std() == pytest.approx(s, rel=0.01)
        assert abs(p[:, col].mean()) < 4 * s / np.sqrt(len(p))


def test_linear_tracking_matches_matrix_product():
    seq = [
        Element("D", ElementKind.DRIFT, 0.4),
        Element("Q", ElementKind.QUAD, 0.1, k1=7.0),
        Element("B", ElementKind.SBEND, 0.8, angle=0.15),
        Element("Q", ElementKind.QUAD, 0.1, k1=-5.0),
        Element("C", ElementKind.CAVITY, 0.6),
    ]
    bunch = _bunch()
    total = np.eye(6)
    for e in seq:
        total = element_map(e).matrix @ total
    expected = bunch.particles @ total.T
    expected[:, 4] += sum(e.length for e in seq)
    out = track_segment(bunch, seq)
    assert len(out) == len(bunch)
    assert np.allclose(out.particles, expected, rtol=0, atol=1e-15)


def test_kicks_applied_at_exit():
    q = Element("Q", ElementKind.QUAD, 0.2, k1=3.0, hkick=1e-3, vkick=-5e-4)
    bunch = _bunch(50)
    out = track_segment(bunch, [q])
    lin = bunch.particles @ quad_matrix(3.0, 0.2).T
    assert np.allclose(out.particles[:, 1], lin[:, 1] + 1e-3, atol=1e-16)
    assert np.allclose(out.particles[:, 3], lin[:, 3] - 5e-4, atol=1e-16)
    # positions at the exit are untouched by the kick
    assert np.allclose(out.particles[:, 0], lin[:, 0], atol=1e-16)
    k = apply_kicks(Bunch(lin, bunch.n0), q)
    assert np.allclose(k.particles[:, :4], out.particles[:, :4], atol=1e-16)
    with pytest.raises(ValueError):
        apply_kicks(bunch, Element("D", ElementKind.DRIFT, 1.0))


def test_s_advances_by_length():
    seq = [Element("D", ElementKind.DRIFT, 0.25), Element("C", ElementKind.CAVITY, 0.5)]
    out = track_segment(_bunch(20), seq)
    assert np.all(out.particles[:, 4] == 0.75)


def test_aperture_boundary_is_inclusive():
    ax, ay = 0.01, 0.02
    pts = np.zeros((6, 6))
    pts[0, 0] = ax  # exactly on the ellipse: kept
    pts[1, 2] = -ay  # exactly on the ellipse: kept
    pts[2, 0] = np.nextafter(ax, 1.0)  # just outside: lost
    pts[3, 2] = np.nextafter(ay, 1.0)
    pts[4, 0], pts[4, 2] = 0.5 * ax, 0.5 * ay  # inside
    pts[5, 0], pts[5, 2] = 0.8 * ax, 0.8 * ay  # 0.64 + 0.64 > 1: lost
    bunch = Bunch(pts, 6)
    kept = cull_aperture(bunch, ax, ay)
    assert np.array_equal(kept.particles, pts[[0, 1, 4]])
    seg = [Element("A", ElementKind.APERTURE, ax=ax, ay=ay)]
    for backend in available_backends():
        assert np.array_equal(track_segment(bunch, seg, backend).particles, pts[[0, 1, 4]])


def test_losses_preserve_order_and_count_monotone(desk):
    bunch = _bunch(3000, scale=4e-3)
    rows = beam_profile(desk.elements, bunch)
    counts = [r["n_survivors"] for r in rows]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    out = track_segment(bunch, desk.elements)
    # survivors are a subsequence of the initial bunch (same x/y order of delta)
    deltas = bunch.particles[:, 5]
    idx = [int(np.flatnonzero(deltas == d)[0]) for d in out.particles[:, 5]]
    assert idx == sorted(idx)


@pytest.mark.skipif(len(available_backends()) < 2, reason="numba not installed")
def test_backends_bit_identical(desk):
    bunch = _bunch(2000, scale=4e-3)
    seq = list(desk.elements)
    seq[1] = Element("Q1", ElementKind.QUAD, 0.08, k1=-20.0, hkick=1e-3)
    a = track_segment(bunch, seq, "numpy")
    b = track_segment(bunch, seq, "numba")
    assert 0 < len(a) < len(bunch)
    assert np.array_equal(a.particles, b.particles)


def test_backend_env_flag():
    code = "from beamtune.tracking import BACKEND; print(BACKEND)"
    env = dict(os.environ, BEAMTUNE_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["BEAMTUNE_BACKEND"] = "fortran"
    bad = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert bad.returncode != 0


def test_empty_inputs():
    bunch = _bunch(10)
    assert np.array_equal(track_segment(bunch, []).particles, bunch.particles)
    empty = Bunch(np.zeros((0, 6)), 10)
    out = track_segment(empty, [Element("D", ElementKind.DRIFT, 1.0)])
    assert len(out) == 0 and out.survival == 0.0


def test_track_numpy_mask():
    seg = compile_segment([Element("A", ElementKind.APERTURE, ax=1.0, ay=1.0)])
    coords = np.zeros((3, 6))
    coords[1, 0] = 2.0
    out, mask = track_numpy(coords, seg.mats, seg.offs, seg.kicks, seg.apx, seg.apy, seg.lengths)
    assert mask.tolist() == [True, False, True]
    assert out.shape == (2, 6)


def test_track_compiled_equals_track_segment(desk):
    bunch = _bunch(400, scale=3e-3)
    a = track_compiled(bunch, compile_segment(desk.elements))
    b = track_segment(bunch, desk.elements)
    assert np.array_equal(a.particles, b.particles)


def test_benchmark_script_runs_and_backends_agree(capsys):
    import runpy
    from pathlib import Path

    script = Path(__file__).parents[1] / "benchmarks" / "bench_tracking.py"
    mod = runpy.run_path(str(script))
    assert mod["main"](["--sizes", "200", "--repeat", "1"]) == 0
    assert "MISMATCH" not in capsys.readouterr().out
