import pytest

from beamtune.lattice import (
    BeamlineGraph,
    DuplicateNameError,
    Element,
    ElementKind,
    LatticeSyntaxError,
    MissingLineError,
    NoDownstreamTunable,
    UndefinedReferenceError,
    UnsupportedConstructError,
    aperture_after,
    aperture_before,
    element_keys,
    first_watch,
    is_preprocessed,
    next_tunable,
    next_watch,
    parse_lattice,
    preprocess,
    read_lattice,
    write_lattice,
)

from conftest import GOLDEN

GOLDEN_FILES = sorted(GOLDEN.glob("*.lte"))

# hand-counted from the file contents: elements, quads, bends, length (m),
# apertures, watches
EXPECTED = {
    "aliases.lte": (10, 2, 2, 2.25, 1, 1),
    "apertures.lte": (7, 2, 0, 1.0, 3, 0),
    "continuation.lte": (5, 2, 0, 1.1, 0, 0),
    "desk.lte": (19, 5, 1, 5.4, 3, 0),
    "fodo_cell.lte": (4, 2, 0, 2.4, 0, 0),
    "large_37.lte": (34, 11, 4, 8.95, 4, 0),
    "minimal.lte": (1, 0, 0, 1.0, 0, 0),
    "nested.lte": (37, 16, 4, 14.1, 0, 0),
    "no_tunables.lte": (6, 0, 0, 3.5, 2, 0),
    "prewatched.lte": (8, 1, 1, 2.2, 0, 3),
    "select_line.lte": (5, 2, 0, 4.2, 0, 0),
}


def test_golden_corpus_is_complete():
    assert len(GOLDEN_FILES) >= 10
    assert {p.name for p in GOLDEN_FILES} == set(EXPECTED)


@pytest.mark.parametrize("path", GOLDEN_FILES, ids=lambda p: p.name)
def test_golden_structure(path):
    g = read_lattice(path)
    n, q, b, length, ap, w = EXPECTED[path.name]
    assert len(g) == n
    assert (g.n_quads, g.n_bends) == (q, b)
    assert g.n_parameters == 3 * q + b
    assert g.total_length == pytest.approx(length, abs=1e-12)
    assert len(g.aperture_index) == ap
    assert len(g.watch_index) == w


@pytest.mark.parametrize("path", GOLDEN_FILES, ids=lambda p: p.name)
def test_golden_round_trip(path):
    g = read_lattice(path)
    text = write_lattice(g)
    again = parse_lattice(text)
    assert again.elements == g.elements
    # writing is a fixed point after the first pass
    assert write_lattice(again) == text


@pytest.mark.parametrize("path", GOLDEN_FILES, ids=lambda p: p.name)
def test_preprocess_structure_and_idempotence(path):
    g = read_lattice(path)
    p = preprocess(g)
    assert is_preprocessed(p)
    assert preprocess(p) == p
    # every tunable directly preceded by a watch, and a terminal watch
    for pos in p.tunable_index:
        assert p.elements[pos - 1].kind is ElementKind.WATCH
    assert p.elements[-1].kind is ElementKind.WATCH
    # removing inserted watches gives back the original sequence
    original_names = {e.name for e in g.elements}
    stripped = [e for e in p.elements if not (e.kind is ElementKind.WATCH and e.name not in original_names)]
    assert tuple(stripped) == g.elements
    assert p.total_length == pytest.approx(g.total_length, abs=0)
    # preprocessed output also survives a write/parse round trip
    assert parse_lattice(write_lattice(p)).elements == p.elements


def test_watch_count_theorem_on_fresh_lattices():
    # a lattice without watches gains exactly tunables + 1 of them
    for path in GOLDEN_FILES:
        g = read_lattice(path)
        if g.watch_index:
            continue
        assert len(preprocess(g).watch_index) == len(g.tunable_index) + 1


def test_prewatched_lattice_keeps_existing_watches():
    g = read_lattice(GOLDEN / "prewatched.lte")
    p = preprocess(g)
    assert p == g


def test_select_line_default_and_named():
    text = (GOLDEN / "select_line.lte").read_text()
    assert [e.name for e in parse_lattice(text).elements] == ["D1", "Q1", "D2", "Q1", "D1"]
    assert [e.name for e in parse_lattice(text, "short").elements] == ["D1", "Q1"]
    with pytest.raises(MissingLineError):
        parse_lattice(text, "NOPE")


def test_aliases_map_to_kinds():
    g = read_lattice(GOLDEN / "aliases.lte")
    kinds = [e.kind for e in g.elements]
    assert kinds == [
        ElementKind.MARKER,
        ElementKind.DRIFT,
        ElementKind.QUAD,
        ElementKind.SBEND,
        ElementKind.DRIFT,
        ElementKind.QUAD,
        ElementKind.SBEND,
        ElementKind.WATCH,
        ElementKind.APERTURE,
        ElementKind.CAVITY,
    ]
    q1 = g.elements[2]
    assert (q1.k1, q1.hkick, q1.vkick) == (2.5, 1e-4, -2e-4)
    a1 = g.elements[8]
    assert (a1.ax, a1.ay) == (0.02, 0.01)
    assert g.elements[3].fse == 0.0  # applicable default


@pytest.mark.parametrize(
    "text, exc, lineno",
    [
        ("", MissingLineError, None),
        ("D: DRIFT, L=1\n", MissingLineError, None),
        ("D: DRIFT, L=1\nBL: LINE=(D, X)\n", UndefinedReferenceError, 2),
        ("D: DRIFT, L=1\nD: DRIFT, L=2\nBL: LINE=(D)\n", DuplicateNameError, 2),
        ("D: DRIFT, L=1\nBL: LINE=(2*D)\n", UnsupportedConstructError, 2),
        ("D: DRIFT, L=1\nA: LINE=(D)\nBL: LINE=(-A)\n", UnsupportedConstructError, 3),
        ("D: DRIFT, L=abc\nBL: LINE=(D)\n", LatticeSyntaxError, 1),
        ("D: WIGGLER, L=1\nBL: LINE=(D)\n", LatticeSyntaxError, 1),
        ("Q: QUAD, L=1, ANGLE=0.1\nBL: LINE=(Q)\n", LatticeSyntaxError, 1),
        ("A: MAXAMP, AX=0.01\nBL: LINE=(A)\n", LatticeSyntaxError, 1),
        ("W: WATCH, L=1\nBL: LINE=(W)\n", LatticeSyntaxError, 1),
        ("D: DRIFT, L=1\nBL: LINE=(D, BL)\n", LatticeSyntaxError, 2),
        ("D: DRIFT, &\n", LatticeSyntaxError, 1),
        ("nonsense line\n", LatticeSyntaxError, 1),
    ],
)
def test_parse_errors(text, exc, lineno):
    with pytest.raises(exc) as info:
        parse_lattice(text)
    if lineno is not None:
        assert info.value.line == lineno
        assert f"line {lineno}" in str(info.value)


def test_undefined_reference_names_the_symbol():
    with pytest.raises(UndefinedReferenceError) as info:
        parse_lattice("D: DRIFT, L=1\nBL: LINE=(D, QX)\n")
    assert info.value.name == "QX"


def test_element_invariants():
    with pytest.raises(ValueError):
        Element("D", ElementKind.DRIFT, length=-1.0)
    with pytest.raises(ValueError):
        Element("A", ElementKind.APERTURE, ax=0.0, ay=1.0)
    with pytest.raises(ValueError):
        Element("D", ElementKind.DRIFT, length=1.0, k1=1.0)
    q = Element("Q", ElementKind.QUAD, length=0.1)
    assert (q.k1, q.hkick, q.vkick, q.angle) == (0.0, 0.0, 0.0, None)


def test_write_rejects_conflicting_same_name():
    a = Element("Q", ElementKind.QUAD, 0.1, k1=1.0)
    b = Element("Q", ElementKind.QUAD, 0.1, k1=2.0)
    with pytest.raises(ValueError):
        write_lattice(BeamlineGraph((a, b)))


def test_navigation_helpers(desk_pre):
    g = desk_pre
    names = [e.name for e in g.elements]
    w0 = first_watch(g)
    assert names[w0] == "W_Q1"
    q1 = next_tunable(g, w0)
    assert names[q1] == "Q1"
    assert names[next_watch(g, q1)] == "W_Q2"
    b1 = names.index("B1")
    assert aperture_before(g, b1).name == "ML"
    assert aperture_after(g, b1).name == "MA"
    q5 = names.index("Q5")
    assert aperture_before(g, q5).name == "MA"
    assert aperture_after(g, q5).name == "MX"
    assert aperture_before(g, names.index("Q1")) is None
    assert names[next_watch(g, q5)] == "W_END"
    with pytest.raises(NoDownstreamTunable):
        next_tunable(g, len(g) - 1)
    with pytest.raises(ValueError):
        next_tunable(g, q1)


def test_element_keys_disambiguate_repeats():
    g = read_lattice(GOLDEN / "fodo_cell.lte")
    keys = element_keys(g, g.tunable_index)
    assert list(keys.values()) == ["QF", "QD"]
    n = read_lattice(GOLDEN / "select_line.lte")
    assert list(element_keys(n, n.tunable_index).values()) == ["Q1#1", "Q1#2"]


def test_shared_definitions_are_independent_after_flattening():
    g = read_lattice(GOLDEN / "select_line.lte")
    first, second = g.tunable_index
    assert g.elements[first] == g.elements[second]
    changed = g.with_element(first, Element("Q1", ElementKind.QUAD, 0.1, k1=5.0))
    assert changed.elements[second].k1 == 1.0
