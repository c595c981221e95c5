"""Lattice description: element types, a parser for a subset of the Elegant
``.lte`` grammar, watch-point preprocessing and a canonical writer.

Supported grammar::

    ! comment
    NAME: TYPE, KEY=value, KEY=value      (trailing '&' continues a line)
    NAME: LINE=(A, B, SUBLINE, ...)

Names and keywords are case-insensitive and stored upper-case.  The beamline
is the last ``LINE`` defined unless a name is passed to :func:`parse_lattice`.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable


class ElementKind(enum.Enum):
    DRIFT = "DRIFT"
    QUAD = "QUAD"
    SBEND = "SBEND"
    APERTURE = "APERTURE"
    WATCH = "WATCH"
    CAVITY = "CAVITY"
    MARKER = "MARKER"

    @property
    def tunable(self) -> bool:
        return self in (ElementKind.QUAD, ElementKind.SBEND)


TUNABLE_KINDS = frozenset({ElementKind.QUAD, ElementKind.SBEND})
ZERO_LENGTH_KINDS = frozenset({ElementKind.WATCH, ElementKind.APERTURE, ElementKind.MARKER})

# attribute names applicable per kind; everything else must stay None
_APPLICABLE = {
    ElementKind.DRIFT: (),
    ElementKind.QUAD: ("k1", "hkick", "vkick"),
    ElementKind.SBEND: ("angle", "fse"),
    ElementKind.APERTURE: ("ax", "ay"),
    ElementKind.WATCH: (),
    ElementKind.CAVITY: (),
    ElementKind.MARKER: (),
}
_OPTIONAL_PARAMS = ("k1", "hkick", "vkick", "angle", "fse", "ax", "ay")


@dataclass(frozen=True)
class Element:
    """One beamline component.

    Parameters that do not apply to ``kind`` are ``None``.  Applicable magnet
    settings that are not given default to 0 (as in Elegant); aperture
    semi-axes have no default.
    """

    name: str
    kind: ElementKind
    length: float = 0.0
    k1: float | None = None
    hkick: float | None = None
    vkick: float | None = None
    angle: float | None = None
    fse: float | None = None
    ax: float | None = None
    ay: float | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("element name must be non-empty")
        if not self.length >= 0.0:
            raise ValueError(f"{self.name}: length must be >= 0, got {self.length}")
        if self.kind in ZERO_LENGTH_KINDS and self.length != 0.0:
            raise ValueError(f"{self.name}: {self.kind.value} elements have zero length")
        applicable = _APPLICABLE[self.kind]
        for attr in _OPTIONAL_PARAMS:
            value = getattr(self, attr)
            if attr not in applicable:
                if value is not None:
                    raise ValueError(
                        f"{self.name}: parameter {attr.upper()} does not apply to {self.kind.value}"
                    )
            elif attr in ("ax", "ay"):
                if value is None or not value > 0.0:
                    raise ValueError(f"{self.name}: aperture {attr.upper()} must be > 0")
            elif value is None:
                object.__setattr__(self, attr, 0.0)

    @property
    def tunable(self) -> bool:
        return self.kind in TUNABLE_KINDS


@dataclass(frozen=True)
class BeamlineGraph:
    """Ordered element sequence with index lookups for tunables and watches.

    Edges are implicit: element ``i`` connects to ``i + 1``.
    """

    elements: tuple[Element, ...]
    line_name: str = "BL"
    tunable_index: tuple[int, ...] = field(init=False, repr=False, compare=False)
    watch_index: tuple[int, ...] = field(init=False, repr=False, compare=False)
    aperture_index: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        elements = tuple(self.elements)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(
            self, "tunable_index", tuple(i for i, e in enumerate(elements) if e.tunable)
        )
        object.__setattr__(
            self,
            "watch_index",
            tuple(i for i, e in enumerate(elements) if e.kind is ElementKind.WATCH),
        )
        object.__setattr__(
            self,
            "aperture_index",
            tuple(i for i, e in enumerate(elements) if e.kind is ElementKind.APERTURE),
        )

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, pos: int) -> Element:
        return self.elements[pos]

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.elements))

    @property
    def n_quads(self) -> int:
        return sum(1 for e in self.elements if e.kind is ElementKind.QUAD)

    @property
    def n_bends(self) -> int:
        return sum(1 for e in self.elements if e.kind is ElementKind.SBEND)

    @property
    def n_parameters(self) -> int:
        """Dimension of the tunable parameter space (3 per quad, 1 per bend)."""
        return 3 * self.n_quads + self.n_bends

    def positions(self) -> list[float]:
        """Longitudinal position of the exit of every element."""
        out, s = [], 0.0
        for e in self.elements:
            s += e.length
            out.append(s)
        return out

    def with_element(self, pos: int, element: Element) -> "BeamlineGraph":
        elements = list(self.elements)
        elements[pos] = element
        return BeamlineGraph(tuple(elements), self.line_name)


class LatticeError(ValueError):
    """Base class for lattice parse failures; carries an optional line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LatticeSyntaxError(LatticeError):
    pass


class UndefinedReferenceError(LatticeError):
    def __init__(self, name: str, line: int | None = None):
        self.name = name
        super().__init__(f"reference to undefined element or line {name!r}", line)


class DuplicateNameError(LatticeError):
    pass


class MissingLineError(LatticeError):
    pass


class UnsupportedConstructError(LatticeError):
    pass


class NoDownstreamTunable(LookupError):
    """Raised by :func:`next_tunable` when no tunable element follows."""


_TYPE_ALIASES = {
    "DRIFT": ElementKind.DRIFT,
    "DRIF": ElementKind.DRIFT,
    "EDRIFT": ElementKind.DRIFT,
    "QUAD": ElementKind.QUAD,
    "QUADRUPOLE": ElementKind.QUAD,
    "KQUAD": ElementKind.QUAD,
    "SBEND": ElementKind.SBEND,
    "SBEN": ElementKind.SBEND,
    "CSBEND": ElementKind.SBEND,
    "MAXAMP": ElementKind.APERTURE,
    "APERTURE": ElementKind.APERTURE,
    "WATCH": ElementKind.WATCH,
    "RFCA": ElementKind.CAVITY,
    "CAVITY": ElementKind.CAVITY,
    "MARKER": ElementKind.MARKER,
    "MARK": ElementKind.MARKER,
}
_CANONICAL_TYPE = {
    ElementKind.DRIFT: "DRIFT",
    ElementKind.QUAD: "QUAD",
    ElementKind.SBEND: "SBEND",
    ElementKind.APERTURE: "MAXAMP",
    ElementKind.WATCH: "WATCH",
    ElementKind.CAVITY: "RFCA",
    ElementKind.MARKER: "MARKER",
}
# file keyword -> Element attribute, per kind
_KEYS = {
    ElementKind.DRIFT: {"L": "length"},
    ElementKind.QUAD: {"L": "length", "K1": "k1", "HKICK": "hkick", "VKICK": "vkick"},
    ElementKind.SBEND: {"L": "length", "ANGLE": "angle", "FSE": "fse"},
    ElementKind.APERTURE: {"AX": "ax", "AY": "ay", "X_MAX": "ax", "Y_MAX": "ay"},
    ElementKind.WATCH: {},
    ElementKind.CAVITY: {"L": "length"},
    ElementKind.MARKER: {},
}
_WRITE_ORDER = {
    ElementKind.DRIFT: (("L", "length"),),
    ElementKind.QUAD: (("L", "length"), ("K1", "k1"), ("HKICK", "hkick"), ("VKICK", "vkick")),
    ElementKind.SBEND: (("L", "length"), ("ANGLE", "angle"), ("FSE", "fse")),
    ElementKind.APERTURE: (("AX", "ax"), ("AY", "ay")),
    ElementKind.WATCH: (),
    ElementKind.CAVITY: (("L", "length"),),
    ElementKind.MARKER: (),
}

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.$]*$")
_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _logical_lines(source: str) -> list[tuple[int, str]]:
    """Strip comments, join '&' continuations; yields (first line number, text)."""
    out: list[tuple[int, str]] = []
    buf, start = "", None
    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split("!", 1)[0].strip()
        if not text and not buf:
            continue
        if start is None:
            start = lineno
        if text.endswith("&"):
            buf += text[:-1] + " "
            continue
        buf += text
        if buf.strip():
            out.append((start, buf.strip()))
        buf, start = "", None
    if buf.strip():
        raise LatticeSyntaxError("dangling '&' continuation at end of file", start)
    return out


def _parse_number(text: str, lineno: int, key: str) -> float:
    text = text.strip()
    if not _NUMBER_RE.match(text):
        raise LatticeSyntaxError(f"value of {key} is not a number: {text!r}", lineno)
    return float(text)


def _parse_line_items(body: str, lineno: int) -> list[str]:
    body = body.strip()
    if not (body.startswith("(") and body.endswith(")")):
        raise LatticeSyntaxError("LINE must be written as LINE=(a, b, ...)", lineno)
    inner = body[1:-1].strip()
    if not inner:
        raise LatticeSyntaxError("empty LINE", lineno)
    items = []
    for item in inner.split(","):
        item = item.strip()
        if "*" in item:
            raise UnsupportedConstructError(f"repetition multiplier {item!r} is not supported", lineno)
        if item.startswith("-"):
            raise UnsupportedConstructError(f"reversed sub-line {item!r} is not supported", lineno)
        if "(" in item or ")" in item:
            raise UnsupportedConstructError(f"inline nested line {item!r} is not supported", lineno)
        if not _NAME_RE.match(item):
            raise LatticeSyntaxError(f"invalid name in LINE: {item!r}", lineno)
        items.append(item.upper())
    return items


def _parse_element(name: str, body: str, lineno: int) -> Element:
    parts = [p.strip() for p in body.split(",")]
    type_word = parts[0].upper()
    if type_word not in _TYPE_ALIASES:
        raise LatticeSyntaxError(f"unknown element type {parts[0]!r}", lineno)
    kind = _TYPE_ALIASES[type_word]
    keys = _KEYS[kind]
    values: dict[str, float] = {}
    for part in parts[1:]:
        if "=" not in part:
            raise LatticeSyntaxError(f"expected KEY=value, got {part!r}", lineno)
        key, _, raw = part.partition("=")
        key = key.strip().upper()
        if key not in keys:
            raise LatticeSyntaxError(f"unknown parameter {key} for {type_word}", lineno)
        attr = keys[key]
        if attr in values:
            raise LatticeSyntaxError(f"parameter {key} given twice", lineno)
        values[attr] = _parse_number(raw, lineno, key)
    try:
        return Element(name, kind, **values)
    except ValueError as exc:
        raise LatticeSyntaxError(str(exc), lineno) from None


def parse_lattice(source: str, line: str | None = None) -> BeamlineGraph:
    """Parse lattice text and return the flattened beamline.

    ``line`` selects the beamline by name; by default the last ``LINE``
    defined is used.  Shared elements are duplicated by value per position.
    """
    elements: dict[str, Element] = {}
    lines: dict[str, tuple[list[str], int]] = {}
    last_line = None
    for lineno, text in _logical_lines(source):
        head, sep, body = text.partition(":")
        if not sep:
            raise LatticeSyntaxError(f"expected 'NAME: TYPE, ...', got {text!r}", lineno)
        name = head.strip()
        if not _NAME_RE.match(name):
            raise LatticeSyntaxError(f"invalid element name {name!r}", lineno)
        name = name.upper()
        if name in elements or name in lines:
            raise DuplicateNameError(f"duplicate definition of {name!r}", lineno)
        body = body.strip()
        m = re.match(r"^LINE\s*=\s*(.*)$", body, flags=re.IGNORECASE | re.DOTALL)
        if m:
            lines[name] = (_parse_line_items(m.group(1), lineno), lineno)
            last_line = name
        else:
            elements[name] = _parse_element(name, body, lineno)

    if line is None:
        if last_line is None:
            raise MissingLineError("no LINE definition found")
        line = last_line
    line = line.upper()
    if line not in lines:
        raise MissingLineError(f"LINE {line!r} is not defined")

    flat: list[Element] = []

    def expand(name: str, stack: tuple[str, ...], lineno: int) -> None:
        if name in elements:
            flat.append(elements[name])
            return
        if name not in lines:
            raise UndefinedReferenceError(name, lineno)
        if name in stack:
            raise LatticeSyntaxError(f"LINE {name!r} references itself", lines[name][1])
        items, def_line = lines[name]
        for item in items:
            expand(item, stack + (name,), def_line)

    expand(line, (), lines[line][1])
    return BeamlineGraph(tuple(flat), line)


def read_lattice(path, line: str | None = None) -> BeamlineGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_lattice(fh.read(), line)


def _fmt(value: float) -> str:
    return repr(float(value))


def format_element(element: Element) -> str:
    parts = [f"{element.name}: {_CANONICAL_TYPE[element.kind]}"]
    for key, attr in _WRITE_ORDER[element.kind]:
        parts.append(f"{key}={_fmt(getattr(element, attr))}")
    return ", ".join(parts)


def write_lattice(graph: BeamlineGraph, header: str | None = None) -> str:
    """Emit lattice text that re-parses to ``graph`` element-for-element.

    Each distinct name is defined once; two positions sharing a name must
    therefore carry identical parameters.
    """
    definitions: dict[str, Element] = {}
    for e in graph.elements:
        seen = definitions.get(e.name)
        if seen is None:
            definitions[e.name] = e
        elif seen != e:
            raise ValueError(
                f"element name {e.name!r} is used for differing definitions; rename before writing"
            )
    if graph.line_name in definitions:
        raise ValueError(f"line name {graph.line_name!r} clashes with an element name")
    out = []
    if header:
        out.extend(f"! {h}" for h in header.splitlines())
    out.extend(format_element(e) for e in definitions.values())
    out.append("")
    names = [e.name for e in graph.elements]
    chunks = [", ".join(names[i : i + 8]) for i in range(0, len(names), 8)]
    out.append(f"{graph.line_name}: LINE=(" + ", &\n    ".join(chunks) + ")")
    return "\n".join(out) + "\n"


def preprocess(graph: BeamlineGraph) -> BeamlineGraph:
    """Insert a WATCH before every tunable element and at the end of the line.

    Tunables already directly preceded by a WATCH are left alone, so the
    operation is idempotent.  Existing watches are kept.
    """
    taken = {e.name for e in graph.elements}
    watches: dict[str, Element] = {}

    def watch_for(base: str) -> Element:
        if base in watches:
            return watches[base]
        name, k = base, 1
        while name in taken:
            existing = [e for e in graph.elements if e.name == name]
            if all(e.kind is ElementKind.WATCH for e in existing):
                break
            name = f"{base}_{k}"
            k += 1
        taken.add(name)
        watches[base] = Element(name, ElementKind.WATCH)
        return watches[base]

    out: list[Element] = []
    for e in graph.elements:
        if e.tunable and not (out and out[-1].kind is ElementKind.WATCH):
            out.append(watch_for(f"W_{e.name}"))
        out.append(e)
    if not out or out[-1].kind is not ElementKind.WATCH:
        out.append(watch_for("W_END"))
    return BeamlineGraph(tuple(out), graph.line_name)


def is_preprocessed(graph: BeamlineGraph) -> bool:
    els = graph.elements
    if not els or els[-1].kind is not ElementKind.WATCH:
        return False
    return all(p > 0 and els[p - 1].kind is ElementKind.WATCH for p in graph.tunable_index)


def next_tunable(graph: BeamlineGraph, watch_pos: int) -> int:
    """Position of the first tunable element after ``watch_pos``."""
    if graph.elements[watch_pos].kind is not ElementKind.WATCH:
        raise ValueError(f"position {watch_pos} is not a WATCH")
    for p in graph.tunable_index:
        if p > watch_pos:
            return p
    raise NoDownstreamTunable(f"no tunable element downstream of position {watch_pos}")


def next_watch(graph: BeamlineGraph, element_pos: int) -> int:
    """Position of the first WATCH after ``element_pos``."""
    for p in graph.watch_index:
        if p > element_pos:
            return p
    raise LookupError(f"no WATCH downstream of position {element_pos}; preprocess the graph first")


def first_watch(graph: BeamlineGraph) -> int:
    if not graph.watch_index:
        raise LookupError("graph has no WATCH elements")
    return graph.watch_index[0]


def aperture_before(graph: BeamlineGraph, pos: int) -> Element | None:
    """Nearest APERTURE strictly upstream of ``pos``."""
    best = None
    for p in graph.aperture_index:
        if p < pos:
            best = p
        else:
            break
    return None if best is None else graph.elements[best]


def aperture_after(graph: BeamlineGraph, pos: int) -> Element | None:
    """Nearest APERTURE strictly downstream of ``pos``."""
    for p in graph.aperture_index:
        if p > pos:
            return graph.elements[p]
    return None


def element_keys(graph: BeamlineGraph, positions: Iterable[int] | None = None) -> dict[int, str]:
    """Unique string key per position: the name, or ``NAME#k`` (k counting
    from 1 along the line) when the name repeats."""
    positions = list(range(len(graph))) if positions is None else list(positions)
    counts: dict[str, int] = {}
    for p in positions:
        counts[graph.elements[p].name] = counts.get(graph.elements[p].name, 0) + 1
    seen: dict[str, int] = {}
    keys = {}
    for p in positions:
        name = graph.elements[p].name
        seen[name] = seen.get(name, 0) + 1
        keys[p] = name if counts[name] == 1 else f"{name}#{seen[name]}"
    return keys


__all__ = [
    "ElementKind",
    "Element",
    "BeamlineGraph",
    "LatticeError",
    "LatticeSyntaxError",
    "UndefinedReferenceError",
    "DuplicateNameError",
    "MissingLineError",
    "UnsupportedConstructError",
    "NoDownstreamTunable",
    "parse_lattice",
    "read_lattice",
    "write_lattice",
    "format_element",
    "preprocess",
    "is_preprocessed",
    "next_tunable",
    "next_watch",
    "first_watch",
    "aperture_before",
    "aperture_after",
    "element_keys",
]
