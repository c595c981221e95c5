"""INI run configuration.

Sections and keys (all optional except ``run.lattice``)::

    [run]      lattice, output_dir, seed, n_min, default_bore
    [beam]     n0, eval_n0, sigma_x, sigma_xp, sigma_y, sigma_yp, sigma_delta
    [ddpg]     any DdpgConfig field (seed defaults to run.seed)
    [stage.N]  prefix (int or "all"), groups (comma list), episodes,
               carry_weights, carry_buffer
    [de]       any DeConfig field (seed defaults to run.seed)

Relative paths resolve against the directory holding the config file.  A
lattice given as ``bundled:NAME`` refers to a file shipped in the package
data directory.  See ``data/example.ini`` for a commented example.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import re
from dataclasses import dataclass, field
from importlib import resources

from .agents.baselines import DeConfig
from .agents.ddpg import DdpgConfig
from .agents.stages import Stage, StagePlan
from .env import ALL_GROUPS, DEFAULT_BORE
from .tracking import BunchGenParams

DEFAULT_SIGMA = (2e-3, 1.8e-3, 2e-3, 1.8e-3, 1e-3)
SIGMA_KEYS = ("sigma_x", "sigma_xp", "sigma_y", "sigma_yp", "sigma_delta")
BUNDLED_PREFIX = "bundled:"


class ConfigError(ValueError):
    pass


def bundled_path(name: str) -> str:
    return str(resources.files("beamtune") / "data" / name)


def resolve_lattice_path(value: str, base_dir: str = ".") -> str:
    if value.startswith(BUNDLED_PREFIX):
        return bundled_path(value[len(BUNDLED_PREFIX) :])
    return value if os.path.isabs(value) else os.path.normpath(os.path.join(base_dir, value))


@dataclass(frozen=True)
class RunConfig:
    lattice: str
    output_dir: str = "."
    seed: int = 0
    n_min: int = 5
    default_bore: float = DEFAULT_BORE
    n0: int = 1000
    eval_n0: int = 100_000
    sigma: tuple = DEFAULT_SIGMA
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    stages: StagePlan | None = None
    de: DeConfig = field(default_factory=DeConfig)

    @property
    def bunch(self) -> BunchGenParams:
        return BunchGenParams(self.n0, self.sigma, self.seed)

    @property
    def eval_bunch(self) -> BunchGenParams:
        return BunchGenParams(self.eval_n0, self.sigma, self.seed)


_SECTION_KEYS = {
    "run": {"lattice", "output_dir", "seed", "n_min", "default_bore"},
    "beam": {"n0", "eval_n0", *SIGMA_KEYS},
    "ddpg": {f.name for f in dataclasses.fields(DdpgConfig)},
    "de": {f.name for f in dataclasses.fields(DeConfig)},
}
_STAGE_KEYS = {"prefix", "groups", "episodes", "carry_weights", "carry_buffer"}
_STAGE_RE = re.compile(r"stage\.(\d+)$")


def _convert(where: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "hidden":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "optional_int":
            return None if raw.lower() in ("", "none", "auto") else int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {where}: {raw!r}") from None


def _field_kind(cls, name):
    f = {f.name: f for f in dataclasses.fields(cls)}[name]
    t = str(f.type)
    if name == "hidden":
        return "hidden"
    if "None" in t and "int" in t:
        return "optional_int"
    for kind in (bool, int, float, str):
        if t == kind.__name__:
            return kind
    return str


def _dataclass_section(cp, section, cls, seed):
    kwargs = {"seed": seed}
    if cp.has_section(section):
        for key, raw in cp.items(section):
            kwargs[key] = _convert(f"{section}.{key}", raw, _field_kind(cls, key))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def _parse_stage(cp, section) -> Stage:
    items = dict(cp.items(section))
    if "episodes" not in items:
        raise ConfigError(f"missing key {section}.episodes")
    prefix_raw = items.get("prefix", "all").strip().lower()
    prefix = None if prefix_raw == "all" else _convert(f"{section}.prefix", prefix_raw, int)
    raw_groups = items.get("groups", ",".join(sorted(ALL_GROUPS)))
    groups = frozenset(g.strip().upper() for g in raw_groups.split(",") if g.strip())
    try:
        return Stage(
            prefix,
            groups,
            _convert(f"{section}.episodes", items["episodes"], int),
            _convert(f"{section}.carry_weights", items.get("carry_weights", "true"), bool),
            _convert(f"{section}.carry_buffer", items.get("carry_buffer", "true"), bool),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[{section}]: {exc}") from None


def parse_config(text: str, base_dir: str = ".", source: str = "<config>", check_paths: bool = True) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    problems = []
    stage_sections = []
    for section in cp.sections():
        m = _STAGE_RE.match(section)
        if m:
            stage_sections.append((int(m.group(1)), section))
            allowed = _STAGE_KEYS
        elif section in _SECTION_KEYS:
            allowed = _SECTION_KEYS[section]
        else:
            problems.append(f"unknown section [{section}]")
            continue
        for key in cp.options(section):
            if key not in allowed:
                problems.append(f"unknown key {section}.{key}")
    if not cp.has_option("run", "lattice"):
        problems.append("missing key run.lattice")
    if problems:
        raise ConfigError(f"{source}: " + "; ".join(problems))

    run = cp["run"]
    seed = _convert("run.seed", run.get("seed", "0"), int)
    lattice = resolve_lattice_path(run["lattice"].strip(), base_dir)
    if check_paths and not os.path.isfile(lattice):
        raise ConfigError(f"run.lattice: file not found: {lattice}")
    output_dir = run.get("output_dir", ".").strip()
    output_dir = output_dir if os.path.isabs(output_dir) else os.path.normpath(os.path.join(base_dir, output_dir))

    beam = cp["beam"] if cp.has_section("beam") else {}
    n0 = _convert("beam.n0", beam.get("n0", "1000"), int)
    eval_n0 = _convert("beam.eval_n0", beam.get("eval_n0", "100000"), int)
    if n0 < 1:
        raise ConfigError("beam.n0 must be >= 1")
    if eval_n0 < n0:
        raise ConfigError(f"beam.eval_n0 ({eval_n0}) must be >= beam.n0 ({n0})")
    sigma = tuple(
        _convert(f"beam.{k}", beam.get(k, repr(d)), float) for k, d in zip(SIGMA_KEYS, DEFAULT_SIGMA)
    )
    if any(s < 0 for s in sigma):
        raise ConfigError("beam sigmas must be >= 0")

    stages = None
    if stage_sections:
        stage_sections.sort()
        numbers = [n for n, _ in stage_sections]
        if numbers != list(range(1, len(numbers) + 1)):
            raise ConfigError(f"stage sections must be numbered 1..N, got {numbers}")
        stages = StagePlan(tuple(_parse_stage(cp, s) for _, s in stage_sections))

    n_min = _convert("run.n_min", run.get("n_min", "5"), int)
    if n_min < 1:
        raise ConfigError("run.n_min must be >= 1")
    bore = _convert("run.default_bore", run.get("default_bore", repr(DEFAULT_BORE)), float)
    if not bore > 0:
        raise ConfigError("run.default_bore must be > 0")
    return RunConfig(
        lattice=lattice,
        output_dir=output_dir,
        seed=seed,
        n_min=n_min,
        default_bore=bore,
        n0=n0,
        eval_n0=eval_n0,
        sigma=sigma,
        ddpg=_dataclass_section(cp, "ddpg", DdpgConfig, seed),
        stages=stages,
        de=_dataclass_section(cp, "de", DeConfig, seed),
    )


def load_config(path) -> RunConfig:
    path = str(path)
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, os.path.dirname(os.path.abspath(path)), path)
