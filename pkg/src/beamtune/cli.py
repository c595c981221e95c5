"""Command-line entry point: ``beamtune <verb> ...``.

Exit codes: 0 success, 2 usage error (argparse), 3 lattice or params parse
error, 4 config error, 5 I/O error, 6 a self-check or consistency check
failed.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .agents.analysis import analyze_convergence, binomial_interval, cumulative_max, write_cv_table
from .agents.baselines import optimize_de, random_search
from .agents.stages import default_plan, read_training_log, train, write_training_log
from .checks import run_env_checks
from .config import DEFAULT_SIGMA, ConfigError, bundled_path, load_config
from .env import configure, transmission
from .lattice import LatticeError, preprocess, read_lattice, write_lattice
from .params import ParamsError, params_to_vector, read_params, write_params
from .report import cv_svg, envelope_svg, read_profile_csv, training_curve_svg, write_profile_csv
from .tracking import BunchGenParams, beam_profile, generate_bunch

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_CONFIG = 4
EXIT_IO = 5
EXIT_CHECK = 6


class InputFormatError(ValueError):
    """A log or profile file that cannot be read as such."""


def _lattice_arg(value: str) -> str:
    return bundled_path("desk.lte") if value == "desk" else value


def _load(path: str):
    return read_lattice(_lattice_arg(path))


def _bunch(args) -> BunchGenParams:
    sigma = tuple(args.sigma) if getattr(args, "sigma", None) else DEFAULT_SIGMA
    return BunchGenParams(args.n, sigma, args.seed)


def _write_text(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _out(args, cfg) -> str:
    out = args.output_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def cmd_inspect(args) -> int:
    g = _load(args.lattice)
    apertures = [g.elements[p] for p in g.aperture_index]
    print(f"line: {g.line_name}")
    print(f"elements: {len(g)}")
    print(f"tunable elements: {len(g.tunable_index)} ({g.n_quads} QUAD, {g.n_bends} SBEND)")
    print(f"total length: {g.total_length:.6g} m")
    print(f"apertures: {len(apertures)}")
    pos = g.positions()
    for p in g.aperture_index:
        e = g.elements[p]
        print(f"  {e.name} at s={pos[p]:.6g} m: AX={e.ax:.6g} AY={e.ay:.6g}")
    print(f"watch points: {len(g.watch_index)}")
    print(f"{g.n_parameters} tunable parameters")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    g = preprocess(_load(args.input))
    _write_text(args.output, write_lattice(g))
    print(f"wrote {args.output}: {len(g)} elements, {len(g.watch_index)} watch points")
    return EXIT_OK


def _vector_from_params(g, path):
    if path is None:
        return np.zeros(g.n_parameters)
    return params_to_vector(g, read_params(path))


def cmd_track(args) -> int:
    g = preprocess(_load(args.lattice))
    vec = _vector_from_params(g, args.params)
    tuned = configure(g, vec)
    bunch = generate_bunch(_bunch(args))
    rows = beam_profile(tuned.elements, bunch, at=tuned.watch_index)
    t = rows[-1]["n_survivors"] / bunch.n0
    if args.profile:
        write_profile_csv(args.profile, rows)
    print(f"transmission: {t!r} ({rows[-1]['n_survivors']}/{bunch.n0})")
    return EXIT_OK


def cmd_env_check(args) -> int:
    if args.episodes == 0:
        print("warning: 0 episodes requested, checks pass vacuously", file=sys.stderr)
    g = _load(args.lattice)
    results = run_env_checks(g, _bunch(args), args.episodes, args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = _out(args, cfg)
    g = preprocess(read_lattice(cfg.lattice))
    plan = cfg.stages
    if plan is None:
        e = cfg.ddpg.episodes
        plan = default_plan(g, (e // 4, e // 4, e - 2 * (e // 4)))
    step_log = os.path.join(out, "episodes.csv")
    if os.path.exists(step_log):
        os.remove(step_log)
    t0 = time.perf_counter()

    def progress(ev):
        if args.verbose:
            print(f"episode {ev.episode} stage {ev.stage}: {ev.transmission:.4f} (best {ev.cumulative_max:.4f})")

    result = train(
        g,
        cfg.bunch,
        cfg.ddpg,
        plan,
        n_min=cfg.n_min,
        default_bore=cfg.default_bore,
        episode_log=step_log,
        checkpoint_dir=os.path.join(out, "checkpoints"),
        save_buffer=args.save_buffer,
        callback=progress,
    )
    write_training_log(os.path.join(out, "training_log.csv"), result)
    write_params(
        os.path.join(out, "best_params.txt"),
        g,
        result.best_vector,
        header=f"best evaluation episode {result.best_episode}, transmission {result.best_transmission!r}",
    )
    print(f"episodes: {result.episodes}")
    print(f"best transmission: {result.best_transmission!r} (episode {result.best_episode})")
    print(f"wrote {out}/training_log.csv, best_params.txt, episodes.csv, checkpoints/")
    if args.verbose:
        print(f"elapsed: {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def cmd_optimize_de(args) -> int:
    cfg = load_config(args.config)
    out = _out(args, cfg)
    g = preprocess(read_lattice(cfg.lattice))
    de = cfg.de
    if args.workers and args.workers > 1:
        de = replace(de, workers=args.workers, updating="deferred")
    res = optimize_de(g, cfg.bunch, de)
    write_params(
        os.path.join(out, "de_best.txt"),
        g,
        res.vector,
        header=f"differential evolution, {res.evaluations} evaluations, transmission {res.transmission!r}",
    )
    with open(os.path.join(out, "de_history.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["evaluation", "best_transmission"])
        for i, v in enumerate(res.history, start=1):
            w.writerow([i, repr(float(v))])
    print(f"DE best transmission: {res.transmission!r} after {res.evaluations} evaluations")
    if args.random_search:
        rs = random_search(g, cfg.bunch, res.evaluations, cfg.seed)
        print(f"random search best transmission: {rs.transmission!r} after {rs.evaluations} evaluations")
    print(f"wrote {out}/de_best.txt, de_history.csv")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    g = preprocess(read_lattice(cfg.lattice))
    vec = _vector_from_params(g, args.params)
    n_eval = args.n or cfg.eval_n0
    results = []
    for n in (cfg.n0, n_eval):
        t = transmission(g, cfg.bunch.with_n0(n), vec)
        k = round(t * n)
        lo, hi = binomial_interval(k, n)
        results.append((n, t, lo, hi))
        print(f"N0={n}: transmission {t!r}, 95% interval [{lo:.6f}, {hi:.6f}]")
    (_, _, lo, hi), (_, t_eval, _, _) = results
    inside = lo <= t_eval <= hi
    print(f"N0={n_eval} estimate {'inside' if inside else 'OUTSIDE'} the N0={cfg.n0} interval")
    return EXIT_OK if inside or not args.strict else EXIT_CHECK


def cmd_report(args) -> int:
    if not (args.training_log or args.profile):
        raise ConfigError("report needs --training-log and/or --profile")
    os.makedirs(args.output_dir, exist_ok=True)
    written = []
    if args.training_log:
        try:
            names, rows = read_training_log(args.training_log)
        except (ValueError, IndexError) as exc:
            raise InputFormatError(str(exc)) from None
        if not rows:
            raise InputFormatError(f"training log {args.training_log} has no evaluation rows")
        ep = [r["episode"] for r in rows]
        tr = [r["transmission"] for r in rows]
        cm = cumulative_max(tr)
        path = os.path.join(args.output_dir, "training_curve.svg")
        _write_text(path, training_curve_svg(ep, tr, cm))
        written.append(path)
        try:
            cv_rows = analyze_convergence(rows, names, args.threshold)
        except ValueError as exc:
            print(f"CV analysis skipped: {exc}", file=sys.stderr)
        else:
            path = os.path.join(args.output_dir, "cv_table.csv")
            write_cv_table(path, cv_rows)
            written.append(path)
            path = os.path.join(args.output_dir, "cv_bands.svg")
            _write_text(path, cv_svg(cv_rows))
            written.append(path)
    if args.profile:
        try:
            rows = read_profile_csv(args.profile)
        except ValueError as exc:
            raise InputFormatError(str(exc)) from None
        apertures = []
        if args.lattice:
            g = _load(args.lattice)
            pos = g.positions()
            apertures = [(pos[p], g.elements[p].ax, g.elements[p].ay) for p in g.aperture_index]
        path = os.path.join(args.output_dir, "envelope.svg")
        _write_text(
            path,
            envelope_svg([r["s"] for r in rows], [r["std_x"] for r in rows], [r["std_y"] for r in rows], apertures),
        )
        written.append(path)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def _add_bunch_args(p, n_default=1000):
    p.add_argument("--n", type=int, default=n_default, help="number of particles (default %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="bunch seed (default %(default)s)")
    p.add_argument(
        "--sigma",
        type=float,
        nargs=5,
        metavar=("X", "XP", "Y", "YP", "DELTA"),
        help="bunch rms sizes (default %s)" % " ".join(repr(s) for s in DEFAULT_SIGMA),
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="beamtune", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    lat_help = "lattice file (.lte); 'desk' selects the bundled lattice"

    p = sub.add_parser("inspect", help="summarise a lattice")
    p.add_argument("lattice", help=lat_help)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("preprocess", help="insert watch points and write the lattice")
    p.add_argument("input", help=lat_help)
    p.add_argument("output", help="output .lte path")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("track", help="track a bunch once and report transmission")
    p.add_argument("lattice", help=lat_help)
    p.add_argument("--params", help="magnet settings file (unlisted elements are 0)")
    p.add_argument("--profile", help="write per-watch statistics CSV here")
    _add_bunch_args(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("env-check", help="random-policy self-checks of the environment")
    p.add_argument("lattice", help=lat_help)
    p.add_argument("--episodes", type=int, default=10)
    _add_bunch_args(p)
    p.set_defaults(func=cmd_env_check)

    for name, func, helptext in (
        ("train", cmd_train, "run stage-learning DDPG"),
        ("optimize-de", cmd_optimize_de, "run the differential-evolution baseline"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="run configuration (.ini)")
        p.add_argument("--output-dir", help="override run.output_dir")
        p.add_argument("--workers", type=int, default=1, help="cap on worker processes (default 1)")
        p.set_defaults(func=func)
        if name == "train":
            p.add_argument("--save-buffer", action="store_true", help="snapshot the replay buffer per stage")
            p.add_argument("-v", "--verbose", action="store_true")
        else:
            p.add_argument("--random-search", action="store_true", help="also run random search at equal budget")

    p = sub.add_parser("evaluate", help="re-track settings at high statistics")
    p.add_argument("config", help="run configuration (.ini)")
    p.add_argument("--params", help="magnet settings file")
    p.add_argument("--n", type=int, help="override beam.eval_n0")
    p.add_argument("--strict", action="store_true", help="exit 6 if the estimate leaves the interval")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render CSV and SVG reports")
    p.add_argument("--training-log", help="training_log.csv from 'train'")
    p.add_argument("--profile", help="per-watch CSV from 'track --profile'")
    p.add_argument("--lattice", help="lattice for aperture overlays")
    p.add_argument("--threshold", type=float, default=0.6, help="CV transmission threshold")
    p.add_argument("--output-dir", default=".", help="directory for report files")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LatticeError, ParamsError, InputFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed log/profile contents and invalid numeric arguments
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
