"""Command-line front end.

Exit codes: 0 analyses completed (negative verdicts included), 1 usage error,
2 system-definition error or unknown system, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys as _sys
from typing import Callable, Sequence

from . import __version__
from . import corpus
from .arnold import classify_level_set, iff_assessment
from .classify import certify_g1, classify_system, default_seeds, ghost_certificate
from .config import AnalysisConfig, ConfigError
from .conserved import bracket_reports, independence_rank, ranks_at, sample_points
from .expr import ExprDomainError, ExprSyntaxError, UnboundVariableError
from .integrate import IntegrationError, integrate_adaptive, integrate_symplectic
from .levelset import (
    BudgetExceeded,
    ProbeBox,
    SeedNotInSet,
    component_flood_fill,
    composition_futility,
    confining_probe,
    properness_probe,
    sum_of_squares_equivalence,
)
from .report import build_report, dumps, validate
from .runner import check_entry
from .system import DefinitionError, SystemDef

__all__ = ["main", "run", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_DEFINITION, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # let "-1,1" and "-2.5e3" through as values rather than options
        self._negative_number_matcher = re.compile(r"^-[\d.][\d.,eE+-]*$")

    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _param(text: str) -> tuple[str, object]:
    name, eq, value = text.partition("=")
    if not eq or not name:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    try:
        return name, float(value)
    except ValueError:
        return name, value


def _common(p: argparse.ArgumentParser, with_system: bool = True) -> None:
    if with_system:
        p.add_argument("system", help="corpus id or path to a JSON system definition")
        p.add_argument("--param", type=_param, action="append", default=[], metavar="NAME=VALUE",
                       help="override a corpus or definition parameter")
    p.add_argument("--config", help="JSON file with analysis settings")
    p.add_argument("--output", "-o", help="write the JSON report here instead of stdout")
    p.add_argument("--csv-dir", help="directory for CSV side files")
    p.add_argument("--seed", type=_floats, action="append", help="seed state, comma separated (repeatable)")
    p.add_argument("--horizon", type=float, help="integration horizon T")
    p.add_argument("--scales", type=_floats, help="probe half-widths, comma separated")
    p.add_argument("--resolution", type=int, help="grid cells per axis")
    p.add_argument("--budget", type=int, help="maximum grid cells per probe box")
    p.add_argument("--conservation-tol", type=float)
    p.add_argument("--bracket-tol", type=float)
    p.add_argument("--rank-rtol", type=float)
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--escape-radii", type=_floats)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="symstab", description="Stability evidence for vector fields and Hamiltonian systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="integrate one trajectory and write it as CSV")
    _common(p)
    p.add_argument("--x0", type=_floats, required=True)
    p.add_argument("--t", type=float, required=True, help="final time (negative runs backward)")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--method", choices=("adaptive", "symplectic"), default="adaptive")
    p.add_argument("--h", type=float, help="step size for the symplectic method")
    p.add_argument("--store-every", type=int, default=1)
    p.add_argument("--csv", help="trajectory CSV path")
    p.add_argument("--uniform", type=int, help="resample to this many uniform times in the CSV")

    p = sub.add_parser("certify", help="look for a confining conserved quantity or tuple")
    _common(p)

    p = sub.add_parser("classify", help="empirical bounded / escape / blow-up classification")
    _common(p)
    p.add_argument("--backward", action="store_true", help="integrate towards negative times")

    p = sub.add_parser("levelset", help="probe level-set components of a map")
    _common(p)
    p.add_argument("--map", action="append", required=True, help="candidate name or expression (repeatable)")
    p.add_argument("--mu", type=_floats, help="level value(s); defaults to the map at each seed")
    p.add_argument("--dump", help="CSV of visited cells for the first seed at the largest scale")

    p = sub.add_parser("properness", help="boundary-layer test for preimages of a box")
    _common(p)
    p.add_argument("--map", action="append", required=True)
    p.add_argument("--K", type=_floats, action="append", required=True, metavar="A,B",
                   help="interval for the matching --map (repeatable)")
    p.add_argument("--sos", action="store_true", help="also compare the tuple with its sum of squares")

    p = sub.add_parser("brackets", help="pairwise Poisson brackets and independence ranks")
    _common(p)
    p.add_argument("--map", action="append")

    p = sub.add_parser("arnold", help="torus / cylinder evidence and the integrability assessment")
    _common(p)
    p.add_argument("--map", action="append")

    p = sub.add_parser("ghost", help="search for states where H is large of either sign")
    _common(p)

    p = sub.add_parser("corpus", help="built-in systems")
    csub = p.add_subparsers(dest="corpus_command", parser_class=_Parser)
    c = csub.add_parser("list")
    _common(c, with_system=False)
    c = csub.add_parser("show")
    c.add_argument("id")
    _common(c, with_system=False)
    c = csub.add_parser("run-all")
    _common(c, with_system=False)
    return parser


# --------------------------------------------------------------------------


_CONFIG_FLAGS = {
    "seed": "seeds",
    "horizon": "horizon",
    "scales": "scales",
    "resolution": "resolution",
    "budget": "budget",
    "conservation_tol": "conservation_tol",
    "bracket_tol": "bracket_tol",
    "rank_rtol": "rank_rtol",
    "rtol": "rtol",
    "atol": "atol",
    "escape_radii": "escape_radii",
    "output": "output",
    "csv_dir": "csv_dir",
}


def _config(args) -> AnalysisConfig:
    flags = {key: getattr(args, attr, None) for attr, key in _CONFIG_FLAGS.items()}
    if args.config:
        return AnalysisConfig.load(args.config, flags)
    return AnalysisConfig.from_sources(None, flags)


def load_system(spec: str, params: Sequence[tuple[str, object]] = ()) -> tuple[SystemDef, corpus.CorpusEntry | None]:
    """Resolve a corpus id or a definition file; raises DefinitionError."""
    params = dict(params)
    if spec in corpus.ENTRIES:
        e = corpus.entry(spec)
        try:
            return e.build(**params), e
        except TypeError as exc:
            raise DefinitionError(f"bad parameters for {spec}: {exc}") from None
    if not os.path.isfile(spec):
        raise DefinitionError(f"unknown system {spec!r}: not a corpus id or a file")
    try:
        with open(spec) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DefinitionError(f"{spec}: {exc}") from None
    if not isinstance(doc, dict):
        raise DefinitionError(f"{spec}: definition must be a JSON object")
    if params:
        doc = {**doc, "parameters": {**doc.get("parameters", {}), **params}}
    return SystemDef.from_json(doc), None


def _seeds(cfg: AnalysisConfig, sys: SystemDef, entry) -> list[tuple[float, ...]]:
    seeds = list(cfg.seeds or (entry.seeds if entry else ()) or default_seeds(sys))
    for s in seeds:
        if len(s) != sys.dim:
            raise UsageError(f"seed {list(s)} has {len(s)} components, expected {sys.dim}")
    return seeds


def _horizon(cfg: AnalysisConfig, entry, default: float = 1000.0) -> float:
    return cfg.horizon or (entry.horizon if entry else default)


def _maps(sys: SystemDef, names: Sequence[str]):
    out = []
    for n in names:
        try:
            out.append((n, sys.candidate(n)))
        except KeyError:
            try:
                out.append((n, sys.parse(n)))
            except (ExprSyntaxError, DefinitionError) as exc:
                raise UsageError(f"--map {n!r} is neither a candidate nor a valid expression: {exc}") from None
    return out


def _csv_path(cfg: AnalysisConfig, name: str) -> str | None:
    return os.path.join(cfg.csv_dir, name) if cfg.csv_dir else None


# --------------------------------------------------------------------------
# commands: each returns (system name, certificate, sub_reports, pending file writes)


def cmd_simulate(args, cfg, sys, entry):
    x0 = args.x0
    if len(x0) != sys.dim:
        raise UsageError(f"--x0 has {len(x0)} components, expected {sys.dim}")
    if args.method == "symplectic":
        if not args.h or args.h <= 0:
            raise UsageError("--h > 0 is required for the symplectic method")
        n = int(round(abs(args.t - args.t0) / args.h))
        h = args.h if args.t >= args.t0 else -args.h
        traj = integrate_symplectic(sys, x0, h, n, t0=args.t0, store_every=max(1, args.store_every))
    else:
        traj = integrate_adaptive(sys, x0, args.t0, args.t, rtol=cfg.rtol, atol=cfg.atol)
    path = args.csv or _csv_path(cfg, f"{sys.name}_trajectory.csv")
    files = []
    if path:
        files.append((path, lambda p=path: traj.to_csv(p, uniform=args.uniform)))
    sub = [{"kind": "trajectory", **traj.summary()}]
    return None, sub, files


def cmd_certify(args, cfg, sys, entry):
    cert = certify_g1(sys, _seeds(cfg, sys, entry), cfg)
    return cert, [{"kind": "certify", "seeds": [list(s) for s in _seeds(cfg, sys, entry)]}], []


def cmd_classify(args, cfg, sys, entry):
    res = classify_system(sys, _seeds(cfg, sys, entry), _horizon(cfg, entry), args.backward, cfg)
    files = []
    if cfg.csv_dir:
        for i, tr in enumerate(res.trajectories):
            p = _csv_path(cfg, f"{sys.name}_seed{i}.csv")
            files.append((p, lambda p=p, tr=tr: tr.to_csv(p)))
    return res.certificate, [res.sub_report()], files


def cmd_levelset(args, cfg, sys, entry):
    maps = _maps(sys, args.map)
    F = [q for _, q in maps]
    name = ",".join(n for n, _ in maps)
    seeds = _seeds(cfg, sys, entry)
    levels = None
    if args.mu is not None:
        if len(args.mu) != len(F):
            raise UsageError("--mu needs one value per --map")
        levels = [args.mu] * len(seeds)
    v = confining_probe(sys, F, seeds, levels, cfg.scales, cfg.resolution, map_name=name, budget=cfg.budget)
    sub = [{"kind": "confining_probe", **v.to_json()}]
    adv = composition_futility(v)
    if adv is not None:
        sub.append({"kind": "composition_futility", "advisory": adv.to_json()})
    files = []
    if args.dump:
        box = ProbeBox.around([0.0] * sys.dim, cfg.scales[-1], cfg.resolution or None, sys.periodic, cfg.budget)
        mu = args.mu if args.mu is not None else v.outcomes[0].mu
        files.append((args.dump, lambda: component_flood_fill(sys, F, mu, seeds[0], box, name, cell_dump=args.dump)))
    return None, sub, files


def cmd_properness(args, cfg, sys, entry):
    maps = _maps(sys, args.map)
    if len(args.K) != len(maps):
        raise UsageError("give one --K interval per --map")
    for k in args.K:
        if len(k) != 2:
            raise UsageError("--K expects a,b")
    name = ",".join(n for n, _ in maps)
    v = properness_probe(sys, [q for _, q in maps], [tuple(k) for k in args.K], cfg.scales, cfg.resolution,
                         map_name=name, budget=cfg.budget)
    sub = [{"kind": "properness_probe", **v.to_json()}]
    adv = composition_futility(v)
    if adv is not None:
        sub.append({"kind": "composition_futility", "advisory": adv.to_json()})
    if args.sos:
        sub.append({"kind": "sum_of_squares", **sum_of_squares_equivalence(sys, maps, scales=cfg.scales,
                                                                          resolution=cfg.resolution).to_json()})
    return None, sub, []


def _candidate_maps(args, sys, entry):
    if args.map:
        return _maps(sys, args.map)
    if entry and entry.level_qs:
        return _maps(sys, entry.level_qs)
    return list(sys.bound_conserved)


def cmd_brackets(args, cfg, sys, entry):
    maps = _candidate_maps(args, sys, entry)
    if not maps:
        raise UsageError("no conserved quantities to bracket; pass --map")
    pts = sample_points([0.0] * sys.dim, [cfg.sample_half_width] * sys.dim, cfg.sample_count, sys.periodic)
    reps = bracket_reports(sys, maps, pts, cfg.bracket_tol)
    Fs = [q for _, q in maps]
    ranks = ranks_at(Fs, pts, sys.variables, sys.periodic, cfg.rank_rtol)
    seeds = _seeds(cfg, sys, entry)
    sub = [
        {"kind": "brackets", "maps": [n for n, _ in maps], "pairs": [r.to_json() for r in reps],
         "involution": all(r.passed for r in reps), "sample_half_width": cfg.sample_half_width},
        {"kind": "independence", "sample_count": int(len(ranks)), "min_rank": int(ranks.min()),
         "max_rank": int(ranks.max()), "rank_rtol": cfg.rank_rtol,
         "seed_ranks": [{"seed": list(s), "rank": independence_rank(Fs, s, sys.variables, sys.periodic, cfg.rank_rtol)}
                        for s in seeds]},
    ]
    return None, sub, []


def cmd_arnold(args, cfg, sys, entry):
    maps = _candidate_maps(args, sys, entry)
    if not maps:
        raise UsageError("no conserved quantities; pass --map")
    seeds = _seeds(cfg, sys, entry)
    T = _horizon(cfg, entry, 100.0)
    iff = iff_assessment(sys, maps, seeds, T, cfg)
    levels = iff.levels or tuple(classify_level_set(sys, maps, s, T, cfg.transient) for s in seeds)
    files = []
    if cfg.csv_dir:
        for i, lv in enumerate(levels):
            for f in lv.flows:
                p = _csv_path(cfg, f"{sys.name}_seed{i}_flow_{f.name}.csv")
                files.append((p, lambda p=p, tr=f.trajectory: tr.to_csv(p)))
    sub = [{"kind": "level_topology", **lv.to_json()} for lv in levels]
    sub.append({"kind": "iff_assessment", **{k: v for k, v in iff.to_json().items() if k != "levels"}})
    return None, sub, files


def cmd_ghost(args, cfg, sys, entry):
    cert, rep = ghost_certificate(sys, cfg)
    return cert, [{"kind": "ghost_probe", **rep.to_json()}], []


def cmd_corpus(args, cfg):
    which = args.corpus_command
    if which == "list":
        return "corpus", None, [{"kind": "corpus_entry", "id": e.id, "description": e.description}
                                for e in corpus.ENTRIES.values()], []
    if which == "show":
        try:
            e = corpus.entry(args.id)
        except KeyError as exc:
            raise DefinitionError(str(exc)) from None
        sys = e.build()
        return e.id, None, [{
            "kind": "corpus_entry",
            "id": e.id,
            "description": e.description,
            "defaults": e.defaults,
            "seeds": [list(s) for s in e.seeds],
            "horizon": e.horizon,
            "level_qs": list(e.level_qs),
            "definition": sys.to_json(),
            "expectations": [{"analysis": x.analysis, "expected": x.expected, "provenance": x.provenance,
                              "options": x.options} for x in e.expectations],
        }], []
    if which == "run-all":
        results = [r for e in corpus.ENTRIES.values() for r in check_entry(e, cfg)]
        sub = [r.to_json() for r in results]
        sub.append({"kind": "corpus_summary", "total": len(results),
                    "passed": sum(r.passed for r in results),
                    "all_passed": all(r.passed for r in results)})
        return "corpus", None, sub, []
    raise UsageError("corpus needs one of: list, show, run-all")


COMMANDS: dict[str, Callable] = {
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "classify": cmd_classify,
    "levelset": cmd_levelset,
    "properness": cmd_properness,
    "brackets": cmd_brackets,
    "arnold": cmd_arnold,
    "ghost": cmd_ghost,
}


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or _sys.stdout
    stderr = stderr or _sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        cfg = _config(args)
        if args.command == "corpus":
            system, cert, sub, files = cmd_corpus(args, cfg)
            command = f"corpus {args.corpus_command}"
        else:
            sys, entry = load_system(args.system, args.param)
            cert, sub, files = COMMANDS[args.command](args, cfg, sys, entry)
            system, command = sys.name, args.command
        report = build_report(command, system, cfg, cert.to_json() if cert is not None else None, sub,
                              [p for p, _ in files])
        validate(report)
        # single writer at the end of the run
        for path, write in files:
            d = os.path.dirname(path)
            if d:
                os.makedirs(d, exist_ok=True)
            write()
        text = dumps(report)
        if cfg.output:
            d = os.path.dirname(cfg.output)
            if d:
                os.makedirs(d, exist_ok=True)
            with open(cfg.output, "w") as fh:
                fh.write(text)
        else:
            stdout.write(text)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=stderr)
        return EXIT_USAGE
    except (ConfigError, SeedNotInSet) as exc:
        print(f"usage error: {exc}", file=stderr)
        return EXIT_USAGE
    except (DefinitionError, UnboundVariableError) as exc:
        print(f"definition error: {exc}", file=stderr)
        return EXIT_DEFINITION
    except (BudgetExceeded, IntegrationError, ExprDomainError, OSError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=stderr)
        return EXIT_RUNTIME


def main() -> None:
    raise SystemExit(run())
