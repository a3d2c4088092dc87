"""Command-line interface.

Subcommands::

    build-coreset  summarize a point file offline
    stream         summarize a point file or stdin by merge-and-reduce
    eval           constrained cost of given centers on points or a summary
    solve          search a summary (or summarize then search) for centers
    oracle         brute-force optimum of a tiny instance as a JSON fixture

Exit codes: 0 success, 1 infeasible constraint, 2 usage error, 3 cap exceeded.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from .assignment import optimal_assignment
from .constraints import EnumerationCapError, InfeasibleError, encode_unconstrained, family_from_text
from .coreset import Coreset, CoresetError, build_movement_coreset, dump_certificate, dump_coreset, load_coreset
from .geometry import GeometryError, MetricConfig, PointSet, as_centers
from .oracle import OracleBudgetError, brute_force_constrained_opt
from .pointio import iter_records, read_points
from .solver import (
    CandidateCapError,
    DEFAULT_CANDIDATE_CAP,
    ptas_solve,
    smallest_feasible_eps,
    solve_with_transfer,
)
from .stream import StreamConfig, StreamError, StreamState, certified_eps, run_stream

SCHEMA = 1
EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3


class UsageError(ValueError):
    """Invalid arguments or inputs."""


def _num(x):
    """Round floats to 12 significant digits for reports."""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.12g}")
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_num(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _num(v) for k, v in x.items()}
    return x


def _emit(report: dict, fmt: str, fh):
    report = _num({"schema": SCHEMA, **report})
    if fmt == "json":
        fh.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
        return
    for key in sorted(report):
        val = report[key]
        fh.write(f"{key}: {json.dumps(val) if isinstance(val, (list, dict)) else val}\n")


def _open_in(path: str):
    return sys.stdin if path == "-" else open(path)


def _output(path: Optional[str]):
    return open(path, "w") if path else _Stdout()


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def _read_input(path: str, dimension, n_colors):
    """Points or a serialized summary, told apart by the summary header."""
    with _open_in(path) as fh:
        text = fh.read()
    if text.startswith("coreset v1"):
        return load_coreset(io.StringIO(text))
    return read_points(io.StringIO(text), dimension, n_colors)


def _metric(args, summary: Optional[Coreset] = None) -> MetricConfig:
    if summary is not None:
        if args.power is not None and args.power != summary.power:
            raise UsageError(f"summary was built with m={summary.power}, got -m {args.power}")
        return MetricConfig(summary.power)
    return MetricConfig(args.power or 2)


def _family(args, points: PointSet, k: int, allow_links: bool = True):
    if not args.constraint:
        return points, encode_unconstrained(k, points.color_totals())
    with open(args.constraint) as fh:
        text = fh.read()
    if not allow_links and ("must_link" in text or "cannot_link" in text):
        raise UsageError("link constraints refer to input points and need a point file, not a summary")
    return family_from_text(text, points, k)


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _check_eps(eps, upper_open=False):
    if not (0 < eps < 1 if upper_open else 0 < eps <= 1):
        raise UsageError(f"eps must lie in (0, 1{')' if upper_open else ']'}, got {eps}")


# -- subcommands ---------------------------------------------------------------

def cmd_build(args) -> int:
    _require(args, "k", "eps")
    _check_eps(args.eps)
    points = _read_input(args.input, args.dim, args.colors)
    if isinstance(points, Coreset):
        raise UsageError("input is already a summary")
    cfg = _metric(args)
    core = build_movement_coreset(points, args.k, args.eps, cfg, rng_seed=args.seed)
    with _output(args.output) as fh:
        dump_coreset(core, fh)
    if args.certificate and core.certificate is not None:
        with open(args.certificate, "w") as fh:
            dump_certificate(core, fh)
    report = {"command": "build-coreset", "input_entries": len(points),
              "input_weight": points.total_weight, "entries": len(core),
              "k": args.k, "eps": args.eps, "m": cfg.power,
              "opt_lower_bound": core.opt_lower_bound, "movement": core.movement_bound,
              "budget": core.budget}
    if args.report:
        with open(args.report, "w") as fh:
            _emit(report, args.format, fh)
    return EXIT_OK


def cmd_stream(args) -> int:
    if args.resume:
        with open(args.resume) as fh:
            state = StreamState.load(fh)
    else:
        _require(args, "k", "eps", "block_size")
        _check_eps(args.eps)
        scfg = StreamConfig(args.block_size, args.k, args.eps, args.power or 2,
                            args.colors or 1, args.seed)
        state = StreamState(scfg)
    checkpoints = []
    marks = []
    if args.checkpoint_every:
        marks = range(args.checkpoint_every, 10**15, args.checkpoint_every)

    def save(name, st):
        if args.checkpoint_dir:
            os.makedirs(args.checkpoint_dir, exist_ok=True)
            with open(os.path.join(args.checkpoint_dir, name), "w") as fh:
                st.dump(fh)

    def on_checkpoint(n, st):
        checkpoints.append({"points": n, "entries": len(st.summary()),
                            "stored_entries": st.stored_entries})
        save(f"state-{n}.txt", st)

    def on_flush(st):
        save("state-flush.txt", st)

    with _open_in(args.input) as fh:
        records = iter_records(fh, args.dim)
        if args.checkpoint_every:
            records = _with_marks(records, state, marks, on_checkpoint)
        run_stream(state, records, flush_flag=args.flush_flag, on_flush=on_flush)
    if args.state_out:
        with open(args.state_out, "w") as fh:
            state.dump(fh)
    core = state.finalize()
    with _output(args.output) as fh:
        dump_coreset(core, fh)
    report = {"command": "stream", "points": state.points_seen, "blocks": state.blocks,
              "entries": len(core), "peak_entries": state.peak_entries,
              "certified_eps": certified_eps(core), "checkpoints": checkpoints}
    if args.report:
        with open(args.report, "w") as fh:
            _emit(report, args.format, fh)
    return EXIT_OK


def _with_marks(records, state, marks, callback):
    """Pass records through, calling ``callback`` when the point count crosses a mark."""
    it = iter(marks)
    nxt = next(it)
    for rec in records:
        yield rec
        while state.points_seen >= nxt:
            callback(nxt, state)
            nxt = next(it)


def _read_centers(path: str, dimension: int) -> np.ndarray:
    with open(path) as fh:
        recs = list(iter_records(fh, dimension))
    if not recs:
        raise UsageError("no centers in centers file")
    return as_centers(np.vstack([r[0] for r in recs]), dimension)


def cmd_eval(args) -> int:
    _require(args, "centers")
    data = _read_input(args.input, args.dim, args.colors)
    summary = data if isinstance(data, Coreset) else None
    points = summary.points if summary else data
    cfg = _metric(args, summary)
    centers = _read_centers(args.centers, points.dimension)
    k = args.k or len(centers)
    points, family = _family(args, points, k, allow_links=summary is None)
    a = optimal_assignment(points, centers, family, cfg)
    if args.assignment:
        with open(args.assignment, "w") as fh:
            for e, c, w in a.triples():
                fh.write(json.dumps([e, c, w]) + "\n")
    report = {"command": "eval", "cost": a.total_cost, "raw_cost": a.raw_cost,
              "realized_matrix": a.realized_matrix, "family": family.describe(),
              "entries": len(points), "m": cfg.power}
    with _output(args.output) as fh:
        _emit(report, args.format, fh)
    return EXIT_OK


def _outlier_raw(points, centers, family, cfg, assignment):
    """Raw cost with each outlier served at its own location."""
    z = family.free_rows
    if not z:
        return assignment.total_cost
    ent = [e for e, r, w in assignment.triples() for _ in range(w) if r < z]
    full = np.vstack([points.coords[ent], centers])
    return optimal_assignment(points, full, family, cfg).raw_cost


def cmd_solve(args) -> int:
    _require(args, "k", "eps")
    data = _read_input(args.input, args.dim, args.colors)
    summary = data if isinstance(data, Coreset) else None
    points = summary.points if summary else data
    cfg = _metric(args, summary)
    points, family = _family(args, points, args.k, allow_links=summary is None)
    try:
        if summary is not None:
            _check_eps(args.eps)
            res = ptas_solve(summary, args.k, args.eps, family, cfg, args.cap, jobs=args.jobs)
        else:
            _check_eps(args.eps, upper_open=True)
            res = solve_with_transfer(points, args.k, args.eps, family, cfg, args.block_size,
                                      args.seed, args.cap, jobs=args.jobs)
    except CandidateCapError as exc:
        hint = smallest_feasible_eps(summary or points, args.k, args.cap)
        msg = f"{exc}" + ("" if hint is None else f" (smallest workable eps for this summary: {hint:.6g})")
        raise CandidateCapError(msg) from None
    a = res.assignment
    report = {"command": "solve", "centers": res.centers, "cost": res.cost,
              "raw_cost": _outlier_raw(points, res.centers, family, cfg, a),
              "coreset_cost": res.coreset_cost, "realized_matrix": a.realized_matrix,
              "certified_factor": res.certified_factor, "derivation": res.derivation,
              "candidates_examined": res.candidates_examined,
              "candidates_total": res.candidates_total, "family": family.describe(),
              "m": cfg.power, "meta": res.meta}
    with _output(args.output) as fh:
        _emit(report, args.format, fh)
    return EXIT_OK


def cmd_oracle(args) -> int:
    _require(args, "k")
    data = _read_input(args.input, args.dim, args.colors)
    summary = data if isinstance(data, Coreset) else None
    points = summary.points if summary else data
    cfg = _metric(args, summary)
    points, family = _family(args, points, args.k, allow_links=summary is None)
    res = brute_force_constrained_opt(points, family, cfg)
    report = {"command": "oracle", "feasible": res.feasible, "opt": res.opt,
              "family": family.describe(), "m": cfg.power,
              "instance": {"coords": points.coords, "colors": points.colors,
                           "weights": points.weights}}
    if res.feasible:
        report["witness"] = {"labels": res.labels, "centers": res.centers,
                             "realized_matrix": res.realized_matrix,
                             "expanded_coords": res.points.coords}
    with _output(args.output) as fh:
        _emit(report, args.format, fh)
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


# -- parser ---------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("input", help="point file, summary file, or - for stdin")
    common.add_argument("-k", type=int, help="number of clusters")
    common.add_argument("-e", "--eps", type=float, help="accuracy parameter")
    common.add_argument("-m", "--power", type=int, choices=(1, 2),
                        help="cost power: 1 k-median, 2 k-means (default 2)")
    common.add_argument("--dim", type=int, help="coordinates per line (default: every field)")
    common.add_argument("--colors", type=int, help="number of colors (default: max color + 1)")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("-o", "--output", help="output path (default stdout)")
    common.add_argument("--format", choices=("text", "json"), default="json")

    p = _Parser(prog="streamcoreset", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build-coreset", parents=[common], help="offline summary")
    b.add_argument("--certificate", help="write the movement certificate here")
    b.add_argument("--report", help="write a report here")
    b.set_defaults(func=cmd_build)

    s = sub.add_parser("stream", parents=[common], help="merge-and-reduce summary")
    s.add_argument("-B", "--block-size", type=int, help="points per block")
    s.add_argument("--checkpoint-every", type=int, help="record a checkpoint every N points")
    s.add_argument("--checkpoint-dir", help="directory for checkpoint state files")
    s.add_argument("--flush-flag", help="flag file: when present, dump state and remove it")
    s.add_argument("--resume", help="continue from a saved state file")
    s.add_argument("--state-out", help="write the final state here")
    s.add_argument("--report", help="write a report here")
    s.set_defaults(func=cmd_stream)

    e = sub.add_parser("eval", parents=[common], help="constrained cost of given centers")
    e.add_argument("--centers", help="center file, one center per line")
    e.add_argument("--constraint", help="constraint file")
    e.add_argument("--assignment", help="write (entry, center, mass) JSON lines here")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("solve", parents=[common], help="search for centers")
    v.add_argument("--constraint", help="constraint file")
    v.add_argument("-B", "--block-size", type=int, help="stream the input in blocks of this size")
    v.add_argument("--cap", type=int, default=DEFAULT_CANDIDATE_CAP, help="candidate cap")
    v.add_argument("--jobs", type=int, default=_default_jobs(), help="worker processes")
    v.set_defaults(func=cmd_solve)

    o = sub.add_parser("oracle", parents=[common], help="brute-force fixture")
    o.add_argument("--constraint", help="constraint file")
    o.set_defaults(func=cmd_oracle)
    return p


def run(argv=None) -> int:
    """Run the CLI and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.k is not None and args.k < 1:
            raise UsageError("k must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (CandidateCapError, EnumerationCapError, OracleBudgetError) as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (GeometryError, CoresetError, StreamError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
