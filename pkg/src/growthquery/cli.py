"""Command-line entry point: the pipeline as composable subcommands.

Every run resolves its configuration up front and can log it, together
with a content hash of each input file, by setting GQ_LOG=INFO.  Outputs
are written atomically.  Exit codes: 0 success, 2 usage error, 3 file
format error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DatabaseBuildError,
    DimensionMismatchError,
    FormatError,
    NumericalInstabilityError,
)
from .evalbench import EVAL_METHODS, bench, make_query_set, run_evaluation
from .features import FEATURE_NAMES, pair_features
from .forward import GrowthParams, SolverConfig, segment, simulate
from .query import direct_query, downsampled_query, embedding_query, feature_query
from .tumordb import ParamRanges, SizeFilter, build_database, load_db, save_db
from .voxel import (
    SegmentationPair,
    atomic_write,
    load_atlas,
    load_mask,
    make_phantom_atlas,
    save_atlas,
    save_field,
    save_mask,
)

logger = logging.getLogger("growthquery.cli")

_QUERY_HEADER = "rank,id,score,seed_x,seed_y,seed_z,dw,rho,tend"
_EXPLAIN_HEADER = "name,query,match,z_query,z_match"
_EMBED_ARRAYS = ("db_t1gd", "db_flair", "query_t1gd", "query_flair")


@dataclass(frozen=True)
class RunConfig:
    """One resolved invocation, as logged at the start of every run."""

    subcommand: str
    options: dict
    log_level: str

    @classmethod
    def from_args(cls, args: argparse.Namespace, log_level: str) -> "RunConfig":
        options = {
            k: v for k, v in sorted(vars(args).items()) if k not in ("func", "subcommand")
        }
        return cls(subcommand=args.subcommand, options=options, log_level=log_level)

    def describe(self) -> str:
        flags = " ".join(f"{k}={v!r}" for k, v in self.options.items())
        return f"subcommand={self.subcommand} log_level={self.log_level} {flags}"


def _configure_logging() -> str:
    name = (os.environ.get("GQ_LOG") or "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        name, level = "WARNING", logging.WARNING
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("growthquery").setLevel(level)
    return name


def _log_input(path) -> None:
    # hash only when the record will actually be emitted
    if logger.isEnabledFor(logging.INFO):
        digest = hashlib.blake2b(Path(path).read_bytes(), digest_size=16).hexdigest()
        logger.info("input %s blake2b=%s", path, digest)


def _load_ranges(path) -> ParamRanges:
    """Parse a line-oriented ranges file: `key = min max`, # comments."""
    _log_input(path)
    fields: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition("=")
        key = key.strip()
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'key = min max', got {raw!r}")
        if key not in ("d_w", "rho", "t_end"):
            raise FormatError(f"{path}:{lineno}: unknown parameter {key!r}")
        if key in fields:
            raise FormatError(f"{path}:{lineno}: duplicate parameter {key!r}")
        parts = rest.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected two bounds, got {rest.strip()!r}")
        try:
            fields[key] = (float(parts[0]), float(parts[1]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-numeric bound in {rest.strip()!r}") from exc
    try:
        return ParamRanges(**fields)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _parse_methods(text: str) -> tuple:
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    if not methods:
        raise ValueError("--methods must name at least one method")
    for m in methods:
        if m not in EVAL_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(EVAL_METHODS)}")
    return methods


def _resolve_atlas(path, db):
    """Load --atlas, or reconstruct the standard phantom the db was built
    from; the stored fingerprint decides whether that is legitimate."""
    if path is not None:
        _log_input(path)
        return load_atlas(path)
    d = db.dims
    if d.nx == d.ny == d.nz:
        try:
            atlas = make_phantom_atlas(d.nx, dx=d.dx)
        except ValueError:
            atlas = None
        if atlas is not None and atlas.fingerprint() == db.atlas_fingerprint:
            logger.info("inferred standard phantom atlas %d^3 dx=%g", d.nx, d.dx)
            return atlas
    raise ValueError(
        "this database was not built from the standard phantom; "
        "pass --atlas with the atlas file used at build time"
    )


# ---------------------------------------------------------------------------
# subcommands


def _cmd_atlas_gen(args) -> int:
    atlas = make_phantom_atlas(args.size, dx=args.dx)
    save_atlas(atlas, args.out)
    logger.info("wrote %s^3 phantom atlas to %s", args.size, args.out)
    return 0


def _cmd_simulate(args) -> int:
    _log_input(args.atlas)
    atlas = load_atlas(args.atlas)
    sx, sy, sz = args.seed
    params = GrowthParams(sx, sy, sz, d_w=args.dw, rho=args.rho, t_end=args.tend)
    config = SolverConfig(u0=args.u0, dt_override=args.dt)
    u = simulate(atlas, params, config=config)
    save_field(u, args.out)
    if args.seg_out:
        pair = segment(u)
        save_mask(pair.t1gd, str(args.seg_out) + ".t1gd")
        save_mask(pair.flair, str(args.seg_out) + ".flair")
    return 0


def _cmd_build_db(args) -> int:
    _log_input(args.atlas)
    atlas = load_atlas(args.atlas)
    ranges = _load_ranges(args.ranges) if args.ranges else ParamRanges()
    db = build_database(
        atlas, args.n, ranges=ranges, master_seed=args.seed, jobs=args.jobs
    )
    save_db(db, args.out)
    logger.info("wrote %d records to %s", len(db), args.out)
    return 0


def _explain_table(db, pair, ranking) -> str:
    qv = pair_features(pair).as_array()
    mv = db.records[ranking.entries[0][0]].features.as_array()
    mean = np.asarray(db.stats.mean)
    std = np.asarray(db.stats.std)
    lines = [_EXPLAIN_HEADER]
    for i, name in enumerate(FEATURE_NAMES):
        if std[i] > 0.0:
            zq = f"{(qv[i] - mean[i]) / std[i]:.6g}"
            zm = f"{(mv[i] - mean[i]) / std[i]:.6g}"
        else:
            zq = zm = ""  # z-score undefined for a constant feature
        lines.append(f"{name},{qv[i]:.6g},{mv[i]:.6g},{zq},{zm}")
    return "\n".join(lines)


def _cmd_query(args) -> int:
    if args.explain and args.method == "embed":
        raise ValueError("--explain needs the query masks; it is unavailable with --method embed")
    _log_input(args.db)
    db = load_db(args.db)
    k = args.k if args.k is not None else min(5, len(db))

    pair = None
    if args.method == "embed":
        if args.embeddings is None:
            raise ValueError("--embeddings is required with --method embed")
        _log_input(args.embeddings)
        with np.load(args.embeddings) as data:
            missing = [name for name in _EMBED_ARRAYS if name not in data]
            if missing:
                raise FormatError(f"embeddings file lacks arrays: {', '.join(missing)}")
            if len(data["db_t1gd"]) != len(db):
                raise DimensionMismatchError(
                    f"embedding rows ({len(data['db_t1gd'])}) != database records ({len(db)})"
                )
            ranking = embedding_query(
                (data["db_t1gd"], data["db_flair"]),
                data["query_t1gd"],
                data["query_flair"],
                k,
            )
    else:
        if args.t1gd is None or args.flair is None:
            raise ValueError("--t1gd and --flair are required for mask-based methods")
        _log_input(args.t1gd)
        _log_input(args.flair)
        pair = SegmentationPair(t1gd=load_mask(args.t1gd), flair=load_mask(args.flair))
        if args.method == "direct":
            ranking = direct_query(db, pair, k)
        elif args.method in ("ds2", "ds4"):
            ranking = downsampled_query(db, pair, k, factor=int(args.method[2:]))
        else:
            ranking = feature_query(db, pair, k, n_prefilter=args.prefilter)

    lines = [_QUERY_HEADER]
    for rank, (rid, score) in enumerate(ranking.entries, 1):
        p = db.records[rid].params
        lines.append(
            f"{rank},{rid},{score:.17g},{p.seed_x},{p.seed_y},{p.seed_z},"
            f"{p.d_w:.17g},{p.rho:.17g},{p.t_end:.17g}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    if args.explain:
        sys.stdout.write("\n" + _explain_table(db, pair, ranking) + "\n")
    if args.dump_match:
        rec = db.records[ranking.entries[0][0]]
        save_mask(rec.seg.t1gd, str(args.dump_match) + ".t1gd")
        save_mask(rec.seg.flair, str(args.dump_match) + ".flair")
    return 0


def _make_queries(args, db):
    atlas = _resolve_atlas(args.atlas, db)
    ranges = _load_ranges(args.ranges) if args.ranges else ParamRanges()
    queries = make_query_set(
        atlas, ranges, SizeFilter(), n=args.n_queries, seed=args.seed, db=db
    )
    logger.info("query set diagnostics: %s", queries.diagnostics)
    return queries


def _cmd_evaluate(args) -> int:
    methods = _parse_methods(args.methods)
    _log_input(args.db)
    db = load_db(args.db)
    queries = _make_queries(args, db)
    report = run_evaluation(db, queries, methods=methods, timing=args.timing)
    text = report.to_csv()
    if args.out:
        atomic_write(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args) -> int:
    _log_input(args.db)
    db = load_db(args.db)
    queries = _make_queries(args, db)
    result = bench(db, queries, EVAL_METHODS, repetitions=args.reps)
    lines = ["method,median_runtime_s"]
    lines.extend(f"{m},{result.medians_s[m]:.6f}" for m in EVAL_METHODS)
    lines.append("")
    lines.append(f"repetitions: {result.repetitions}  worker_count: {result.worker_count}")
    machine = result.machine
    lines.append(
        f"machine: {machine['platform']}  python {machine['python']}  "
        f"numpy {machine['numpy']}  cpus {machine['cpu_count']}"
    )
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch


def _seed_triple(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seed coordinates must be integers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="growthquery",
        description="Tumor growth simulation and query-by-segmentation "
        "over precomputed databases.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("atlas-gen", help="write a spherical phantom tissue atlas")
    p.add_argument("--size", type=int, required=True, help="cubic grid edge, voxels (>= 16)")
    p.add_argument("--dx", type=float, required=True, help="voxel spacing, mm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_atlas_gen)

    p = sub.add_parser("simulate", help="grow one tumor and write the density field")
    p.add_argument("--atlas", required=True)
    p.add_argument("--seed", type=_seed_triple, required=True, metavar="X,Y,Z")
    p.add_argument("--dw", type=float, required=True, help="white matter diffusivity, mm^2/day")
    p.add_argument("--rho", type=float, required=True, help="proliferation rate, 1/day")
    p.add_argument("--tend", type=float, required=True, help="horizon, days")
    p.add_argument("--u0", type=float, default=0.1, help="seed density (default 0.1)")
    p.add_argument("--dt", type=float, default=None, help="override the stable time step")
    p.add_argument("--out", required=True)
    p.add_argument("--seg-out", default=None, metavar="PREFIX",
                   help="also write the thresholded masks to PREFIX.t1gd / PREFIX.flair")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("build-db", help="generate a tumor database")
    p.add_argument("--atlas", required=True)
    p.add_argument("--n", type=int, required=True, help="records to accept")
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--ranges", default=None, help="file of 'key = min max' parameter bounds")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None, help="workers (default: all cores)")
    p.set_defaults(func=_cmd_build_db)

    p = sub.add_parser("query", help="rank database tumors against a segmentation")
    p.add_argument("--db", required=True)
    p.add_argument("--t1gd", default=None, help="query T1Gd mask (GQBM)")
    p.add_argument("--flair", default=None, help="query FLAIR mask (GQBM)")
    p.add_argument(
        "--method", required=True, choices=("direct", "ds2", "ds4", "rf", "embed")
    )
    p.add_argument("--k", type=int, default=None, help="results to print (default min(5, db))")
    p.add_argument("--prefilter", type=int, default=1000, help="rf stage-1 pool size")
    p.add_argument("--explain", action="store_true",
                   help="append a per-feature query/match comparison table")
    p.add_argument("--embeddings", default=None,
                   help="npz with db_t1gd, db_flair, query_t1gd, query_flair "
                   "(required for --method embed)")
    p.add_argument("--dump-match", default=None, metavar="PREFIX",
                   help="write the best match's masks to PREFIX.t1gd / PREFIX.flair")
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("evaluate", help="score retrieval strategies on held-out queries")
    p.add_argument("--db", required=True)
    p.add_argument("--n-queries", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--methods", default=",".join(EVAL_METHODS))
    p.add_argument("--out", default=None, help="report CSV path (default: stdout)")
    p.add_argument("--atlas", default=None,
                   help="atlas used at build time (inferred for phantom-built dbs)")
    p.add_argument("--ranges", default=None, help="parameter bounds for query sampling")
    p.add_argument("--timing", action="store_true",
                   help="measure per-query runtimes; off by default so reports "
                   "are byte-identical across runs")
    p.add_argument("--jobs", type=int, default=None,
                   help="accepted for interface symmetry; evaluation is "
                   "deterministic at any worker count")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("bench", help="time every strategy on held-out queries")
    p.add_argument("--db", required=True)
    p.add_argument("--reps", type=int, default=5, help="repetitions per query (>= 3)")
    p.add_argument("--n-queries", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--atlas", default=None)
    p.add_argument("--ranges", default=None)
    p.set_defaults(func=_cmd_bench)

    return parser


def _fail(category: str, exc: BaseException, code: int) -> int:
    print(f"error[{category}]: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    level = _configure_logging()
    logger.info("resolved config: %s", RunConfig.from_args(args, level).describe())
    try:
        return args.func(args)
    except FormatError as exc:
        return _fail("format", exc, 3)
    except DimensionMismatchError as exc:
        return _fail("format", exc, 3)
    except (NumericalInstabilityError, DatabaseBuildError) as exc:
        return _fail("numerical", exc, 4)
    except ValueError as exc:
        return _fail("usage", exc, 2)
    except OSError as exc:
        return _fail("usage", exc, 2)


def run() -> None:
    sys.exit(main())
