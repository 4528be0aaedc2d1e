"""Evaluation protocol over a tumor database.

Held-out query tumors are generated with the build's sampling rules but a
disjoint rng stream, then each retrieval strategy is scored against the
exhaustive direct query: top-N accuracy, best-match Dice distributions and
wall-clock benchmarks.  Reports are deterministic unless timing is
requested, so a saved CSV can double as a regression fixture.
"""

from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass

import numpy as np

from .errors import DatabaseBuildError, NumericalInstabilityError
from .forward import GrowthParams, segment, simulate
from .query import dice, direct_query, downsampled_query, feature_query
from .tumordb import (
    _ABORT_OVERSHOOT,
    _GIVE_UP_MULTIPLE,
    _MIN_ACCEPT_RATE,
    QUERY_STREAM,
    ParamRanges,
    SizeFilter,
    TumorDatabase,
    candidate_rng,
    sample_params,
)
from .voxel import SegmentationPair, TissueAtlas, atomic_write

EVAL_METHODS = ("direct", "ds2", "ds4", "rf")

_RUNNERS = {
    "direct": lambda db, q, k: direct_query(db, q, k),
    "ds2": lambda db, q, k: downsampled_query(db, q, k, factor=2),
    "ds4": lambda db, q, k: downsampled_query(db, q, k, factor=4),
    "rf": lambda db, q, k: feature_query(db, q, k),
}

_CSV_HEADER = "method,top1,top5,top15,mean_dice_combined,median_runtime_s"


def _runner(strategy: str):
    if strategy not in _RUNNERS:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {EVAL_METHODS}")
    return _RUNNERS[strategy]


@dataclass(frozen=True)
class QuerySample:
    """A held-out tumor: ground-truth growth parameters and segmentation."""

    params: GrowthParams
    pair: SegmentationPair


@dataclass(frozen=True)
class QuerySet:
    samples: tuple[QuerySample, ...]
    diagnostics: dict

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def pairs(self) -> list[SegmentationPair]:
        return [s.pair for s in self.samples]


def _collides(db: TumorDatabase, pair: SegmentationPair) -> bool:
    # popcounts prune almost everything; byte equality decides the rest
    same_counts = np.flatnonzero(
        (db.popcounts(1, "flair") == pair.flair.popcount())
        & (db.popcounts(1, "t1gd") == pair.t1gd.popcount())
    )
    return any(db.records[int(i)].seg == pair for i in same_counts)


def make_query_set(
    atlas: TissueAtlas,
    ranges: ParamRanges,
    size_filter: SizeFilter,
    n: int,
    seed: int,
    db: TumorDatabase,
) -> QuerySet:
    """Generate ``n`` held-out query tumors for ``db``.

    Candidates follow the build protocol (same sampling, size filter and
    stability rejection) but draw from a stream the build never touches,
    and any candidate bit-identical to a stored record is resampled; the
    diagnostics count those collisions.  Gives up like build_database when
    the acceptance rate stays below the same floor.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if atlas.fingerprint() != db.atlas_fingerprint:
        raise ValueError(
            "atlas fingerprint does not match the database; "
            "queries must be generated in the database's atlas space"
        )
    domain_count = atlas.domain_voxel_count()
    flair_cut = db.thresholds[1]
    abort_count = int(np.ceil(_ABORT_OVERSHOOT * size_filter.max_frac * domain_count))
    give_up_at = _GIVE_UP_MULTIPLE * n

    def overshoots(core):
        return np.count_nonzero(core >= flair_cut) > abort_count

    samples: list[QuerySample] = []
    counts = {"too_small": 0, "too_big": 0, "unstable": 0, "collisions": 0}
    processed = 0

    def diagnostics():
        return {"processed": processed, "accepted": len(samples), "n_target": n, **counts}

    while len(samples) < n:
        rng = candidate_rng(seed, processed, stream=QUERY_STREAM)
        params = sample_params(ranges, atlas, rng)
        processed += 1
        try:
            u = simulate(atlas, params, stop_when=overshoots)
        except NumericalInstabilityError:
            counts["unstable"] += 1
        else:
            pair = segment(u, thresholds=db.thresholds)
            count = pair.flair.popcount()
            if not size_filter.accepts(count, domain_count):
                big = count / domain_count > size_filter.max_frac
                counts["too_big" if big else "too_small"] += 1
            elif _collides(db, pair):
                counts["collisions"] += 1
            else:
                samples.append(QuerySample(params=params, pair=pair))
        if processed % give_up_at == 0 and len(samples) < n:
            rate = len(samples) / processed
            if rate < _MIN_ACCEPT_RATE:
                raise DatabaseBuildError(
                    f"query acceptance rate {rate:.5f} after {processed} candidates is "
                    f"below {_MIN_ACCEPT_RATE:.3%}; widen the ranges or the size filter",
                    diagnostics=diagnostics(),
                )
    return QuerySet(samples=tuple(samples), diagnostics=diagnostics())


def _as_pairs(queries) -> list[SegmentationPair]:
    return [q.pair if isinstance(q, QuerySample) else q for q in queries]


def top_n_accuracy(strategy_rankings, reference_rankings, n: int) -> float:
    """Percentage of queries whose strategy top-1 id appears among the
    reference's top ``n`` ids.  The reference should come from the direct
    query with k >= n."""
    strategy_rankings = list(strategy_rankings)
    reference_rankings = list(reference_rankings)
    if len(strategy_rankings) != len(reference_rankings):
        raise ValueError(
            f"query counts differ: {len(strategy_rankings)} strategy rankings "
            f"vs {len(reference_rankings)} reference rankings"
        )
    if not strategy_rankings:
        raise ValueError("need rankings for at least one query")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    hits = sum(
        s.ids()[0] in r.ids()[:n]
        for s, r in zip(strategy_rankings, reference_rankings)
    )
    return 100.0 * hits / len(strategy_rankings)


def _best_match_triples(db: TumorDatabase, pairs, rankings) -> np.ndarray:
    out = np.empty((len(rankings), 3), dtype=np.float64)
    for i, (q, ranking) in enumerate(zip(pairs, rankings)):
        rec = db.records[ranking.ids()[0]]
        t = dice(q.t1gd, rec.seg.t1gd)
        f = dice(q.flair, rec.seg.flair)
        out[i] = (t, f, t + f)
    return out


def dice_distribution(db: TumorDatabase, queries, strategy: str = "direct") -> np.ndarray:
    """(n_queries, 3) full-resolution Dice of each query against its
    strategy-selected best match: columns are t1gd, flair, combined."""
    runner = _runner(strategy)
    pairs = _as_pairs(queries)
    if not pairs:
        raise ValueError("need at least one query")
    rankings = [runner(db, q, 1) for q in pairs]
    return _best_match_triples(db, pairs, rankings)


def _machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": str(os.cpu_count() or 1),
    }


@dataclass(frozen=True)
class BenchResult:
    """Median per-query wall-clock seconds per strategy, with the machine
    context needed to interpret them."""

    medians_s: dict
    repetitions: int
    worker_count: int
    machine: dict


def bench(db: TumorDatabase, queries, strategies=EVAL_METHODS, repetitions: int = 5) -> BenchResult:
    """Time each strategy on every query, ``repetitions`` times, and report
    the median per-query seconds.

    Strategies run back-to-back in this single process; each one is warmed
    on the first query so the lazily stacked mask matrices are not billed
    to the benchmark."""
    pairs = _as_pairs(queries)
    if not pairs:
        raise ValueError("need at least one query")
    if repetitions < 3:
        raise ValueError(f"repetitions must be at least 3, got {repetitions}")
    medians = {}
    for strategy in strategies:
        runner = _runner(strategy)
        runner(db, pairs[0], 1)
        times = []
        for _ in range(repetitions):
            for q in pairs:
                start = time.perf_counter()
                runner(db, q, 1)
                times.append(time.perf_counter() - start)
        medians[strategy] = float(np.median(times))
    return BenchResult(
        medians_s=medians,
        repetitions=repetitions,
        worker_count=1,
        machine=_machine_info(),
    )


@dataclass(frozen=True)
class EvalRow:
    method: str
    top1: float
    top5: float
    top15: float
    mean_dice_combined: float
    median_dice_combined: float
    mean_runtime_s: float | None = None
    median_runtime_s: float | None = None


@dataclass(frozen=True)
class EvalReport:
    """Per-strategy retrieval scores against the direct-query reference."""

    rows: tuple
    query_count: int
    db_size: int

    def to_csv(self) -> str:
        lines = [_CSV_HEADER]
        for r in self.rows:
            runtime = "" if r.median_runtime_s is None else f"{r.median_runtime_s:.6f}"
            lines.append(
                f"{r.method},{r.top1:.2f},{r.top5:.2f},{r.top15:.2f},"
                f"{r.mean_dice_combined:.6f},{runtime}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        atomic_write(path, self.to_csv().encode())


def run_evaluation(
    db: TumorDatabase,
    queries,
    methods=EVAL_METHODS,
    timing: bool = False,
    k_reference: int = 15,
) -> EvalReport:
    """Score each method's retrieval against the direct-query reference.

    The reference ranking is always the exhaustive combined-Dice query, so
    the direct row scores 100 at every N by construction.  Timing is
    opt-in: without it the report depends only on the inputs and is
    byte-identical across runs and worker counts.
    """
    pairs = _as_pairs(queries)
    if not pairs:
        raise ValueError("need at least one query")
    methods = tuple(methods)
    if not methods:
        raise ValueError("need at least one method")
    for method in methods:
        _runner(method)
    k_ref = min(k_reference, len(db))
    reference = [direct_query(db, q, k_ref) for q in pairs]

    rows = []
    for method in methods:
        runner = _RUNNERS[method]
        if method == "direct" and not timing:
            rankings = reference  # same top-1 as a k=1 run, skip the rerun
            times = None
        else:
            rankings = []
            times = [] if timing else None
            for q in pairs:
                start = time.perf_counter()
                rankings.append(runner(db, q, 1))
                if timing:
                    times.append(time.perf_counter() - start)
        combined = _best_match_triples(db, pairs, rankings)[:, 2]
        rows.append(
            EvalRow(
                method=method,
                top1=top_n_accuracy(rankings, reference, 1),
                top5=top_n_accuracy(rankings, reference, 5),
                top15=top_n_accuracy(rankings, reference, 15),
                mean_dice_combined=float(np.mean(combined)),
                median_dice_combined=float(np.median(combined)),
                mean_runtime_s=None if times is None else float(np.mean(times)),
                median_runtime_s=None if times is None else float(np.median(times)),
            )
        )
    return EvalReport(rows=tuple(rows), query_count=len(pairs), db_size=len(db))
