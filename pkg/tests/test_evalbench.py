"""Evaluation protocol: held-out query sets, top-N accuracy against the
direct reference, best-match Dice distributions, and timing reports."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growthquery.errors import DatabaseBuildError
from growthquery.evalbench import (
    EVAL_METHODS,
    EvalReport,
    bench,
    dice_distribution,
    make_query_set,
    run_evaluation,
    top_n_accuracy,
)
from growthquery.features import FeatureStats
from growthquery.forward import FLAIR_THRESHOLD, T1GD_THRESHOLD
from growthquery.query import Ranking, direct_query
from growthquery.tumordb import SizeFilter, TumorDatabase, make_record
from growthquery.voxel import BinaryMask, GridDims, SegmentationPair, make_phantom_atlas

from helpers import fake_db, random_pair
from test_tumordb import FAST_RANGES, small_build

DIMS = GridDims(16, 16, 16, 1.0)


def db_from_samples(atlas, samples):
    """Wrap query samples into a database, for collision tests."""
    records = [make_record(i, s.params, s.pair) for i, s in enumerate(samples)]
    stats = FeatureStats.from_matrix(np.stack([r.features.as_array() for r in records]))
    return TumorDatabase(
        atlas_fingerprint=atlas.fingerprint(),
        dims=atlas.dims,
        thresholds=(T1GD_THRESHOLD, FLAIR_THRESHOLD),
        records=records,
        stats=stats,
    )


class TestMakeQuerySet:
    def test_deterministic_given_seed(self):
        atlas, db = small_build(n=3, seed=23)
        a = make_query_set(atlas, FAST_RANGES, SizeFilter(), n=4, seed=5, db=db)
        b = make_query_set(atlas, FAST_RANGES, SizeFilter(), n=4, seed=5, db=db)
        assert len(a) == 4
        assert list(a) == list(b)
        assert a.diagnostics == b.diagnostics

    def test_different_seeds_differ(self):
        atlas, db = small_build(n=3, seed=23)
        a = make_query_set(atlas, FAST_RANGES, SizeFilter(), n=4, seed=5, db=db)
        b = make_query_set(atlas, FAST_RANGES, SizeFilter(), n=4, seed=6, db=db)
        assert any(sa.pair != sb.pair for sa, sb in zip(a, b))

    def test_held_out_never_matches_exactly(self):
        atlas, db = small_build(n=3, seed=23)
        qs = make_query_set(atlas, FAST_RANGES, SizeFilter(), n=4, seed=5, db=db)
        for sample in qs:
            top_score = direct_query(db, sample.pair, k=1).entries[0][1]
            assert top_score < 2.0

    def test_samples_pass_the_size_filter(self):
        atlas, db = small_build(n=2, seed=23)
        size_filter = SizeFilter()
        qs = make_query_set(atlas, FAST_RANGES, size_filter, n=4, seed=5, db=db)
        domain_count = atlas.domain_voxel_count()
        for sample in qs:
            assert size_filter.accepts(sample.pair.flair.popcount(), domain_count)

    def test_collisions_are_resampled_and_counted(self):
        atlas, db = small_build(n=3, seed=23)
        honest = make_query_set(atlas, FAST_RANGES, SizeFilter(), n=3, seed=23, db=db)
        assert honest.diagnostics["collisions"] == 0
        # a db made of the query stream's own output forces a collision on
        # every accepted candidate until the stream moves past them
        trap = db_from_samples(atlas, honest.samples)
        qs = make_query_set(atlas, FAST_RANGES, SizeFilter(), n=3, seed=23, db=trap)
        assert qs.diagnostics["collisions"] >= 3
        for sample in qs:
            assert all(sample.pair != rec.seg for rec in trap.records)

    def test_atlas_db_mismatch_rejected(self):
        atlas, db = small_build(n=2, seed=23)
        other = make_phantom_atlas(20, dx=2.0)
        with pytest.raises(ValueError, match="fingerprint"):
            make_query_set(other, FAST_RANGES, SizeFilter(), n=1, seed=5, db=db)

    def test_impossible_filter_gives_up(self):
        atlas, db = small_build(n=2, seed=23)
        narrow = SizeFilter(0.5, 0.9)
        tiny = FAST_RANGES.__class__(d_w=FAST_RANGES.d_w, rho=FAST_RANGES.rho, t_end=(5.0, 20.0))
        with pytest.raises(DatabaseBuildError) as err:
            make_query_set(atlas, tiny, narrow, n=2, seed=5, db=db)
        assert err.value.diagnostics["accepted"] == 0
        assert "collisions" in err.value.diagnostics

    def test_n_must_be_positive(self):
        atlas, db = small_build(n=2, seed=23)
        with pytest.raises(ValueError, match="n"):
            make_query_set(atlas, FAST_RANGES, SizeFilter(), n=0, seed=5, db=db)


def ranking(ids, strategy="direct"):
    entries = tuple((int(i), float(len(ids) - j)) for j, i in enumerate(ids))
    return Ranking(strategy, entries, higher_is_better=True)


class TestTopNAccuracy:
    def test_reference_scores_100_at_every_n(self):
        refs = [ranking([3, 1, 4, 1, 5]), ranking([9, 2, 6])]
        for n in (1, 5, 15):
            assert top_n_accuracy(refs, refs, n) == 100.0

    def test_disjoint_ids_score_zero(self):
        refs = [ranking(range(15)) for _ in range(4)]
        strat = [ranking([99], strategy="rf") for _ in range(4)]
        assert top_n_accuracy(strat, refs, 15) == 0.0

    def test_partial_hit_fraction(self):
        refs = [ranking([0, 1, 2]), ranking([0, 1, 2]), ranking([0, 1, 2]), ranking([0, 1, 2])]
        strat = [ranking([0]), ranking([2]), ranking([7]), ranking([9])]
        assert top_n_accuracy(strat, refs, 3) == 50.0
        assert top_n_accuracy(strat, refs, 1) == 25.0

    def test_mismatched_query_counts_raise(self):
        refs = [ranking([0]), ranking([1])]
        with pytest.raises(ValueError, match="quer"):
            top_n_accuracy([ranking([0])], refs, 1)

    def test_empty_input_raises(self):
        with pytest.raises(ValueError):
            top_n_accuracy([], [], 1)

    def test_n_must_be_positive(self):
        refs = [ranking([0])]
        with pytest.raises(ValueError, match="n"):
            top_n_accuracy(refs, refs, 0)

    @settings(deadline=None, max_examples=50)
    @given(st.lists(st.tuples(st.integers(0, 24), st.permutations(range(20))), min_size=1, max_size=8))
    def test_monotone_in_n(self, cases):
        strat = [ranking([top], strategy="rf") for top, _ in cases]
        refs = [ranking(perm[:15]) for _, perm in cases]
        accs = [top_n_accuracy(strat, refs, n) for n in (1, 5, 15)]
        assert accs[0] <= accs[1] <= accs[2]


class TestDiceDistribution:
    def test_member_queries_score_two(self):
        db = fake_db(8, seed=5)
        queries = [rec.seg for rec in db.records[:4]]
        triples = dice_distribution(db, queries, "direct")
        assert triples.shape == (4, 3)
        assert np.all(triples[:, 0] == 1.0)
        assert np.all(triples[:, 1] == 1.0)
        assert np.all(triples[:, 2] == 2.0)

    def test_empty_t1gd_match_uses_dice_one_convention(self):
        empty = np.zeros(DIMS.shape, dtype=bool)

        def maker(dims, rng, i):
            pair = random_pair(dims, rng)
            if i == 0:
                return SegmentationPair(
                    t1gd=BinaryMask.from_dense(dims, empty), flair=pair.flair
                )
            return pair

        db = fake_db(6, seed=7, pair_maker=maker)
        triples = dice_distribution(db, [db.records[0].seg], "direct")
        assert tuple(triples[0]) == (1.0, 1.0, 2.0)

    def test_strategies_disagree_on_best_match_is_allowed(self):
        db = fake_db(12, seed=3)
        rng = np.random.default_rng(8)
        queries = [random_pair(DIMS, rng) for _ in range(5)]
        direct = dice_distribution(db, queries, "direct")
        rf = dice_distribution(db, queries, "rf")
        # the direct strategy maximizes combined dice by construction
        assert np.all(direct[:, 2] >= rf[:, 2] - 1e-12)

    def test_unknown_strategy_rejected(self):
        db = fake_db(4, seed=1)
        with pytest.raises(ValueError, match="strategy"):
            dice_distribution(db, [db.records[0].seg], "embed")

    def test_empty_queries_rejected(self):
        db = fake_db(4, seed=1)
        with pytest.raises(ValueError, match="quer"):
            dice_distribution(db, [], "direct")


class TestBench:
    def test_requires_three_repetitions(self):
        db = fake_db(6, seed=2)
        with pytest.raises(ValueError, match="repetit"):
            bench(db, [db.records[0].seg], ("direct",), repetitions=2)

    def test_reports_median_machine_and_workers(self):
        db = fake_db(20, seed=2)
        rng = np.random.default_rng(3)
        queries = [random_pair(DIMS, rng) for _ in range(4)]
        result = bench(db, queries, ("direct", "rf"), repetitions=3)
        assert set(result.medians_s) == {"direct", "rf"}
        assert all(t > 0.0 for t in result.medians_s.values())
        assert result.repetitions == 3
        assert result.worker_count == 1
        for key in ("platform", "python", "numpy", "cpu_count"):
            assert result.machine[key]

    def test_repeated_medians_within_double(self):
        db = fake_db(80, seed=4)
        rng = np.random.default_rng(5)
        queries = [random_pair(DIMS, rng) for _ in range(8)]
        first = bench(db, queries, ("direct",), repetitions=5).medians_s["direct"]
        second = bench(db, queries, ("direct",), repetitions=5).medians_s["direct"]
        assert max(first, second) / min(first, second) < 2.0


class TestRunEvaluation:
    def make_inputs(self, n_db=30, n_queries=6, seed=9):
        db = fake_db(n_db, seed=seed)
        rng = np.random.default_rng(seed + 1)
        queries = [random_pair(DIMS, rng) for _ in range(n_queries)]
        return db, queries

    def test_csv_header_and_row_order(self):
        db, queries = self.make_inputs()
        report = run_evaluation(db, queries)
        lines = report.to_csv().splitlines()
        assert lines[0] == "method,top1,top5,top15,mean_dice_combined,median_runtime_s"
        assert [line.split(",")[0] for line in lines[1:]] == list(EVAL_METHODS)

    def test_direct_row_is_perfect(self):
        db, queries = self.make_inputs()
        report = run_evaluation(db, queries)
        direct = report.rows[0]
        assert direct.method == "direct"
        assert (direct.top1, direct.top5, direct.top15) == (100.0, 100.0, 100.0)

    def test_topn_monotone_for_every_method(self):
        db, queries = self.make_inputs(n_db=60, n_queries=10, seed=12)
        report = run_evaluation(db, queries)
        for row in report.rows:
            assert row.top1 <= row.top5 <= row.top15

    def test_report_is_deterministic_without_timing(self):
        db, queries = self.make_inputs()
        a = run_evaluation(db, queries).to_csv()
        b = run_evaluation(db, queries).to_csv()
        assert a == b
        assert all(line.endswith(",") for line in a.splitlines()[1:])

    def test_timing_fills_runtime_column(self):
        db, queries = self.make_inputs(n_db=10, n_queries=3)
        report = run_evaluation(db, queries, timing=True)
        for row in report.rows:
            assert row.median_runtime_s > 0.0
            assert row.mean_runtime_s > 0.0
        last_cells = [line.rsplit(",", 1)[1] for line in report.to_csv().splitlines()[1:]]
        assert all(float(cell) > 0.0 for cell in last_cells)

    def test_counts_recorded(self):
        db, queries = self.make_inputs()
        report = run_evaluation(db, queries)
        assert report.query_count == len(queries)
        assert report.db_size == len(db)

    def test_mean_dice_matches_distribution(self):
        db, queries = self.make_inputs()
        report = run_evaluation(db, queries, methods=("ds4",))
        triples = dice_distribution(db, queries, "ds4")
        assert report.rows[0].mean_dice_combined == np.mean(triples[:, 2])
        assert report.rows[0].median_dice_combined == np.median(triples[:, 2])

    def test_unknown_method_rejected(self):
        db, queries = self.make_inputs(n_db=6, n_queries=2)
        with pytest.raises(ValueError, match="strategy"):
            run_evaluation(db, queries, methods=("direct", "embed"))

    def test_empty_queries_rejected(self):
        db, _ = self.make_inputs(n_db=6, n_queries=2)
        with pytest.raises(ValueError, match="quer"):
            run_evaluation(db, [])
