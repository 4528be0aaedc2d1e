"""Measure the speed/fidelity trade across all four retrieval strategies.

Held-out queries are drawn from a separate RNG stream than the database
build, size-filtered the same way, and resampled on collision, so every
query is a tumor the database does not contain.  The direct query defines
the reference ranking; the faster strategies are scored by how often their
top pick lands in the reference's top-N.
"""

from growthquery import (
    EVAL_METHODS,
    ParamRanges,
    SizeFilter,
    bench,
    build_database,
    make_phantom_atlas,
    make_query_set,
    run_evaluation,
)

atlas = make_phantom_atlas(16, dx=1.0)
ranges = ParamRanges(d_w=(0.05, 0.3), rho=(0.02, 0.1), t_end=(10.0, 120.0))
db = build_database(atlas, 150, ranges=ranges, master_seed=3, jobs=1)

queries = make_query_set(atlas, ranges, SizeFilter(), n=12, seed=9, db=db)
print(f"{len(db)} records, {len(queries)} held-out queries")
print(f"sampling diagnostics: {queries.diagnostics}\n")

report = run_evaluation(db, queries, methods=EVAL_METHODS)
print("accuracy report (direct is the reference, so its row is definitional):")
print(report.to_csv())

result = bench(db, queries, repetitions=5)
print("median per-query wall clock:")
for method in EVAL_METHODS:
    print(f"  {method:8s} {result.medians_s[method] * 1e3:8.3f} ms")
print(f"(medians over {result.repetitions} repetitions x {len(queries)} queries "
      f"on {result.machine['platform']})")
