"""Ask "which stored tumor looks like this one?" four different ways.

The direct query scans every record at full resolution and is exact; the
downsampled variants score 2x- or 4x-decimated masks from prebuilt caches;
the feature query never touches a voxel, it prefilters by center of mass
and ranks by z-scored shape distance.  Each step down buys speed with a
little fidelity; on a toy database the fixed per-query overheads mask the
speedup, which only becomes dramatic at thousands of records (see the
bench demo and the evaluation harness).
"""

import time

import numpy as np

from growthquery import (
    GrowthParams,
    ParamRanges,
    answer,
    build_database,
    direct_query,
    downsampled_query,
    feature_query,
    make_phantom_atlas,
    segment,
    simulate,
)

atlas = make_phantom_atlas(16, dx=1.0)
ranges = ParamRanges(d_w=(0.05, 0.3), rho=(0.02, 0.1), t_end=(10.0, 120.0))
db = build_database(atlas, 150, ranges=ranges, master_seed=3, jobs=1)
print(f"database: {len(db)} records\n")

# the "patient": a tumor the database has never seen
truth = GrowthParams(8, 8, 11, d_w=0.05, rho=0.09, t_end=100.0)
query = segment(simulate(atlas, truth))
print(f"query tumor: seed {truth.seed}, d_w={truth.d_w}, "
      f"rho={truth.rho}, t_end={truth.t_end:.0f}")
print(f"query masks: {query.t1gd.popcount()} core / "
      f"{query.flair.popcount()} edema voxels\n")

runners = [
    ("direct", lambda: direct_query(db, query, k=5)),
    ("ds2", lambda: downsampled_query(db, query, k=5, factor=2)),
    ("ds4", lambda: downsampled_query(db, query, k=5, factor=4)),
    ("rf", lambda: feature_query(db, query, k=5, n_prefilter=50)),
]

print(f"{'strategy':8s} {'ms':>7s}  top-5 (id:score)")
for name, run in runners:
    run()  # warm caches so the timing is the steady state
    t0 = time.perf_counter()
    ranking = run()
    ms = (time.perf_counter() - t0) * 1e3
    top = "  ".join(f"{i}:{s:.3f}" for i, s in ranking.entries)
    print(f"{name:8s} {ms:7.2f}  {top}")

best_params, best_seg = answer(db, direct_query(db, query, k=1))
print(f"\nbest match's parameters: seed {best_params.seed}, "
      f"d_w={best_params.d_w:.3f}, rho={best_params.rho:.3f}, "
      f"t_end={best_params.t_end:.0f}")
print("those are the inverse-problem answer: rerunning the model with them "
      "reproduces the matched masks")
