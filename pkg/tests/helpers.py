"""Small atlas and database constructors shared by test modules."""

import numpy as np

from growthquery.features import FeatureStats
from growthquery.forward import GrowthParams
from growthquery.tumordb import TumorDatabase, make_record
from growthquery.voxel import (
    BinaryMask,
    GridDims,
    ScalarField,
    SegmentationPair,
    TissueAtlas,
)


def atlas_from_arrays(dims, wm, gm, csf=None):
    if csf is None:
        csf = np.zeros(dims.shape, dtype=np.float32)
    return TissueAtlas(
        ScalarField(dims, np.asarray(wm, dtype=np.float32)),
        ScalarField(dims, np.asarray(gm, dtype=np.float32)),
        ScalarField(dims, np.asarray(csf, dtype=np.float32)),
    )


def single_voxel_atlas(n=5, dx=1.0, voxel=None):
    """All-white-matter domain consisting of exactly one voxel.

    Every face of that voxel leaves the domain, so the solver's fluxes are
    all zero and the voxel follows the pure logistic ODE.
    """
    dims = GridDims(n, n, n, dx)
    if voxel is None:
        voxel = (n // 2, n // 2, n // 2)
    wm = np.zeros(dims.shape, dtype=np.float32)
    wm[voxel] = 1.0
    return atlas_from_arrays(dims, wm, np.zeros(dims.shape, dtype=np.float32)), voxel


def random_soft_atlas(n, seed, dx=1.0):
    """Random smooth-ish probabilities; the domain is scattered and touches
    the grid boundary, which exercises the zero-flux edges."""
    rng = np.random.default_rng(seed)
    dims = GridDims(n, n, n, dx)
    wm = rng.random(dims.shape).astype(np.float32)
    gm = (rng.random(dims.shape) * (1.0 - wm)).astype(np.float32)
    csf = np.clip(1.0 - wm - gm, 0.0, 1.0).astype(np.float32)
    return atlas_from_arrays(dims, wm, gm, csf)


def random_pair(dims, rng, p_flair=0.25, p_core=0.4, center=None, radius=None):
    """A nested random segmentation pair.  With center/radius the flair
    voxels are confined to a ball, which controls the center of mass."""
    flair = rng.random(dims.shape) < p_flair
    if center is not None:
        x, y, z = np.indices(dims.shape)
        ball = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2 <= radius**2
        flair &= ball
    if not flair.any():
        flair[tuple(c % s for c, s in zip((1, 2, 3), dims.shape))] = True
    t1gd = flair & (rng.random(dims.shape) < p_core)
    return SegmentationPair(
        t1gd=BinaryMask.from_dense(dims, t1gd), flair=BinaryMask.from_dense(dims, flair)
    )


def random_params(dims, rng):
    return GrowthParams(
        int(rng.integers(0, dims.nx)),
        int(rng.integers(0, dims.ny)),
        int(rng.integers(0, dims.nz)),
        d_w=float(rng.uniform(0.05, 1.5)),
        rho=float(rng.uniform(0.01, 0.2)),
        t_end=float(rng.uniform(50.0, 500.0)),
    )


def fake_db(n_records, seed=0, dims=None, duplicates=0, pair_maker=None):
    """A database of random (non-simulated) records, cheap to construct.

    ``duplicates`` appends copies of record 0's masks under new ids, which
    forces exact score ties in every query strategy.
    """
    dims = dims or GridDims(16, 16, 16, 1.0)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_records):
        pair = pair_maker(dims, rng, i) if pair_maker else random_pair(dims, rng)
        records.append(make_record(i, random_params(dims, rng), pair))
    for j in range(duplicates):
        records.append(make_record(n_records + j, random_params(dims, rng), records[0].seg))
    stats = FeatureStats.from_matrix(np.stack([r.features.as_array() for r in records]))
    return TumorDatabase(
        atlas_fingerprint=bytes(32),
        dims=dims,
        thresholds=(0.6, 0.2),
        records=records,
        stats=stats,
    )
