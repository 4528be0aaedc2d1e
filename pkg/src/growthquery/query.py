"""Similarity search over tumor databases.

Four strategies rank stored tumors against a query: full-resolution
Dice over bit-packed masks, Dice over the cached downsampled masks, a
two-stage center-of-mass / shape-feature match, and L2 distances over
externally computed embedding vectors.  Rankings are deterministic:
scores sort in the declared direction, ties break by ascending id.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, EmptyMaskError
from .features import _SHAPE_SLICE, FeatureVector, pair_features
from .forward import GrowthParams
from .tumordb import TumorDatabase, _downsample_pair
from .voxel import BinaryMask, SegmentationPair


@dataclass(frozen=True)
class Ranking:
    """An ordered query result: (record id, score) pairs, best first."""

    strategy: str
    entries: tuple[tuple[int, float], ...]
    higher_is_better: bool

    def ids(self) -> list[int]:
        return [rid for rid, _ in self.entries]


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """2|A∩B| / (|A|+|B|), with Dice(∅,∅) = 1 and Dice(∅, x) = 0."""
    if a.dims != b.dims:
        raise DimensionMismatchError.for_dims("dice operands", a.dims.shape, b.dims.shape)
    na, nb = a.popcount(), b.popcount()
    if na + nb == 0:
        return 1.0
    inter = int(np.bitwise_count(np.bitwise_and(a.packed, b.packed)).sum())
    return 2.0 * inter / (na + nb)


def combined_dice(q: SegmentationPair, r: SegmentationPair) -> float:
    """Sum of the per-channel Dice scores; ranges over [0, 2]."""
    return dice(q.t1gd, r.t1gd) + dice(q.flair, r.flair)


def _rank(strategy: str, ids, scores, k: int, higher_is_better: bool) -> Ranking:
    ids = np.asarray(ids)
    scores = np.asarray(scores, dtype=np.float64)
    primary = -scores if higher_is_better else scores
    order = np.lexsort((ids, primary))[:k]
    entries = tuple((int(ids[i]), float(scores[i])) for i in order)
    return Ranking(strategy=strategy, entries=entries, higher_is_better=higher_is_better)


def _check_query_pair(db: TumorDatabase, q: SegmentationPair) -> None:
    if q.dims != db.dims:
        raise DimensionMismatchError.for_dims("query masks", q.dims.shape, db.dims.shape)
    overlap = np.bitwise_and(q.t1gd.packed, q.flair.packed)
    if int(np.bitwise_count(overlap).sum()) != q.t1gd.popcount():
        warnings.warn(
            "query t1gd mask is not contained in its flair mask; "
            "proceeding, but channel scores may disagree",
            stacklevel=3,
        )


def _check_k(k: int, available: int) -> None:
    if not 1 <= k <= available:
        raise ValueError(f"k must be in [1, {available}], got {k}")


def _dice_rows(db: TumorDatabase, q: BinaryMask, factor: int, channel: str) -> np.ndarray:
    stack = db.packed_stack(factor, channel)
    inter = np.bitwise_count(np.bitwise_and(stack, q.packed)).sum(axis=1, dtype=np.int64)
    denom = db.popcounts(factor, channel) + q.popcount()
    return np.where(denom == 0, 1.0, 2.0 * inter / np.where(denom == 0, 1, denom))


def _mask_query(db: TumorDatabase, q: SegmentationPair, k: int, factor: int, tag: str) -> Ranking:
    scores = _dice_rows(db, q.t1gd, factor, "t1gd") + _dice_rows(db, q.flair, factor, "flair")
    return _rank(tag, np.arange(len(db)), scores, k, higher_is_better=True)


def direct_query(db: TumorDatabase, q: SegmentationPair, k: int) -> Ranking:
    """Top-k records by combined Dice at full resolution."""
    _check_query_pair(db, q)
    _check_k(k, len(db))
    return _mask_query(db, q, k, 1, "direct")


def downsampled_query(db: TumorDatabase, q: SegmentationPair, k: int, factor: int) -> Ranking:
    """Top-k by combined Dice on the precomputed downsampled masks.

    The query is decimated with the same operator the build used, so a
    database member still self-retrieves with score 2.0.
    """
    if factor not in (2, 4):
        raise ValueError(f"downsampled queries support factors 2 and 4, got {factor}")
    _check_query_pair(db, q)
    _check_k(k, len(db))
    small = _downsample_pair(q, factor)
    return _mask_query(db, small, k, factor, f"ds{factor}")


def feature_query(db: TumorDatabase, q: SegmentationPair, k: int, n_prefilter: int = 1000) -> Ranking:
    """Two-stage shape match: keep the min(n_prefilter, |db|) records with
    the closest center of mass, then rank those by z-scored feature
    distance.  Requires a non-empty query FLAIR mask."""
    _check_query_pair(db, q)
    if n_prefilter < 1:
        raise ValueError(f"n_prefilter must be at least 1, got {n_prefilter}")
    if q.flair.popcount() == 0:
        raise EmptyMaskError("feature queries need a non-empty flair mask")
    qv = pair_features(q).as_array()

    com_dist = np.sqrt(np.sum((db.com_matrix() - qv[:3]) ** 2, axis=1))
    pool_size = min(n_prefilter, len(db))
    _check_k(k, pool_size)
    pool = np.lexsort((np.arange(len(db)), com_dist))[:pool_size]

    mean = np.asarray(db.stats.mean)[_SHAPE_SLICE]
    std = np.asarray(db.stats.std)[_SHAPE_SLICE]
    keep = std > 0.0
    if not keep.any():
        dists = np.zeros(pool_size)
    else:
        shape_cols = db.feature_matrix()[pool][:, _SHAPE_SLICE][:, keep]
        zdb = (shape_cols - mean[keep]) / std[keep]
        zq = (qv[_SHAPE_SLICE][keep] - mean[keep]) / std[keep]
        # the column-masked matrix comes out F-ordered, and axis-1 sums over
        # an F-ordered array associate differently than the 1-D sums inside
        # feature_distance; force C order so both paths round identically
        diffs = np.ascontiguousarray(np.abs(zdb - zq))
        dists = diffs.sum(axis=1)
    return _rank("rf", pool, dists, k, higher_is_better=False)


def squared_distances(vectors: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared L2 distance from ``q`` to each row of ``vectors``.

    Exact for integer-valued inputs; on binary hash codes it equals the
    Hamming distance.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if vectors.ndim != 2 or q.shape != (vectors.shape[1],):
        raise DimensionMismatchError(
            f"vector matrix {vectors.shape} does not match query vector {q.shape}"
        )
    return ((vectors - q) ** 2).sum(axis=1)


def embedding_query(db_vectors, q_t1gd, q_flair, k: int) -> Ranking:
    """Top-k by summed per-channel L2 distance over external embeddings.

    ``db_vectors`` is a (t1gd, flair) pair of per-record matrices; ids in
    the result are row indices.
    """
    t1gd_mat, flair_mat = db_vectors
    t1gd_mat = np.asarray(t1gd_mat, dtype=np.float64)
    flair_mat = np.asarray(flair_mat, dtype=np.float64)
    if t1gd_mat.ndim != 2 or flair_mat.ndim != 2 or len(t1gd_mat) != len(flair_mat):
        raise DimensionMismatchError(
            f"embedding matrices disagree on record count: "
            f"{t1gd_mat.shape} vs {flair_mat.shape}"
        )
    _check_k(k, len(t1gd_mat))
    scores = np.sqrt(squared_distances(t1gd_mat, q_t1gd)) + np.sqrt(
        squared_distances(flair_mat, q_flair)
    )
    return _rank("embed", np.arange(len(t1gd_mat)), scores, k, higher_is_better=False)


def answer(db: TumorDatabase, ranking: Ranking) -> tuple[GrowthParams, SegmentationPair]:
    """Growth parameters and stored segmentation of the best match.

    The parameters are the inverse-problem solution; re-running the
    forward model on them reproduces the stored masks exactly.
    """
    if not ranking.entries:
        raise ValueError("cannot answer from an empty ranking")
    top_id = ranking.entries[0][0]
    rec = db.records[top_id]
    return rec.params, rec.seg
