"""Generation and storage of precomputed tumor databases.

A database is a set of simulated tumors on one atlas grid: growth
parameters, the bit-packed segmentation pair at full resolution, the
downsampled pairs cached for coarse matching, and the shape feature
vector.  Generation is reproducible: candidate i always sees the same
random stream regardless of worker count, and accepted candidates are
kept in candidate order, so the saved file is byte-identical across
``jobs`` settings and across runs.
"""

from __future__ import annotations

import hashlib
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DatabaseBuildError,
    DimensionMismatchError,
    FormatError,
    NumericalInstabilityError,
)
from .features import FEATURE_NAMES, FeatureStats, FeatureVector, pair_features
from .forward import (
    FLAIR_THRESHOLD,
    T1GD_THRESHOLD,
    GrowthParams,
    segment,
    simulate,
)
from .voxel import (
    BinaryMask,
    ByteReader,
    GridDims,
    SegmentationPair,
    TissueAtlas,
    _read_dims,
    atomic_write,
)

DB_MAGIC = b"GQDB"
DB_VERSION = 1
DOWNSAMPLE_FACTORS = (2, 4)

# rng stream tags; query generation must never replay build draws
BUILD_STREAM = 0
QUERY_STREAM = 1

_CHECKSUM_BYTES = 8
_GIVE_UP_MULTIPLE = 10
_MIN_ACCEPT_RATE = 0.001
# early-abort watchdog: drop a candidate once its edema voxel count
# overshoots the largest acceptable size by this factor
_ABORT_OVERSHOOT = 1.25


def candidate_rng(master_seed: int, index: int, stream: int = BUILD_STREAM) -> np.random.Generator:
    """Independent generator for candidate ``index`` of one build.

    The stream depends only on (master_seed, stream, index), never on
    worker count or scheduling order.
    """
    if master_seed < 0:
        raise ValueError(f"master seed must be non-negative, got {master_seed}")
    if index < 0:
        raise ValueError(f"candidate index must be non-negative, got {index}")
    return np.random.default_rng([master_seed, stream, index])


@dataclass(frozen=True)
class ParamRanges:
    """Uniform sampling bounds (min, max) for the growth parameters."""

    d_w: tuple[float, float] = (0.04, 1.5)
    rho: tuple[float, float] = (0.005, 0.2)
    t_end: tuple[float, float] = (100.0, 1200.0)

    def __post_init__(self):
        for name in ("d_w", "rho", "t_end"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} range must satisfy min < max, got ({lo}, {hi})")
        if self.d_w[0] <= 0.0:
            raise ValueError("d_w range must be strictly positive")
        if self.rho[0] < 0.0 or self.t_end[0] < 0.0:
            raise ValueError("rho and t_end ranges must be non-negative")


@dataclass(frozen=True)
class SizeFilter:
    """Accepted edema sizes, as a fraction of the domain voxel count."""

    min_frac: float = 0.001
    max_frac: float = 0.15

    def __post_init__(self):
        if not (0.0 <= self.min_frac < self.max_frac <= 1.0):
            raise ValueError(
                f"size filter needs 0 <= min < max <= 1, got ({self.min_frac}, {self.max_frac})"
            )

    def accepts(self, count: int, domain_count: int) -> bool:
        if count == 0:
            return False  # an empty mask carries no shape information
        frac = count / domain_count
        return self.min_frac <= frac <= self.max_frac


def sample_params(
    ranges: ParamRanges, atlas: TissueAtlas, rng: np.random.Generator
) -> GrowthParams:
    """Draw one parameter set: a uniform seed voxel over the simulation
    domain (in canonical linear order), then d_w, rho and t_end."""
    domain = np.flatnonzero(atlas.domain_mask().reshape(-1, order="F"))
    pick = int(domain[rng.integers(0, len(domain))])
    x, y, z = atlas.dims.unindex(pick)
    d_w = float(rng.uniform(*ranges.d_w))
    rho = float(rng.uniform(*ranges.rho))
    t_end = float(rng.uniform(*ranges.t_end))
    return GrowthParams(x, y, z, d_w=d_w, rho=rho, t_end=t_end)


def downsample(mask: BinaryMask, factor: int) -> BinaryMask:
    """Order-0 decimation: output voxel (x, y, z) copies input (f*x, f*y, f*z)."""
    if factor not in DOWNSAMPLE_FACTORS:
        raise ValueError(f"downsample factor must be one of {DOWNSAMPLE_FACTORS}, got {factor}")
    d = mask.dims
    if d.nx % factor or d.ny % factor or d.nz % factor:
        raise ValueError(f"grid {d.shape} is not divisible by downsample factor {factor}")
    out_dims = GridDims(d.nx // factor, d.ny // factor, d.nz // factor, d.dx * factor)
    return BinaryMask.from_dense(out_dims, mask.dense()[::factor, ::factor, ::factor])


def _downsample_pair(pair: SegmentationPair, factor: int) -> SegmentationPair:
    return SegmentationPair(
        t1gd=downsample(pair.t1gd, factor), flair=downsample(pair.flair, factor)
    )


@dataclass(frozen=True, eq=False)
class TumorRecord:
    """One stored tumor: parameters, masks, downsample caches, features."""

    id: int
    params: GrowthParams
    seg: SegmentationPair
    features: FeatureVector
    down2: SegmentationPair
    down4: SegmentationPair

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"record id must be non-negative, got {self.id}")
        for pair in (self.seg, self.down2, self.down4):
            overlap = np.bitwise_and(pair.t1gd.packed, pair.flair.packed)
            if int(np.bitwise_count(overlap).sum()) != pair.t1gd.popcount():
                raise ValueError("t1gd mask must be a subset of the flair mask")
        full = self.seg.dims
        for factor, pair in ((2, self.down2), (4, self.down4)):
            d = pair.dims
            if (d.nx * factor, d.ny * factor, d.nz * factor) != full.shape or d.dx != full.dx * factor:
                raise DimensionMismatchError.for_dims(
                    f"down{factor} cache", d.shape, tuple(s // factor for s in full.shape)
                )


def make_record(record_id: int, params: GrowthParams, seg: SegmentationPair) -> TumorRecord:
    """Build a record from a full-resolution segmentation, deriving the
    downsample caches and the feature vector."""
    return TumorRecord(
        id=record_id,
        params=params,
        seg=seg,
        features=pair_features(seg),
        down2=_downsample_pair(seg, 2),
        down4=_downsample_pair(seg, 4),
    )


@dataclass(eq=False)
class TumorDatabase:
    """An in-memory tumor database plus lazily built query matrices.

    Treat instances as immutable; the only mutable state is an internal
    cache of stacked mask/feature matrices used by the query functions.
    """

    atlas_fingerprint: bytes
    dims: GridDims
    thresholds: tuple[float, float]  # (t1gd, flair) density cutoffs
    records: list[TumorRecord]
    stats: FeatureStats
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if len(self.atlas_fingerprint) != 32:
            raise ValueError("atlas fingerprint must be 32 bytes")
        t1gd_cut, flair_cut = self.thresholds
        if not (0.0 < flair_cut <= t1gd_cut < 1.0):
            raise ValueError(f"invalid thresholds {self.thresholds}")
        self.thresholds = (float(t1gd_cut), float(flair_cut))
        if not self.records:
            raise ValueError("a tumor database must hold at least one record")
        for i, rec in enumerate(self.records):
            if rec.id != i:
                raise ValueError(f"record ids must be 0..n-1, got {rec.id} at position {i}")
            if rec.seg.dims != self.dims:
                raise DimensionMismatchError.for_dims(
                    f"record {i}", rec.seg.dims.shape, self.dims.shape
                )
        if len(self.stats.mean) != len(FEATURE_NAMES):
            raise ValueError("feature stats do not match the feature vector layout")

    def __len__(self) -> int:
        return len(self.records)

    def pair_at(self, record: TumorRecord, factor: int) -> SegmentationPair:
        if factor == 1:
            return record.seg
        if factor == 2:
            return record.down2
        if factor == 4:
            return record.down4
        raise ValueError(f"no stored resolution for factor {factor}")

    def grid_at(self, factor: int) -> GridDims:
        return self.pair_at(self.records[0], factor).dims

    def packed_stack(self, factor: int, channel: str) -> np.ndarray:
        """(n_records, n_bytes) uint8 matrix; row i is record i's packed mask."""
        if channel not in ("t1gd", "flair"):
            raise ValueError(f"channel must be 't1gd' or 'flair', got {channel!r}")
        key = ("packed", factor, channel)
        if key not in self._cache:
            rows = [getattr(self.pair_at(rec, factor), channel).packed for rec in self.records]
            stack = np.vstack(rows)
            stack.setflags(write=False)
            self._cache[key] = stack
        return self._cache[key]

    def popcounts(self, factor: int, channel: str) -> np.ndarray:
        key = ("popcount", factor, channel)
        if key not in self._cache:
            counts = np.bitwise_count(self.packed_stack(factor, channel)).sum(
                axis=1, dtype=np.int64
            )
            counts.setflags(write=False)
            self._cache[key] = counts
        return self._cache[key]

    def feature_matrix(self) -> np.ndarray:
        """(n_records, n_features) float64 matrix; row i is record i."""
        if "features" not in self._cache:
            mat = np.stack([rec.features.as_array() for rec in self.records])
            mat.setflags(write=False)
            self._cache["features"] = mat
        return self._cache["features"]

    def com_matrix(self) -> np.ndarray:
        return self.feature_matrix()[:, :3]


# ---------------------------------------------------------------------------
# generation


_WORK: dict = {}


def _init_worker(atlas, ranges, size_filter, master_seed, domain_count, abort_count):
    _WORK.update(
        atlas=atlas,
        ranges=ranges,
        size_filter=size_filter,
        master_seed=master_seed,
        domain_count=domain_count,
        abort_count=abort_count,
    )


def _evaluate_candidate(index: int):
    """Simulate candidate ``index`` and apply the size filter.

    Returns (index, verdict, payload) where verdict is "ok", "small",
    "big" or "unstable" and payload carries the packed masks only when
    accepted.  A candidate whose parameters drive the explicit scheme out
    of [0, 1] is rejected rather than aborting the whole build; the
    verdict is a pure function of (master_seed, index), so rejection
    keeps builds reproducible.
    """
    atlas = _WORK["atlas"]
    size_filter = _WORK["size_filter"]
    abort_count = _WORK["abort_count"]
    rng = candidate_rng(_WORK["master_seed"], index)
    params = sample_params(_WORK["ranges"], atlas, rng)

    def overshoots(core):
        return np.count_nonzero(core >= FLAIR_THRESHOLD) > abort_count

    try:
        u = simulate(atlas, params, stop_when=overshoots)
    except NumericalInstabilityError:
        return index, "unstable", None
    pair = segment(u)
    count = pair.flair.popcount()
    if size_filter.accepts(count, _WORK["domain_count"]):
        return index, "ok", (params, pair.t1gd.packed.tobytes(), pair.flair.packed.tobytes())
    verdict = "big" if count / _WORK["domain_count"] > size_filter.max_frac else "small"
    return index, verdict, None


def build_database(
    atlas: TissueAtlas,
    n_target: int,
    ranges: ParamRanges | None = None,
    size_filter: SizeFilter | None = None,
    master_seed: int = 0,
    jobs: int | None = None,
) -> TumorDatabase:
    """Sample, simulate and filter candidates until n_target are accepted.

    Candidates are evaluated in index order with per-candidate rng
    streams, and the first n_target accepted (by index) are kept, so the
    result does not depend on ``jobs``.  Gives up with diagnostics when
    the acceptance rate over the first 10 * n_target candidates (and
    every further multiple) stays below 0.1%.
    """
    ranges = ranges if ranges is not None else ParamRanges()
    size_filter = size_filter if size_filter is not None else SizeFilter()
    if n_target < 1:
        raise ValueError(f"n_target must be at least 1, got {n_target}")
    dims = atlas.dims
    if dims.nx % 4 or dims.ny % 4 or dims.nz % 4:
        raise ValueError(
            f"grid dims {dims.shape} must be divisible by 4 for the downsample caches"
        )
    domain_count = atlas.domain_voxel_count()
    abort_count = int(np.ceil(_ABORT_OVERSHOOT * size_filter.max_frac * domain_count))
    jobs = int(jobs) if jobs else (os.cpu_count() or 1)
    if jobs < 1:
        raise ValueError(f"jobs must be at least 1, got {jobs}")
    give_up_at = _GIVE_UP_MULTIPLE * n_target
    init_args = (atlas, ranges, size_filter, master_seed, domain_count, abort_count)

    accepted: list[tuple] = []
    rejected = {"small": 0, "big": 0, "unstable": 0}
    processed = 0

    def handle(result):
        nonlocal processed
        index, verdict, payload = result
        processed += 1
        if verdict == "ok":
            accepted.append((index, *payload))
        else:
            rejected[verdict] += 1

    def check_give_up():
        # evaluated only at exact multiples of give_up_at so the outcome
        # is identical for every worker count
        if processed % give_up_at or len(accepted) >= n_target:
            return
        rate = len(accepted) / processed
        if rate < _MIN_ACCEPT_RATE:
            raise DatabaseBuildError(
                f"acceptance rate {rate:.5f} after {processed} candidates is below "
                f"{_MIN_ACCEPT_RATE:.3%}; widen the parameter ranges or the size filter",
                diagnostics={
                    "processed": processed,
                    "accepted": len(accepted),
                    "too_small": rejected["small"],
                    "too_big": rejected["big"],
                    "unstable": rejected["unstable"],
                    "n_target": n_target,
                },
            )

    if jobs == 1:
        _init_worker(*init_args)
        index = 0
        while len(accepted) < n_target:
            handle(_evaluate_candidate(index))
            index += 1
            check_give_up()
    else:
        wave = max(8, 2 * jobs)
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_init_worker, initargs=init_args
        ) as pool:
            index = 0
            while len(accepted) < n_target:
                # never let a wave straddle a give-up checkpoint
                take = min(wave, give_up_at - index % give_up_at)
                for result in pool.map(_evaluate_candidate, range(index, index + take)):
                    handle(result)
                index += take
                check_give_up()

    records = []
    for new_id, (_, params, t1gd_bytes, flair_bytes) in enumerate(accepted[:n_target]):
        pair = SegmentationPair(
            t1gd=BinaryMask(dims, np.frombuffer(t1gd_bytes, dtype=np.uint8)),
            flair=BinaryMask(dims, np.frombuffer(flair_bytes, dtype=np.uint8)),
        )
        records.append(make_record(new_id, params, pair))
    stats = FeatureStats.from_matrix(np.stack([r.features.as_array() for r in records]))
    return TumorDatabase(
        atlas_fingerprint=atlas.fingerprint(),
        dims=dims,
        thresholds=(T1GD_THRESHOLD, FLAIR_THRESHOLD),
        records=records,
        stats=stats,
    )


# ---------------------------------------------------------------------------
# serialization


def _record_masks(rec: TumorRecord) -> list[BinaryMask]:
    return [
        rec.seg.flair,
        rec.seg.t1gd,
        rec.down2.flair,
        rec.down2.t1gd,
        rec.down4.flair,
        rec.down4.t1gd,
    ]


def _record_bytes(rec: TumorRecord) -> bytes:
    p = rec.params
    masks = _record_masks(rec)
    parts = [
        struct.pack("<Q", rec.id),
        struct.pack(
            "<6d", float(p.seed_x), float(p.seed_y), float(p.seed_z), p.d_w, p.rho, p.t_end
        ),
        struct.pack("<6I", *(len(m.packed) for m in masks)),
    ]
    parts.extend(m.packed.tobytes() for m in masks)
    parts.append(rec.features.as_array().astype(np.float64).tobytes())
    return b"".join(parts)


def _db_bytes(db: TumorDatabase) -> bytes:
    k = len(FEATURE_NAMES)
    d = db.dims
    head = [
        struct.pack("<4sI", DB_MAGIC, DB_VERSION),
        db.atlas_fingerprint,
        struct.pack("<IIId", d.nx, d.ny, d.nz, d.dx),
        struct.pack("<dd", *db.thresholds),
        struct.pack("<QI", len(db.records), k),
        np.asarray(db.stats.mean, dtype=np.float64).tobytes(),
        np.asarray(db.stats.std, dtype=np.float64).tobytes(),
    ]
    region = b"".join(_record_bytes(rec) for rec in db.records)
    checksum = hashlib.blake2b(region, digest_size=_CHECKSUM_BYTES).digest()
    return b"".join(head) + region + checksum


def save_db(db: TumorDatabase, path) -> None:
    atomic_write(path, _db_bytes(db))


def _scaled_dims(dims: GridDims, factor: int) -> GridDims:
    return GridDims(dims.nx // factor, dims.ny // factor, dims.nz // factor, dims.dx * factor)


def _read_record(r: ByteReader, position: int, level_dims: list[GridDims], k: int) -> TumorRecord:
    start = r.ofs
    (rid,) = r.unpack("Q", "record id")
    raw = r.unpack("6d", "growth parameters")
    lengths = r.unpack("6I", "mask byte lengths")
    for got, d in zip(lengths, level_dims):
        want = (d.n_voxels + 7) // 8
        if got != want:
            raise FormatError(
                f"record {position}: mask of {got} bytes, expected {want} for grid {d.shape}",
                offset=start,
            )
    blobs = [r.array(np.uint8, n, "packed mask") for n in lengths]
    feats = r.array(np.float64, k, "feature vector")
    try:
        seeds = []
        for v in raw[:3]:
            if v != int(v):
                raise ValueError(f"non-integer seed coordinate {v}")
            seeds.append(int(v))
        params = GrowthParams(*seeds, d_w=raw[3], rho=raw[4], t_end=raw[5])
        pairs = [
            SegmentationPair(
                t1gd=BinaryMask(level_dims[i + 1], blobs[i + 1]),
                flair=BinaryMask(level_dims[i], blobs[i]),
            )
            for i in (0, 2, 4)
        ]
        return TumorRecord(
            id=int(rid),
            params=params,
            seg=pairs[0],
            features=FeatureVector.from_array(feats),
            down2=pairs[1],
            down4=pairs[2],
        )
    except ValueError as exc:
        raise FormatError(f"record {position} is invalid: {exc}", offset=start) from exc


def _validate_record(rec: TumorRecord, position: int) -> None:
    if rec.down2 != _downsample_pair(rec.seg, 2):
        raise FormatError(f"record {position} has a stale down2 cache")
    if rec.down4 != _downsample_pair(rec.seg, 4):
        raise FormatError(f"record {position} has a stale down4 cache")
    if rec.features != pair_features(rec.seg):
        raise FormatError(f"record {position} has a stale feature vector")


def load_db(path, validate: bool = False) -> TumorDatabase:
    """Parse a saved database.  ``validate`` additionally recomputes each
    record's caches, which is slow and meant for debugging."""
    with open(path, "rb") as f:
        data = f.read()
    r = ByteReader(data)
    r.expect_magic(DB_MAGIC)
    r.expect_version(DB_VERSION)
    fingerprint = r.take(32, "atlas fingerprint")
    dims_ofs = r.ofs
    dims = _read_dims(r)
    try:
        down2 = _scaled_dims(dims, 2)
        down4 = _scaled_dims(dims, 4)
        if dims.nx % 4 or dims.ny % 4 or dims.nz % 4:
            raise ValueError("grid dims are not divisible by 4")
    except ValueError as exc:
        raise FormatError(f"grid {dims.shape} cannot carry downsample caches: {exc}",
                          offset=dims_ofs) from exc
    level_dims = [dims, dims, down2, down2, down4, down4]
    t1gd_cut, flair_cut = r.unpack("dd", "thresholds")
    count, k = r.unpack("QI", "record count")
    if k != len(FEATURE_NAMES):
        raise FormatError(f"feature count {k} does not match this build ({len(FEATURE_NAMES)})")
    mean = r.array(np.float64, k, "feature means")
    std = r.array(np.float64, k, "feature stds")

    region_start = r.ofs
    region_end = len(data) - _CHECKSUM_BYTES
    if region_end < region_start:
        raise FormatError("truncated file: record checksum missing", offset=len(data))
    stored = data[region_end:]
    actual = hashlib.blake2b(data[region_start:region_end], digest_size=_CHECKSUM_BYTES).digest()
    if stored != actual:
        raise FormatError(
            f"record region fails its checksum ({stored.hex()} != {actual.hex()})",
            offset=region_end,
        )

    records = [_read_record(r, i, level_dims, k) for i in range(count)]
    if r.ofs != region_end:
        raise FormatError(
            f"{region_end - r.ofs} unused bytes inside the record region", offset=r.ofs
        )
    try:
        db = TumorDatabase(
            atlas_fingerprint=fingerprint,
            dims=dims,
            thresholds=(t1gd_cut, flair_cut),
            records=records,
            stats=FeatureStats(mean=mean, std=std),
        )
    except ValueError as exc:
        raise FormatError(f"inconsistent database: {exc}") from exc
    if validate:
        for i, rec in enumerate(records):
            _validate_record(rec, i)
    return db
