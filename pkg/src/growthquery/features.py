"""Shape descriptors for binary masks, driving the feature-query strategy.

Features follow the radiomics conventions: with l1 >= l2 >= l3 the
eigenvalues of the population covariance of set-voxel center coordinates
(in mm), the axis lengths are 4*sqrt(li), elongation is sqrt(l2/l1) and
flatness sqrt(l3/l1), both in (0, 1] with 1 meaning sphere-like.  Degenerate
masks take 0 for any quantity whose defining eigenvalue vanishes.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMaskError
from .voxel import BinaryMask, SegmentationPair

FEATURE_NAMES = (
    "com_x",
    "com_y",
    "com_z",
    "flair_volume",
    "flair_major_axis",
    "flair_minor_axis",
    "flair_least_axis",
    "flair_elongation",
    "flair_flatness",
    "t1gd_volume",
    "t1gd_major_axis",
    "t1gd_minor_axis",
    "t1gd_least_axis",
    "t1gd_elongation",
    "t1gd_flatness",
)

# indices of FEATURE_NAMES that participate in feature_distance; the center
# of mass only drives prefiltering
_SHAPE_SLICE = slice(3, len(FEATURE_NAMES))


@dataclass(frozen=True)
class ChannelFeatures:
    volume: float  # mm^3
    major_axis: float  # mm
    minor_axis: float
    least_axis: float
    elongation: float
    flatness: float

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.volume,
            self.major_axis,
            self.minor_axis,
            self.least_axis,
            self.elongation,
            self.flatness,
        )


_ZERO_CHANNEL = ChannelFeatures(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """COM of the FLAIR mask plus per-channel shape features."""

    com: np.ndarray  # (3,) mm
    flair: ChannelFeatures
    t1gd: ChannelFeatures

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [np.asarray(self.com, dtype=float), self.flair.as_tuple(), self.t1gd.as_tuple()]
        )

    @classmethod
    def from_array(cls, arr) -> "FeatureVector":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"feature array must have shape ({len(FEATURE_NAMES)},)")
        return cls(
            com=arr[:3].copy(),
            flair=ChannelFeatures(*arr[3:9]),
            t1gd=ChannelFeatures(*arr[9:15]),
        )

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return np.array_equal(self.as_array(), other.as_array())


@dataclass
class FeatureStats:
    """Per-feature mean and population stddev over a set of records."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_matrix(cls, matrix) -> "FeatureStats":
        matrix = np.asarray(matrix, dtype=float)
        return cls(mean=matrix.mean(axis=0), std=matrix.std(axis=0))


def _set_coordinates_mm(mask: BinaryMask) -> np.ndarray:
    dense = mask.dense()
    flat = np.flatnonzero(dense.reshape(-1))
    if len(flat) == 0:
        raise EmptyMaskError("mask has no set voxels")
    # transpose-of-unravel reproduces np.argwhere bit for bit (values and
    # memory layout) while scanning the flat array, which is about twice
    # as fast on typical grids
    coords = np.transpose(np.unravel_index(flat, dense.shape))
    return coords.astype(np.float64) * mask.dims.dx


def center_of_mass(mask: BinaryMask) -> np.ndarray:
    """Mean of set-voxel center coordinates, in mm."""
    return _set_coordinates_mm(mask).mean(axis=0)


def _shape_from_coords(coords: np.ndarray, volume: float) -> ChannelFeatures:
    centered = coords - coords.mean(axis=0)
    cov = centered.T @ centered / len(coords)
    lam = np.linalg.eigvalsh(cov)[::-1]  # descending
    lam = np.maximum(lam, 0.0)  # eigvalsh may return -1e-18 for flat masks
    axes = 4.0 * np.sqrt(lam)
    if lam[0] > 0.0:
        elongation = float(np.sqrt(lam[1] / lam[0]))
        flatness = float(np.sqrt(lam[2] / lam[0]))
    else:
        elongation = 0.0
        flatness = 0.0
    return ChannelFeatures(
        volume=volume,
        major_axis=float(axes[0]),
        minor_axis=float(axes[1]),
        least_axis=float(axes[2]),
        elongation=elongation,
        flatness=flatness,
    )


def shape_features(mask: BinaryMask) -> ChannelFeatures:
    coords = _set_coordinates_mm(mask)
    return _shape_from_coords(coords, len(coords) * mask.dims.dx**3)


def pair_features(pair: SegmentationPair) -> FeatureVector:
    """Feature vector of a segmentation pair.

    The FLAIR mask must be non-empty (it anchors the COM).  An empty T1Gd
    channel, common for tumors that never reach the core threshold, maps to
    all-zero channel features.
    """
    # extract FLAIR coordinates once; they feed both the COM and the shape
    coords = _set_coordinates_mm(pair.flair)
    flair = _shape_from_coords(coords, len(coords) * pair.flair.dims.dx**3)
    t1gd = _ZERO_CHANNEL if pair.t1gd.popcount() == 0 else shape_features(pair.t1gd)
    return FeatureVector(com=coords.mean(axis=0), flair=flair, t1gd=t1gd)


def feature_distance(a: FeatureVector, b: FeatureVector, stats: FeatureStats) -> float:
    """Sum of absolute z-score differences over the shape features.

    COM is excluded (it only prefilters) and so is any feature whose stddev
    in ``stats`` is zero, since its z-score is undefined.
    """
    za = a.as_array()[_SHAPE_SLICE]
    zb = b.as_array()[_SHAPE_SLICE]
    mean = np.asarray(stats.mean)[_SHAPE_SLICE]
    std = np.asarray(stats.std)[_SHAPE_SLICE]
    keep = std > 0.0
    if not keep.any():
        return 0.0
    za = (za[keep] - mean[keep]) / std[keep]
    zb = (zb[keep] - mean[keep]) / std[keep]
    return float(np.abs(za - zb).sum())
