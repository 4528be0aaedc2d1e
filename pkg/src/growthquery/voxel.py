"""Voxel grid primitives: dimensions, scalar fields, packed masks, tissue atlases.

Voxels live on a regular cubic grid with isotropic spacing ``dx`` millimetres.
The canonical linear ordering of voxel ``(x, y, z)`` is ``x + nx*(y + ny*z)``,
x varying fastest.  Every array that crosses a file boundary uses this
ordering.  Packed masks assign bit ``idx % 8`` of byte ``idx // 8`` and keep
trailing pad bits zero, so popcounts over raw bytes are exact.

All binary formats are little-endian with a 4-byte magic, a u32 version, the
grid dims as three u32, and dx as f64:

=========  ======  =======================================
magic      holds   payload after the common header
=========  ======  =======================================
``GQAT``   atlas   p_wm, p_gm, p_csf as f32, linear order
``GQU1``   field   values as f32, linear order
``GQBM``   mask    packed bits, ceil(n/8) bytes
=========  ======  =======================================
"""

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, FormatError

ATLAS_MAGIC = b"GQAT"
FIELD_MAGIC = b"GQU1"
MASK_MAGIC = b"GQBM"
FORMAT_VERSION = 1

# p_wm + p_gm must exceed this for a voxel to belong to the simulation domain
DOMAIN_THRESHOLD = 0.1

_HEADER = struct.Struct("<4sIIIId")


@dataclass(frozen=True)
class GridDims:
    """Grid extent in voxels plus spacing in mm.  At least 4 voxels per axis."""

    nx: int
    ny: int
    nz: int
    dx: float

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 4:
                raise ValueError(f"{name} must be an integer >= 4, got {n!r}")
            object.__setattr__(self, name, int(n))
        if not (isinstance(self.dx, (int, float, np.floating)) and self.dx > 0):
            raise ValueError(f"dx must be a positive number, got {self.dx!r}")
        object.__setattr__(self, "dx", float(self.dx))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    def index(self, x: int, y: int, z: int) -> int:
        """Linear index of a voxel; x varies fastest."""
        if not (0 <= x < self.nx and 0 <= y < self.ny and 0 <= z < self.nz):
            raise ValueError(f"voxel ({x}, {y}, {z}) outside grid {self.shape}")
        return x + self.nx * (y + self.ny * z)

    def unindex(self, idx: int) -> tuple[int, int, int]:
        if not 0 <= idx < self.n_voxels:
            raise ValueError(f"linear index {idx} outside grid of {self.n_voxels} voxels")
        x = idx % self.nx
        rest = idx // self.nx
        return (x, rest % self.ny, rest // self.ny)


def _freeze(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable:
        try:
            arr.flags.writeable = False
        except ValueError:
            arr = arr.copy()
            arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One float per voxel, indexed ``values[x, y, z]``.  Immutable."""

    dims: GridDims
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype not in (np.float32, np.float64):
            raise ValueError(f"field dtype must be float32 or float64, got {v.dtype}")
        if v.shape != self.dims.shape:
            raise DimensionMismatchError.for_dims("scalar field", v.shape, self.dims.shape)
        object.__setattr__(self, "values", _freeze(v))

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.values, other.values)

    def flat(self) -> np.ndarray:
        """Values in canonical linear order."""
        return self.values.reshape(-1, order="F")


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Bit-packed boolean voxel set.  ``packed`` is uint8, LSB-first per byte."""

    dims: GridDims
    packed: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.packed)
        if p.dtype != np.uint8 or p.ndim != 1:
            raise ValueError("packed mask must be a 1-D uint8 array")
        n = self.dims.n_voxels
        if len(p) != (n + 7) // 8:
            raise ValueError(
                f"packed mask has {len(p)} bytes, expected {(n + 7) // 8} for {n} voxels"
            )
        pad = len(p) * 8 - n
        if pad and int(p[-1]) >> (8 - pad):
            raise ValueError("trailing pad bits of a packed mask must be zero")
        object.__setattr__(self, "packed", _freeze(p))

    @classmethod
    def from_dense(cls, dims: GridDims, dense: np.ndarray) -> "BinaryMask":
        dense = np.asarray(dense)
        if dense.shape != dims.shape:
            raise DimensionMismatchError.for_dims("mask", dense.shape, dims.shape)
        if dense.dtype != np.bool_:
            raise ValueError(f"dense mask must be boolean, got {dense.dtype}")
        packed = np.packbits(dense.reshape(-1, order="F"), bitorder="little")
        return cls(dims, packed)

    def dense(self) -> np.ndarray:
        bits = np.unpackbits(self.packed, count=self.dims.n_voxels, bitorder="little")
        return bits.astype(bool).reshape(self.dims.shape, order="F")

    def popcount(self) -> int:
        return int(np.bitwise_count(self.packed).sum())

    def get(self, x: int, y: int, z: int) -> bool:
        idx = self.dims.index(x, y, z)
        return bool((int(self.packed[idx >> 3]) >> (idx & 7)) & 1)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.packed, other.packed)


@dataclass(frozen=True, eq=False)
class SegmentationPair:
    """Enhancing-core and edema masks from one simulation, on one grid."""

    t1gd: BinaryMask
    flair: BinaryMask

    def __post_init__(self):
        if self.t1gd.dims != self.flair.dims:
            raise DimensionMismatchError.for_dims(
                "segmentation pair", self.t1gd.dims.shape, self.flair.dims.shape
            )

    @property
    def dims(self) -> GridDims:
        return self.t1gd.dims

    def __eq__(self, other):
        if not isinstance(other, SegmentationPair):
            return NotImplemented
        return self.t1gd == other.t1gd and self.flair == other.flair


@dataclass(frozen=True, eq=False)
class TissueAtlas:
    """White matter, grey matter and CSF probability maps on a shared grid.

    The simulation domain is every voxel with p_wm + p_gm > DOMAIN_THRESHOLD;
    CSF and the exterior stay out of it.
    """

    p_wm: ScalarField
    p_gm: ScalarField
    p_csf: ScalarField

    def __post_init__(self):
        if not (self.p_wm.dims == self.p_gm.dims == self.p_csf.dims):
            raise DimensionMismatchError(
                f"atlas fields disagree on dims: {self.p_wm.dims.shape}, "
                f"{self.p_gm.dims.shape}, {self.p_csf.dims.shape}"
            )
        for name in ("p_wm", "p_gm", "p_csf"):
            v = getattr(self, name).values
            if v.min() < 0.0 or v.max() > 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.domain_mask().any():
            raise ValueError("atlas has an empty simulation domain")

    @property
    def dims(self) -> GridDims:
        return self.p_wm.dims

    def domain_mask(self) -> np.ndarray:
        """Boolean (nx, ny, nz) array of simulation-domain voxels."""
        total = self.p_wm.values.astype(np.float64) + self.p_gm.values
        return total > DOMAIN_THRESHOLD

    def domain_voxel_count(self) -> int:
        return int(self.domain_mask().sum())

    def fingerprint(self) -> bytes:
        """sha256 of the serialized atlas; 32 bytes."""
        return hashlib.sha256(_atlas_bytes(self)).digest()

    def __eq__(self, other):
        if not isinstance(other, TissueAtlas):
            return NotImplemented
        return (
            self.p_wm == other.p_wm
            and self.p_gm == other.p_gm
            and self.p_csf == other.p_csf
        )


def make_phantom_atlas(n: int, dx: float = 1.0) -> TissueAtlas:
    """Concentric-sphere head phantom on an n^3 grid.

    Around the integer center voxel n//2: CSF out to radius 0.08*n, a white
    matter shell to 0.28*n, a grey matter shell to 0.38*n, empty space beyond.
    Probabilities are hard 0/1.  Radii are measured in voxels.
    """
    if not isinstance(n, (int, np.integer)) or n < 16:
        raise ValueError(f"phantom needs n >= 16, got {n!r}")
    dims = GridDims(int(n), int(n), int(n), dx)
    c = n // 2
    ax = (np.arange(n, dtype=np.float64) - c) ** 2
    d2 = ax[:, None, None] + ax[None, :, None] + ax[None, None, :]
    r_csf2 = (0.08 * n) ** 2
    r_wm2 = (0.28 * n) ** 2
    r_gm2 = (0.38 * n) ** 2
    csf = d2 <= r_csf2
    wm = (d2 > r_csf2) & (d2 <= r_wm2)
    gm = (d2 > r_wm2) & (d2 <= r_gm2)
    return TissueAtlas(
        ScalarField(dims, wm.astype(np.float32)),
        ScalarField(dims, gm.astype(np.float32)),
        ScalarField(dims, csf.astype(np.float32)),
    )


def mask_volume_mm3(mask: BinaryMask) -> float:
    return mask.popcount() * mask.dims.dx**3


# ---------------------------------------------------------------------------
# serialization


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory plus rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ByteReader:
    """Sequential parser over a byte string that reports failure offsets."""

    def __init__(self, data: bytes):
        self.data = data
        self.ofs = 0

    def take(self, n: int, what: str) -> bytes:
        if self.ofs + n > len(self.data):
            raise FormatError(
                f"truncated file: need {n} bytes for {what}, "
                f"only {len(self.data) - self.ofs} left",
                offset=self.ofs,
            )
        out = self.data[self.ofs : self.ofs + n]
        self.ofs += n
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size, what))

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize, what)
        return np.frombuffer(raw, dtype=dtype)

    def expect_magic(self, magic: bytes) -> None:
        ofs = self.ofs
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=ofs)

    def expect_version(self, version: int) -> None:
        ofs = self.ofs
        (got,) = self.unpack("I", "version")
        if got != version:
            raise FormatError(f"unsupported version {got}, expected {version}", offset=ofs)

    def expect_end(self) -> None:
        if self.ofs != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.ofs} trailing bytes after payload",
                offset=self.ofs,
            )


def _read_dims(r: ByteReader) -> GridDims:
    ofs = r.ofs
    nx, ny, nz = r.unpack("III", "grid dims")
    (dx,) = r.unpack("d", "voxel spacing")
    try:
        return GridDims(int(nx), int(ny), int(nz), float(dx))
    except ValueError as exc:
        raise FormatError(f"invalid grid header: {exc}", offset=ofs) from exc


def _header_bytes(magic: bytes, dims: GridDims) -> bytes:
    return _HEADER.pack(magic, FORMAT_VERSION, dims.nx, dims.ny, dims.nz, dims.dx)


def _field_f32_bytes(field: ScalarField) -> bytes:
    return np.ascontiguousarray(field.flat(), dtype=np.float32).tobytes()


def _atlas_bytes(atlas: TissueAtlas) -> bytes:
    return b"".join(
        [
            _header_bytes(ATLAS_MAGIC, atlas.dims),
            _field_f32_bytes(atlas.p_wm),
            _field_f32_bytes(atlas.p_gm),
            _field_f32_bytes(atlas.p_csf),
        ]
    )


def save_atlas(atlas: TissueAtlas, path) -> None:
    atomic_write(path, _atlas_bytes(atlas))


def _read_field_values(r: ByteReader, dims: GridDims, what: str) -> ScalarField:
    flat = r.array(np.float32, dims.n_voxels, what)
    return ScalarField(dims, flat.reshape(dims.shape, order="F"))


def load_atlas(path) -> TissueAtlas:
    r = ByteReader(open(path, "rb").read())
    r.expect_magic(ATLAS_MAGIC)
    r.expect_version(FORMAT_VERSION)
    dims = _read_dims(r)
    wm = _read_field_values(r, dims, "p_wm values")
    gm = _read_field_values(r, dims, "p_gm values")
    csf = _read_field_values(r, dims, "p_csf values")
    r.expect_end()
    try:
        return TissueAtlas(wm, gm, csf)
    except ValueError as exc:
        raise FormatError(f"atlas payload invalid: {exc}") from exc


def save_field(field: ScalarField, path) -> None:
    atomic_write(path, _header_bytes(FIELD_MAGIC, field.dims) + _field_f32_bytes(field))


def load_field(path) -> ScalarField:
    r = ByteReader(open(path, "rb").read())
    r.expect_magic(FIELD_MAGIC)
    r.expect_version(FORMAT_VERSION)
    dims = _read_dims(r)
    field = _read_field_values(r, dims, "field values")
    r.expect_end()
    return field


def save_mask(mask: BinaryMask, path) -> None:
    atomic_write(
        path, _header_bytes(MASK_MAGIC, mask.dims) + mask.packed.tobytes()
    )


def load_mask(path) -> BinaryMask:
    r = ByteReader(open(path, "rb").read())
    r.expect_magic(MASK_MAGIC)
    r.expect_version(FORMAT_VERSION)
    dims = _read_dims(r)
    packed = r.array(np.uint8, (dims.n_voxels + 7) // 8, "packed bits")
    r.expect_end()
    try:
        return BinaryMask(dims, packed)
    except ValueError as exc:
        raise FormatError(f"mask payload invalid: {exc}") from exc
