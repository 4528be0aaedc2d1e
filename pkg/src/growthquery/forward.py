"""Explicit finite-difference solver for the tumor growth model.

The model is logistic growth plus tissue-dependent diffusion,

    du/dt = div(D grad u) + rho * u * (1 - u),

integrated with forward Euler on the voxel grid.  Fluxes use the arithmetic
mean of the two adjacent cells' diffusivity per face, and faces that leave
the simulation domain carry no flux, which implements the zero-flux boundary
on the tissue boundary rather than the cube edge.  Cell density is
dimensionless in [0, 1]; thresholding it at the imaging cutoffs turns a
density field into the two binary masks a scan would show.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import fkpp_step
from .errors import NumericalInstabilityError
from .voxel import BinaryMask, ScalarField, SegmentationPair, TissueAtlas

# imaging density cutoffs: enhancing core and edema
T1GD_THRESHOLD = 0.6
FLAIR_THRESHOLD = 0.2

# recompute the support bounding box (and clear the swap buffer) this often
_TIGHTEN_EVERY = 64


@dataclass(frozen=True)
class GrowthParams:
    """One tumor: seed voxel, white matter diffusivity, growth rate, horizon."""

    seed_x: int
    seed_y: int
    seed_z: int
    d_w: float  # mm^2/day
    rho: float  # 1/day
    t_end: float  # days

    def __post_init__(self):
        for name in ("seed_x", "seed_y", "seed_z"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (isinstance(self.d_w, (int, float)) and math.isfinite(self.d_w) and self.d_w > 0):
            raise ValueError(f"d_w must be positive and finite, got {self.d_w!r}")
        if not (isinstance(self.rho, (int, float)) and math.isfinite(self.rho) and self.rho >= 0):
            raise ValueError(f"rho must be non-negative and finite, got {self.rho!r}")
        if not (isinstance(self.t_end, (int, float)) and math.isfinite(self.t_end) and self.t_end >= 0):
            raise ValueError(f"t_end must be non-negative and finite, got {self.t_end!r}")
        object.__setattr__(self, "d_w", float(self.d_w))
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def seed(self) -> tuple[int, int, int]:
        return (self.seed_x, self.seed_y, self.seed_z)


@dataclass(frozen=True)
class SolverConfig:
    u0: float = 0.1
    dt_safety: float = 0.9
    dt_override: float | None = None
    check_every: int = 50  # steps between boundedness/finiteness checks

    def __post_init__(self):
        if not 0.0 < self.u0 < 1.0:
            raise ValueError(f"u0 must lie strictly between 0 and 1, got {self.u0!r}")
        if not 0.0 < self.dt_safety <= 1.0:
            raise ValueError(f"dt_safety must lie in (0, 1], got {self.dt_safety!r}")
        if self.dt_override is not None and not self.dt_override > 0:
            raise ValueError(f"dt_override must be positive, got {self.dt_override!r}")
        if self.check_every < 1:
            raise ValueError("check_every must be at least 1")


def diffusion_field(atlas: TissueAtlas, d_w: float) -> ScalarField:
    """D(x) = d_w * (p_wm + 0.1 * p_gm) inside the domain, 0 outside."""
    if not d_w > 0:
        raise ValueError(f"d_w must be positive, got {d_w!r}")
    d = d_w * (atlas.p_wm.values.astype(np.float64) + 0.1 * atlas.p_gm.values)
    d[~atlas.domain_mask()] = 0.0
    return ScalarField(atlas.dims, d)


def stable_dt(atlas: TissueAtlas, d_w: float, rho: float, safety: float = 0.9) -> float:
    """Largest explicit-Euler step the scheme tolerates, times a safety factor.

    The diffusion bound is dx^2 / (6 * D_max) for the 6-face stencil; the
    reaction bound is 1/rho.
    """
    if not 0.0 < safety <= 1.0:
        raise ValueError(f"safety must lie in (0, 1], got {safety!r}")
    if rho < 0:
        raise ValueError(f"rho must be non-negative, got {rho!r}")
    d_max = float(diffusion_field(atlas, d_w).values.max())
    dt_diffusion = atlas.dims.dx**2 / (6.0 * d_max) if d_max > 0 else math.inf
    dt_reaction = math.inf if rho == 0 else 1.0 / rho
    return safety * min(dt_diffusion, dt_reaction)


def _face_coefficients(d_pad, in_pad, axis):
    """Mean-of-cells coefficient per face along one axis, zero across the
    domain boundary.  Indexed at the lower cell of each face."""
    t = np.zeros_like(d_pad)
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    lo, hi = tuple(lo), tuple(hi)
    both = in_pad[lo] & in_pad[hi]
    t[lo] = np.where(both, 0.5 * (d_pad[lo] + d_pad[hi]), 0.0)
    return t


def _grow_box(box, shape):
    x0, x1, y0, y1, z0, z1 = box
    return (
        max(1, x0 - 1),
        min(shape[0] - 1, x1 + 1),
        max(1, y0 - 1),
        min(shape[1] - 1, y1 + 1),
        max(1, z0 - 1),
        min(shape[2] - 1, z1 + 1),
    )


def _support_box(u_pad, shape):
    """Bounding box of positive density, dilated by one, in padded coords."""
    core = u_pad[1:-1, 1:-1, 1:-1]
    nonzero = core > 0.0
    idx = []
    for axis, other in ((0, (1, 2)), (1, (0, 2)), (2, (0, 1))):
        line = np.flatnonzero(nonzero.any(axis=other))
        if len(line) == 0:
            return None
        idx.append((int(line[0]), int(line[-1]) + 1))
    (x0, x1), (y0, y1), (z0, z1) = idx
    # +1 converts to padded coords, then dilate by one and clamp to the core
    return (
        max(1, x0),
        min(shape[0] - 1, x1 + 2),
        max(1, y0),
        min(shape[1] - 1, y1 + 2),
        max(1, z0),
        min(shape[2] - 1, z1 + 2),
    )


def simulate(
    atlas: TissueAtlas,
    params: GrowthParams,
    config: SolverConfig | None = None,
    stop_when=None,
) -> ScalarField:
    """Integrate the growth model from a single-voxel seed to t_end.

    Returns the cell density field.  ``stop_when``, if given, is called on
    the interior density every ``check_every`` steps and ends the run early
    when it returns True (used by database generation to drop candidates
    that have already outgrown the size filter).
    """
    config = config if config is not None else SolverConfig()
    dims = atlas.dims
    sx, sy, sz = params.seed
    if sx >= dims.nx or sy >= dims.ny or sz >= dims.nz:
        raise ValueError(f"seed {params.seed} outside grid {dims.shape}")
    domain = atlas.domain_mask()
    if not domain[sx, sy, sz]:
        raise ValueError(f"seed voxel {params.seed} lies outside the simulation domain")

    if config.dt_override is not None:
        dt = float(config.dt_override)
    else:
        dt = stable_dt(atlas, params.d_w, params.rho, config.dt_safety)

    padded = (dims.nx + 2, dims.ny + 2, dims.nz + 2)
    u = np.zeros(padded)
    u[sx + 1, sy + 1, sz + 1] = config.u0

    if params.t_end == 0.0:
        return ScalarField(dims, u[1:-1, 1:-1, 1:-1].copy())

    d_pad = np.zeros(padded)
    d_pad[1:-1, 1:-1, 1:-1] = diffusion_field(atlas, params.d_w).values
    in_pad = np.zeros(padded, dtype=bool)
    in_pad[1:-1, 1:-1, 1:-1] = domain
    txp = _face_coefficients(d_pad, in_pad, 0)
    typ = _face_coefficients(d_pad, in_pad, 1)
    tzp = _face_coefficients(d_pad, in_pad, 2)

    inv_dx2 = 1.0 / (dims.dx * dims.dx)
    n_steps = max(1, math.ceil(params.t_end / dt))
    out = np.zeros(padded)
    box = _grow_box((sx + 1, sx + 2, sy + 1, sy + 2, sz + 1, sz + 2), padded)

    for step in range(1, n_steps + 1):
        dt_step = dt if step < n_steps else params.t_end - (n_steps - 1) * dt
        fkpp_step(u, out, txp, typ, tzp, inv_dx2, params.rho, dt_step, *box)
        u, out = out, u
        box = _grow_box(box, padded)

        if step % _TIGHTEN_EVERY == 0:
            tight = _support_box(u, padded)
            if tight is not None:
                box = tight
            out[...] = 0.0

        if step % config.check_every == 0 or step == n_steps:
            core = u[1:-1, 1:-1, 1:-1]
            if not np.isfinite(core).all():
                raise NumericalInstabilityError("non-finite cell density", step)
            if core.min() < 0.0 or core.max() > 1.0:
                raise NumericalInstabilityError("cell density left [0, 1]", step)
            if stop_when is not None and step < n_steps and stop_when(core):
                break

    return ScalarField(dims, u[1:-1, 1:-1, 1:-1].copy())


def threshold(u: ScalarField, c: float) -> BinaryMask:
    """Binary mask of voxels with density >= c."""
    if not 0.0 < c < 1.0:
        raise ValueError(f"threshold must lie strictly between 0 and 1, got {c!r}")
    return BinaryMask.from_dense(u.dims, u.values >= c)


def segment(
    u: ScalarField, thresholds: tuple[float, float] = (T1GD_THRESHOLD, FLAIR_THRESHOLD)
) -> SegmentationPair:
    """Apply the (T1Gd, FLAIR) cutoffs; the core mask nests inside the edema one."""
    t1gd_cut, flair_cut = thresholds
    if t1gd_cut < flair_cut:
        raise ValueError(
            f"T1Gd cutoff {t1gd_cut} must not be below the FLAIR cutoff {flair_cut}"
        )
    return SegmentationPair(t1gd=threshold(u, t1gd_cut), flair=threshold(u, flair_cut))
