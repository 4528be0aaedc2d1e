"""Grow one synthetic tumor and read off what a scan would show.

The forward model is logistic growth plus tissue-dependent diffusion on a
voxel grid.  Thresholding the resulting cell density at the imaging
cutoffs (0.6 and 0.2) produces the two binary masks an MR exam would
segment: the enhancing core and the edema around it.
"""

import numpy as np

from growthquery import (
    GrowthParams,
    make_phantom_atlas,
    mask_volume_mm3,
    segment,
    simulate,
    stable_dt,
)

# a 32^3 spherical phantom at 2 mm spacing: CSF core, white matter shell,
# grey matter rim, nothing outside
atlas = make_phantom_atlas(32, dx=2.0)
domain = atlas.domain_mask()
print(f"atlas {atlas.dims.shape} dx={atlas.dims.dx} mm, "
      f"{int(domain.sum())} simulatable voxels")

# seed 8 voxels off center, inside the white matter shell
params = GrowthParams(16, 16, 24, d_w=0.2, rho=0.08, t_end=150.0)
print(f"growing: d_w={params.d_w} mm^2/day, rho={params.rho}/day, "
      f"{params.t_end:.0f} days")
print(f"stable explicit step: {stable_dt(atlas, params.d_w, params.rho):.3f} days")

u = simulate(atlas, params)
support = int(np.count_nonzero(u.values))
print(f"peak density {float(u.values.max()):.3f}, "
      f"{support} voxels carry any tumor at all")

pair = segment(u)
print(f"T1Gd (core)  : {pair.t1gd.popcount():5d} voxels, "
      f"{mask_volume_mm3(pair.t1gd):8.0f} mm^3")
print(f"FLAIR (edema): {pair.flair.popcount():5d} voxels, "
      f"{mask_volume_mm3(pair.flair):8.0f} mm^3")

# the core is always inside the edema: the cutoffs are nested
inside = np.all(~pair.t1gd.dense() | pair.flair.dense())
print(f"core contained in edema: {bool(inside)}")
