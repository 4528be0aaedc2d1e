"""Numba inner loop for the explicit growth update.

Arrays arrive ghost-padded by one voxel per side, so neighbor reads need no
bounds checks.  ``txp[x, y, z]`` is the face coefficient between ``(x, y, z)``
and ``(x+1, y, z)`` (zero when either side leaves the domain); likewise
``typ``/``tzp`` along y and z.  The divergence is combined as
``dxx + (dyy + dzz)``: the inner sum commutes, which keeps the update exactly
invariant under a y/z axis swap of symmetric inputs.
"""

import numba


@numba.njit(cache=True)
def fkpp_step(u, out, txp, typ, tzp, inv_dx2, rho, dt, x0, x1, y0, y1, z0, z1):
    for x in range(x0, x1):
        for y in range(y0, y1):
            for z in range(z0, z1):
                ui = u[x, y, z]
                dxx = txp[x, y, z] * (u[x + 1, y, z] - ui) - txp[x - 1, y, z] * (
                    ui - u[x - 1, y, z]
                )
                dyy = typ[x, y, z] * (u[x, y + 1, z] - ui) - typ[x, y - 1, z] * (
                    ui - u[x, y - 1, z]
                )
                dzz = tzp[x, y, z] * (u[x, y, z + 1] - ui) - tzp[x, y, z - 1] * (
                    ui - u[x, y, z - 1]
                )
                out[x, y, z] = ui + dt * (
                    (dxx + (dyy + dzz)) * inv_dx2 + rho * ui * (1.0 - ui)
                )
