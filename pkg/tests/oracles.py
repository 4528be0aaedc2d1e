"""Independent reference implementations used as test oracles.

Everything here is written the slow, obvious way (python loops, scalar
arithmetic) so that it cannot share a bug with the vectorized package code.
"""

import math

import numpy as np


def naive_linear_index(x, y, z, nx, ny):
    return x + nx * (y + ny * z)


def naive_pack(dense):
    """Pack a boolean (nx, ny, nz) array voxel by voxel, LSB first."""
    nx, ny, nz = dense.shape
    out = bytearray((nx * ny * nz + 7) // 8)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if dense[x, y, z]:
                    idx = naive_linear_index(x, y, z, nx, ny)
                    out[idx // 8] |= 1 << (idx % 8)
    return bytes(out)


def logistic_exact(u0, rho, t):
    return u0 / (u0 + (1.0 - u0) * math.exp(-rho * t))


def logistic_euler(u0, rho, t, n_steps):
    """Scalar forward-Euler integration of u' = rho*u*(1-u)."""
    u = u0
    dt = t / n_steps
    for _ in range(n_steps):
        u = u + dt * rho * u * (1.0 - u)
    return u


def naive_fkpp_step(u, dcoef, inside, dx, dt, rho):
    """One explicit step of the growth equation, voxel by voxel.

    Face diffusivity is the arithmetic mean of the two adjacent cells and
    faces leaving the domain carry no flux.
    """
    nx, ny, nz = u.shape
    out = np.zeros_like(u)
    inv_dx2 = 1.0 / (dx * dx)
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                ui = u[x, y, z]
                div = 0.0
                if inside[x, y, z]:
                    for step_ax, (ox, oy, oz) in enumerate(
                        [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                    ):
                        nxx, nyy, nzz = x + ox, y + oy, z + oz
                        if 0 <= nxx < nx and 0 <= nyy < ny and 0 <= nzz < nz and inside[nxx, nyy, nzz]:
                            t_face = 0.5 * (dcoef[x, y, z] + dcoef[nxx, nyy, nzz])
                            div += t_face * (u[nxx, nyy, nzz] - ui)
                out[x, y, z] = ui + dt * (div * inv_dx2 + rho * ui * (1.0 - ui))
    return out


def brute_covariance(coords):
    """Population covariance of an (n, 3) coordinate array, by loops."""
    n = len(coords)
    mean = [sum(c[k] for c in coords) / n for k in range(3)]
    cov = np.zeros((3, 3))
    for c in coords:
        d = [c[k] - mean[k] for k in range(3)]
        for i in range(3):
            for j in range(3):
                cov[i, j] += d[i] * d[j]
    return cov / n


def analytic_eigvals_sym3(m):
    """Eigenvalues of a symmetric 3x3 matrix via the trigonometric formula.

    Returns them sorted descending.  Independent of LAPACK.
    """
    m = np.asarray(m, dtype=float)
    p1 = m[0, 1] ** 2 + m[0, 2] ** 2 + m[1, 2] ** 2
    q = np.trace(m) / 3.0
    if p1 == 0.0:
        eig = sorted([m[0, 0], m[1, 1], m[2, 2]], reverse=True)
        return np.array(eig)
    p2 = (m[0, 0] - q) ** 2 + (m[1, 1] - q) ** 2 + (m[2, 2] - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    b = (m - q * np.eye(3)) / p
    r = np.linalg.det(b) / 2.0
    r = min(1.0, max(-1.0, r))
    phi = math.acos(r) / 3.0
    e1 = q + 2.0 * p * math.cos(phi)
    e3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return np.array(sorted([e1, e2, e3], reverse=True))


def naive_dice(dense_a, dense_b):
    na = int(dense_a.sum())
    nb = int(dense_b.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    inter = int(np.logical_and(dense_a, dense_b).sum())
    return 2.0 * inter / (na + nb)


def naive_downsample(dense, factor):
    nx, ny, nz = dense.shape
    out = np.zeros((nx // factor, ny // factor, nz // factor), dtype=bool)
    for x in range(nx // factor):
        for y in range(ny // factor):
            for z in range(nz // factor):
                out[x, y, z] = dense[factor * x, factor * y, factor * z]
    return out


def naive_combined_dice(t1gd_a, flair_a, t1gd_b, flair_b):
    return naive_dice(t1gd_a, t1gd_b) + naive_dice(flair_a, flair_b)


def naive_rank(scored, k, higher_is_better):
    """Top-k of (id, score) pairs with ascending-id tie-break."""
    if higher_is_better:
        key = lambda t: (-t[1], t[0])  # noqa: E731
    else:
        key = lambda t: (t[1], t[0])  # noqa: E731
    return sorted(scored, key=key)[:k]
