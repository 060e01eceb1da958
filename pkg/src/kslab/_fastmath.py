"""Compiled inner loops for pairwise drift evaluation.

All loops accumulate per particle row in ascending source order, so results
are bit-identical for any thread count.  The enclosed-mass factor of the
aggregation kernel comes from the cubic-Hermite table built in kernels.py;
the repulsion kernel evaluates the bump directly so it matches the public
mollifier functions bit for bit.
"""

import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
from numba import njit, prange

TWO_PI = 2.0 * np.pi


@njit(cache=True, inline="always")
def _mass_at(rho, values, derivs):
    k = values.shape[0] - 1
    u = rho * k
    idx = int(u)
    if idx >= k:
        return 1.0
    t = u - idx
    h = 1.0 / k
    t2 = t * t
    t3 = t2 * t
    return (
        (2.0 * t3 - 3.0 * t2 + 1.0) * values[idx]
        + (t3 - 2.0 * t2 + t) * h * derivs[idx]
        + (-2.0 * t3 + 3.0 * t2) * values[idx + 1]
        + (t3 - t2) * h * derivs[idx + 1]
    )


@njit(cache=True, inline="always")
def _cutoff_prime(rho, m, lam, low_d1, high_d1):
    if rho <= lam:
        return 0.0
    if rho >= 2.0 / lam:
        return 0.0
    if rho < 2.0 * lam:
        t = (rho - lam) / lam
        acc = 0.0
        for k in range(low_d1.shape[0] - 1, -1, -1):
            acc = acc * t + low_d1[k]
        return acc
    if rho <= 1.0 / lam:
        return m * rho ** (m - 2.0)
    t = (rho - 1.0 / lam) * lam
    acc = 0.0
    for k in range(high_d1.shape[0] - 1, -1, -1):
        acc = acc * t + high_d1[k]
    return acc


@njit(cache=True, parallel=True)
def drift_2d(
    pos,
    eps_k,
    eps_p,
    mass_values,
    mass_derivs,
    cd_norm,
    m,
    lam,
    low_d1,
    high_d1,
    do_agg,
    do_rep,
    out,
    rho_out,
):
    """Full direct O(N^2) drift for d = 2: aggregation plus cutoff repulsion."""
    n = pos.shape[0]
    inv2pi = 1.0 / TWO_PI
    ek2 = eps_k * eps_k
    ep2 = eps_p * eps_p
    inv_ep2 = 1.0 / ep2
    inv_ep4 = inv_ep2 * inv_ep2
    self_v = cd_norm * np.exp(-1.0) * inv_ep2
    for i in prange(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        ax = 0.0
        ay = 0.0
        rho = 0.0
        gx = 0.0
        gy = 0.0
        for j in range(n):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            r2 = dx * dx + dy * dy
            if do_agg and r2 > 0.0:
                if r2 >= ek2:
                    s = -inv2pi / r2
                    ax += s * dx
                    ay += s * dy
                else:
                    r = np.sqrt(r2)
                    enc = _mass_at(r / eps_k, mass_values, mass_derivs)
                    s = -inv2pi / r2 * enc
                    ax += s * dx
                    ay += s * dy
            if do_rep and r2 < ep2:
                if r2 > 0.0:
                    om = 1.0 - r2 * inv_ep2
                    e = np.exp(-1.0 / om)
                    rho += cd_norm * e * inv_ep2
                    gfac = -2.0 * cd_norm * e / (om * om) * inv_ep4
                    gx += gfac * dx
                    gy += gfac * dy
                else:
                    rho += self_v
        rho /= n
        pp = 0.0
        if do_rep:
            pp = _cutoff_prime(rho, m, lam, low_d1, high_d1)
        out[i, 0] = ax / n - pp * (gx / n)
        out[i, 1] = ay / n - pp * (gy / n)
        rho_out[i] = rho


@njit(cache=True, parallel=True)
def drift_nd(
    pos,
    eps_k,
    eps_p,
    mass_values,
    mass_derivs,
    cd_norm,
    agg_coef,
    m,
    lam,
    low_d1,
    high_d1,
    do_agg,
    do_rep,
    out,
    rho_out,
):
    """Direct drift for general d >= 2; agg_coef = (d-2) C_d for d >= 3, 1/(2 pi) for d = 2."""
    n = pos.shape[0]
    d = pos.shape[1]
    ek2 = eps_k * eps_k
    ep2 = eps_p * eps_p
    inv_ep2 = 1.0 / ep2
    inv_epd = eps_p ** (-float(d))
    inv_epd2 = eps_p ** (-float(d + 2))
    self_v = cd_norm * np.exp(-1.0) * inv_epd
    half_d = 0.5 * d
    for i in prange(n):
        acc = np.zeros(d)
        grad = np.zeros(d)
        diff = np.zeros(d)
        rho = 0.0
        for j in range(n):
            r2 = 0.0
            for k in range(d):
                diff[k] = pos[i, k] - pos[j, k]
                r2 += diff[k] * diff[k]
            if do_agg and r2 > 0.0:
                if d == 2:
                    bare = -agg_coef / r2
                elif d == 3:
                    bare = -agg_coef / (r2 * np.sqrt(r2))
                else:
                    bare = -agg_coef * r2 ** (-half_d)
                if r2 >= ek2:
                    s = bare
                else:
                    s = bare * _mass_at(np.sqrt(r2) / eps_k, mass_values, mass_derivs)
                for k in range(d):
                    acc[k] += s * diff[k]
            if do_rep and r2 < ep2:
                if r2 > 0.0:
                    om = 1.0 - r2 * inv_ep2
                    e = np.exp(-1.0 / om)
                    rho += cd_norm * e * inv_epd
                    gfac = -2.0 * cd_norm * e / (om * om) * inv_epd2
                    for k in range(d):
                        grad[k] += gfac * diff[k]
                else:
                    rho += self_v
        rho /= n
        pp = 0.0
        if do_rep:
            pp = _cutoff_prime(rho, m, lam, low_d1, high_d1)
        for k in range(d):
            out[i, k] = acc[k] / n - pp * (grad[k] / n)
        rho_out[i] = rho


@njit(cache=True, parallel=True)
def repulsion_cells_2d(
    pos,
    order,
    cell_start,
    cell_end,
    ncx,
    ncy,
    ox,
    oy,
    width,
    eps_p,
    cd_norm,
    rho_out,
    grad_out,
):
    """Bump density and gradient sums using a 2d cell list (width >= eps_p).

    Traversal is cell-lexicographic with ascending particle order inside each
    cell, so the result is deterministic for any thread count.  Output is the
    raw sums divided by N; the pressure chain rule is applied by the caller.
    """
    n = pos.shape[0]
    ep2 = eps_p * eps_p
    inv_ep2 = 1.0 / ep2
    inv_ep4 = inv_ep2 * inv_ep2
    self_v = cd_norm * np.exp(-1.0) * inv_ep2
    for i in prange(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        cx = int((xi - ox) / width)
        cy = int((yi - oy) / width)
        if cx < 0:
            cx = 0
        if cx > ncx - 1:
            cx = ncx - 1
        if cy < 0:
            cy = 0
        if cy > ncy - 1:
            cy = ncy - 1
        rho = 0.0
        gx = 0.0
        gy = 0.0
        for ax in range(max(0, cx - 1), min(ncx, cx + 2)):
            for ay in range(max(0, cy - 1), min(ncy, cy + 2)):
                c = ax * ncy + ay
                for slot in range(cell_start[c], cell_end[c]):
                    j = order[slot]
                    if j == i:
                        # keep the self term in traversal order so a single
                        # occupied cell reproduces the direct sum bit for bit
                        rho += self_v
                        continue
                    dx = xi - pos[j, 0]
                    dy = yi - pos[j, 1]
                    r2 = dx * dx + dy * dy
                    if r2 < ep2:
                        if r2 > 0.0:
                            om = 1.0 - r2 * inv_ep2
                            e = np.exp(-1.0 / om)
                            rho += cd_norm * e * inv_ep2
                            gfac = -2.0 * cd_norm * e / (om * om) * inv_ep4
                            gx += gfac * dx
                            gy += gfac * dy
                        else:
                            rho += self_v
        rho_out[i] = rho / n
        grad_out[i, 0] = gx / n
        grad_out[i, 1] = gy / n


@njit(cache=True, parallel=True)
def repulsion_direct_2d(pos, eps_p, cd_norm, rho_out, grad_out):
    """Direct O(N^2) bump density and gradient sums (reference for the cell path)."""
    n = pos.shape[0]
    ep2 = eps_p * eps_p
    inv_ep2 = 1.0 / ep2
    inv_ep4 = inv_ep2 * inv_ep2
    self_v = cd_norm * np.exp(-1.0) * inv_ep2
    for i in prange(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        rho = 0.0
        gx = 0.0
        gy = 0.0
        for j in range(n):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            r2 = dx * dx + dy * dy
            if r2 < ep2:
                if r2 > 0.0:
                    om = 1.0 - r2 * inv_ep2
                    e = np.exp(-1.0 / om)
                    rho += cd_norm * e * inv_ep2
                    gfac = -2.0 * cd_norm * e / (om * om) * inv_ep4
                    gx += gfac * dx
                    gy += gfac * dy
                else:
                    rho += self_v
        rho_out[i] = rho / n
        grad_out[i, 0] = gx / n
        grad_out[i, 1] = gy / n
