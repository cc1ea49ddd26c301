"""Numba kernels for the Euler scheme and streaming phase aggregation.

All kernels share one state-update expression so a path simulated in a
batch is bit-identical to the same path simulated alone.  Coefficient
kinds are passed as integer codes: 0 = constant, 1 = affine,
2 = bounded_rational.
"""

import numba
import numpy as np

KIND_CONSTANT = 0
KIND_AFFINE = 1
KIND_BOUNDED_RATIONAL = 2


@numba.njit(inline="always", cache=True)
def _coef(kind, p0, p1, x):
    if kind == KIND_CONSTANT:
        return p0
    if kind == KIND_AFFINE:
        return p0 - p1 * x
    return p0 + p1 / (1.0 + x * x)


@numba.njit(cache=True)
def record_chunk(x, start_step, spp, dt, sqdt, s_phase,
                 b_kind, b0, b1, g_kind, g0, g1, noise, out):
    """Evolve states x (B,), recording every point into out (n+1, B).

    Returns the step index of the first non-finite value, or -1.
    """
    n = noise.shape[0]
    B = x.shape[0]
    for r in range(B):
        out[0, r] = x[r]
    for i in range(n):
        j = (start_step + i) % spp
        s = s_phase[j]
        for r in range(B):
            xi = x[r]
            bx = _coef(b_kind, b0, b1, xi)
            sg = _coef(g_kind, g0, g1, xi)
            xi = xi + (s + bx) * dt + sg * sqdt * noise[i, r]
            x[r] = xi
            out[i + 1, r] = xi
        for r in range(B):
            if not np.isfinite(x[r]):
                return i
    return -1


@numba.njit(cache=True)
def evolve_chunk(x, start_step, spp, dt, sqdt, s_phase,
                 b_kind, b0, b1, g_kind, g0, g1, noise):
    """Evolve states x (B,) in place without recording; returns the step
    index of the first non-finite value, or -1."""
    n = noise.shape[0]
    B = x.shape[0]
    for i in range(n):
        j = (start_step + i) % spp
        s = s_phase[j]
        for r in range(B):
            xi = x[r]
            bx = _coef(b_kind, b0, b1, xi)
            sg = _coef(g_kind, g0, g1, xi)
            x[r] = xi + (s + bx) * dt + sg * sqdt * noise[i, r]
        for r in range(B):
            if not np.isfinite(x[r]):
                return i
    return -1


@numba.njit(cache=True)
def phase_sums_chunk(x, start_step, spp, dt, sqdt, s_true, s_ref, weight_phase,
                     b_kind, b0, b1, g_kind, g0, g1, noise, G, H):
    """Evolve states and accumulate, per phase cell j and replicate r,

        G[j, r] += (w_j / sigma(x)) * dB_ref   and
        H[j, r] += (w_j / sigma(x))**2,

    where dB_ref is the Brownian increment recovered under the reference
    signal s_ref while the path is driven by s_true.  Integrands are
    evaluated at the left endpoint of each step; finiteness is checked by
    the caller (NaN propagates into x).  G and H are (spp, B) so each step
    touches one contiguous row.
    """
    n = noise.shape[0]
    B = x.shape[0]
    for i in range(n):
        j = (start_step + i) % spp
        s = s_true[j]
        ds = (s - s_ref[j]) * dt
        wj = weight_phase[j]
        for r in range(B):
            xi = x[r]
            bx = _coef(b_kind, b0, b1, xi)
            sg = _coef(g_kind, g0, g1, xi)
            z = noise[i, r]
            db = sqdt * z + ds / sg
            w = wj / sg
            G[j, r] += w * db
            H[j, r] += w * w
            x[r] = xi + (s + bx) * dt + sg * sqdt * z
    return 0


@numba.njit(cache=True)
def running_max_abs_dev_chunk(x, x_anchor, run_max, start_step, spp, dt, sqdt,
                              s_phase, b_kind, b0, b1, g_kind, g0, g1, noise):
    """Evolve states, tracking sup |x_t - x_anchor| per replicate."""
    n = noise.shape[0]
    B = x.shape[0]
    for i in range(n):
        j = (start_step + i) % spp
        s = s_phase[j]
        for r in range(B):
            xi = x[r]
            bx = _coef(b_kind, b0, b1, xi)
            sg = _coef(g_kind, g0, g1, xi)
            xi = xi + (s + bx) * dt + sg * sqdt * noise[i, r]
            x[r] = xi
            dev = abs(xi - x_anchor[r])
            if dev > run_max[r]:
                run_max[r] = dev
    return 0
