"""Exact linearization of the forward scheme along a frozen trajectory.

``linearized_drift`` is the literal Jacobian of the discrete drift
assembly (same masks, same collocation products), so the tangent
recursion differentiates the scheme rather than discretizing a formal
linearized equation.  ``linearized_drift_T`` is its machine-precision
L2 transpose on the solenoidal subspace: convective terms are
transposed operator by operator (spectral derivatives flip sign,
collocation multipliers are symmetric), while both stress terms are
self-adjoint and reuse the forward assembly.
"""

from __future__ import annotations

import numpy as np

from . import noise as nz
from . import spectral as sp
from .forward import SimConfig


def _conv_linearized(grid, y, z, params):
    """Derivative of the convective pair in direction z, mask2-dealiased."""
    yq = y * grid.mask2
    zq = z * grid.mask2
    vy = sp.v_apply(grid, yq, params)
    vz = sp.v_apply(grid, zq, params)
    yp = sp.to_phys(grid, yq)
    zp = sp.to_phys(grid, zq)
    vyp = sp.to_phys(grid, vy)
    vzp = sp.to_phys(grid, vz)
    Jy = sp.jacobian_phys(grid, yq)
    Jz = sp.jacobian_phys(grid, zq)
    Jvy = sp.jacobian_phys(grid, vy)
    Jvz = sp.jacobian_phys(grid, vz)

    t = (
        -sp.advect(grid, yp, Jvz)
        - sp.advect(grid, zp, Jvy)
        - sp.cograd(grid, vzp, Jy)
        - sp.cograd(grid, vyp, Jz)
    )
    return (np.fft.fftn(t, axes=grid.axes) / grid.npts) * grid.mask2


def _conv_linearized_T(grid, y, w, params):
    """Exact transpose of _conv_linearized in its z slot (w solenoidal)."""
    yq = y * grid.mask2
    vy = sp.v_apply(grid, yq, params)
    wq = w * grid.mask2
    yp = sp.to_phys(grid, yq)
    vyp = sp.to_phys(grid, vy)
    wp = sp.to_phys(grid, wq)
    Jy = sp.jacobian_phys(grid, yq)
    Jvy = sp.jacobian_phys(grid, vy)
    vmul = 1.0 + params.alpha1 * grid.k2

    # transpose of -(y.grad) v(z): + v Mq div_i(w_a y_i)
    t1 = vmul * (sp.div_matrix_spec(grid, sp.outer_phys(grid, wp, yp)) * grid.mask2)
    # transpose of -(z.grad) v(y): comp i = - sum_a (d_i v(y)_a) w_a
    g2 = -sp.cograd(grid, wp, Jvy)
    t2 = (np.fft.fftn(g2, axes=grid.axes) / grid.npts) * grid.mask2
    # transpose of -sum_j v(z)_j grad y_j: comp j = -v Mq spec((w . grad) y_j)
    g3 = -sp.advect(grid, wp, Jy)
    t3 = vmul * ((np.fft.fftn(g3, axes=grid.axes) / grid.npts) * grid.mask2)
    # transpose of -sum_j v(y)_j grad z_j: comp j = + div_i(v(y)_j w_i)
    t4 = sp.div_matrix_spec(grid, sp.outer_phys(grid, vyp, wp)) * grid.mask2
    return t1 + t2 + t3 + t4


def _stress_linearized(grid, y, z, params):
    """Directional derivative of both stress terms; self-adjoint in z."""
    out = 0.0
    ci = -grid.dim - 1
    a12 = params.alpha1 + params.alpha2
    if a12 != 0.0:
        Ay = sp.deformation_phys(grid, y * grid.mask2)
        Az = sp.deformation_phys(grid, z * grid.mask2)
        if grid.dim == 2:
            S = np.einsum("...acxy,...cbxy->...abxy", Ay, Az) + np.einsum(
                "...acxy,...cbxy->...abxy", Az, Ay
            )
        else:
            S = np.einsum("...acxyz,...cbxyz->...abxyz", Ay, Az) + np.einsum(
                "...acxyz,...cbxyz->...abxyz", Az, Ay
            )
        out = out + a12 * sp.div_matrix_spec(grid, S) * grid.mask2
    if params.beta != 0.0:
        Ay = sp.deformation_phys(grid, y * grid.mask3)
        Az = sp.deformation_phys(grid, z * grid.mask3)
        dot = np.sum(Ay * Az, axis=(ci, ci - 1), keepdims=True)
        norm2 = np.sum(Ay * Ay, axis=(ci, ci - 1), keepdims=True)
        out = out + params.beta * sp.div_matrix_spec(grid, 2.0 * dot * Ay + norm2 * Az) * grid.mask3
    return out


def linearized_drift(grid, y, z, psi, params, include_viscosity=True):
    out = _conv_linearized(grid, y, z, params) + _stress_linearized(grid, y, z, params)
    if include_viscosity:
        out = out - params.nu * grid.k2 * z
    if psi is not None:
        out = out + psi
    return sp.leray_project(grid, out)


def linearized_drift_T(grid, y, w, params, include_viscosity=True):
    wq = sp.leray_project(grid, w)
    out = _conv_linearized_T(grid, y, wq, params) + _stress_linearized(
        grid, y, wq, params
    )
    if include_viscosity:
        out = out - params.nu * grid.k2 * wq
    return sp.leray_project(grid, out)


# ---------------------------------------------------------------------------
# tangent recursion


def tangent_step(y, z, psi_n, dW_n, t, cfg: SimConfig):
    """Jacobian of the forward step at base state y, applied to z (+ psi)."""
    g = cfg.grid
    ex = linearized_drift(g, y, z, psi_n, cfg.params, include_viscosity=False)
    rhs = sp.v_apply(g, z, cfg.params) + cfg.dt * ex
    if cfg.model.K > 0:
        rhs = rhs + nz.grad_noise_increment(g, t, y, z, dW_n, cfg.model)
    return sp.leray_project(g, rhs / cfg.implicit_denominator)


def transpose_step(y, p, dW_n, t, cfg: SimConfig):
    """F_n^T p for the tangent propagator F_n at base state y."""
    g = cfg.grid
    q = sp.leray_project(g, p / cfg.implicit_denominator)
    out = sp.v_apply(g, q, cfg.params) + cfg.dt * linearized_drift_T(
        g, y, q, cfg.params, include_viscosity=False
    )
    if cfg.model.K > 0:
        out = out + nz.grad_noise_increment_T(g, t, y, q, dW_n, cfg.model)
    return out


def control_to_state(p, cfg: SimConfig):
    """S^T p: how a unit control impulse at one step pairs with the costate."""
    g = cfg.grid
    return sp.leray_project(g, p / cfg.implicit_denominator)


def simulate_tangent(fields, stop, psi, dW, cfg: SimConfig, store=True):
    """Tangent trajectory along a frozen base ensemble.

    ``fields`` is (S, steps+1, dim, *spatial), ``stop`` the per-sample
    exit indices, ``psi`` a deterministic direction (steps, dim, *sp),
    ``dW`` the same increments the base run consumed.  z starts at zero
    and is frozen once the base sample has stopped.
    """
    g = cfg.grid
    S = fields.shape[0]
    z = np.zeros((S, g.dim) + g.shape, dtype=complex)
    out = None
    if store:
        out = np.zeros((S, cfg.steps + 1, g.dim) + g.shape, dtype=complex)
    bsel = (slice(None),) + (None,) * (g.dim + 1)
    for n in range(cfg.steps):
        active = stop > n
        if active.any():
            yn = np.asarray(fields[:, n], dtype=complex)
            pn = None if psi is None else np.asarray(psi)[n]
            z_next = tangent_step(yn, z, pn, dW[:, n], n * cfg.dt, cfg)
            z = np.where(active[bsel], z_next, z)
        if store:
            out[:, n + 1] = z
    return (out, z) if store else (None, z)


def gateaux_check(y0, U, psi, cfg: SimConfig, rhos, n_samples: int):
    """Finite-difference convergence of the tangent representation.

    For each rho compares (y(U + rho psi) - y(U)) / rho with z in the
    sup-over-time V norm, averaged over samples, and fits the log-log
    slope (2 is exact first-order consistency of the Jacobian, anything
    well above 1 witnesses the quadratic remainder).
    """
    from .forward import simulate_ensemble

    g = cfg.grid
    dW = nz.sample_paths(cfg.seed, n_samples, cfg.dt, cfg.steps, cfg.model.K)
    base = simulate_ensemble(y0, U, dW, cfg)
    ztraj, _ = simulate_tangent(base.fields, base.stop, psi, dW, cfg)
    wv = 1.0 + cfg.params.alpha1 * g.k2
    errs = []
    for rho in rhos:
        Up = np.asarray(psi) * rho if U is None else np.asarray(U) + rho * np.asarray(psi)
        pert = simulate_ensemble(y0, Up, dW, cfg)
        nmin = np.minimum(base.stop, pert.stop)
        worst = np.zeros(n_samples)
        for n in range(cfg.steps + 1):
            diff = (
                np.asarray(pert.fields[:, n], dtype=complex)
                - np.asarray(base.fields[:, n], dtype=complex)
            ) / rho - ztraj[:, n]
            v2 = sp.sobolev_inner(g, diff, diff, wv)
            worst = np.where(nmin >= n, np.maximum(worst, v2), worst)
        errs.append(float(np.mean(worst)))
    lr = np.log(np.asarray(rhos, dtype=float))
    le = np.log(np.maximum(np.asarray(errs), 1e-300))
    slope = float(np.polyfit(lr, le, 1)[0])
    return {"rhos": list(map(float, rhos)), "errors": errs, "slope": slope}
