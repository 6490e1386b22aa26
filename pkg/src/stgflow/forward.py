"""Semi-implicit Euler-Maruyama solver with first-exit stopping.

One step of the scheme solves, mode by mode,

    (1 + alpha1 |k|^2 + dt nu |k|^2) y^+ = (1 + alpha1 |k|^2) y
        + dt (N(y) + U) + G(t, y) dW,

i.e. the viscous part of the drift is implicit through the v-map while
the quadratic/cubic terms, the control and the noise stay explicit.

Each sample is stopped the first time its collocation W^{2,4} norm
reaches the threshold M; the state is frozen from the crossing index on,
matching the stopped process the cost functional integrates.  A sample
whose norm overshoots ``blowup_factor * M`` (or goes non-finite) is
marked aborted and frozen at its last finite state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import noise as nz
from . import spectral as sp


@dataclass(frozen=True)
class SimConfig:
    dim: int
    n_max: int
    dt: float
    steps: int
    params: sp.PhysicalParams
    model: nz.NoiseModel
    M: float = 10.0
    p_exp: float = 8.0
    seed: int = 0
    blowup_factor: float = 10.0

    def __post_init__(self):
        if self.dt <= 0 or self.steps < 1:
            raise ValueError("need dt > 0 and steps >= 1")
        if self.p_exp <= 2 * (self.dim + 1):
            raise ValueError(
                f"p_exp must exceed 2*(dim+1) = {2 * (self.dim + 1)}, got {self.p_exp}"
            )
        if self.M <= 0:
            raise ValueError("stopping threshold M must be positive")

    @property
    def T(self):
        return self.dt * self.steps

    @cached_property
    def grid(self) -> sp.WaveGrid:
        return sp.WaveGrid(self.dim, self.n_max)

    @cached_property
    def implicit_denominator(self):
        g = self.grid
        return 1.0 + self.params.alpha1 * g.k2 + self.dt * self.params.nu * g.k2


@dataclass
class Trajectory:
    """Single-sample record: fields[n] is the stopped state at t = n dt."""

    fields: np.ndarray  # (steps+1, dim, *spatial) complex
    stop_index: int
    w24_trace: np.ndarray  # (steps+1,)
    aborted: bool = False


@dataclass
class EnsembleResult:
    fields: np.ndarray | None  # (S, steps+1, dim, *spatial) or None
    stop: np.ndarray  # (S,) int, stop index in [0, steps]
    w24: np.ndarray  # (S, steps+1)
    aborted: np.ndarray  # (S,) bool
    final: np.ndarray = field(default=None, repr=False)  # (S, dim, *spatial)

    @property
    def n_samples(self):
        return self.stop.shape[0]


def step(y, u_n, dW_n, t, cfg: SimConfig):
    """One scheme step, batched over any leading sample axes of ``y``."""
    g = cfg.grid
    ex = sp.state_drift(g, y, u_n, cfg.params, include_viscosity=False)
    rhs = sp.v_apply(g, y, cfg.params) + cfg.dt * ex
    if cfg.model.K > 0:
        rhs = rhs + nz.noise_increment(g, t, y, dW_n, cfg.model)
    return sp.leray_project(g, rhs / cfg.implicit_denominator)


def _control_at(U, n):
    if U is None:
        return None
    return np.asarray(U)[n]


def simulate_ensemble(
    y0,
    U,
    dW,
    cfg: SimConfig,
    store_fields: bool = True,
    store_dtype=np.complex128,
) -> EnsembleResult:
    """Run S coupled samples; dW has shape (S, steps, K).

    ``y0`` is a single field or a batch (S, dim, *spatial); ``U`` is a
    deterministic control array (steps, dim, *spatial) or None.
    """
    g = cfg.grid
    dW = np.asarray(dW)
    S = dW.shape[0]
    y = np.broadcast_to(np.asarray(y0, dtype=complex), (S, g.dim) + g.shape).copy()

    stop = np.full(S, cfg.steps, dtype=int)
    aborted = np.zeros(S, dtype=bool)
    w24 = np.empty((S, cfg.steps + 1))
    w24[:, 0] = sp.w24_norm(g, y)
    stop[w24[:, 0] >= cfg.M] = 0

    fields = None
    if store_fields:
        fields = np.empty((S, cfg.steps + 1, g.dim) + g.shape, dtype=store_dtype)
        fields[:, 0] = y

    bsel = (slice(None),) + (None,) * (g.dim + 1)
    for n in range(cfg.steps):
        active = stop > n
        if active.any() and not aborted.all():
            y_next = step(y, _control_at(U, n), dW[:, n], n * cfg.dt, cfg)
            w_next = sp.w24_norm(g, y_next)
            bad = active & (~np.isfinite(w_next) | (w_next > cfg.blowup_factor * cfg.M))
            if bad.any():
                aborted |= bad
                stop[bad] = n
            accept = active & ~bad
            y = np.where(accept[bsel], y_next, y)
            crossed = accept & (w_next >= cfg.M)
            stop[crossed] = n + 1
            w24[:, n + 1] = np.where(accept, w_next, w24[:, n])
        else:
            w24[:, n + 1] = w24[:, n]
        if store_fields:
            fields[:, n + 1] = y

    return EnsembleResult(fields=fields, stop=stop, w24=w24, aborted=aborted, final=y)


def simulate(y0, U, path: nz.WienerPath, cfg: SimConfig) -> Trajectory:
    res = simulate_ensemble(y0, U, path.increments[None], cfg)
    return Trajectory(
        fields=res.fields[0],
        stop_index=int(res.stop[0]),
        w24_trace=res.w24[0],
        aborted=bool(res.aborted[0]),
    )


def run_ensemble(y0, U, cfg: SimConfig, n_samples: int, **kw) -> EnsembleResult:
    dW = nz.sample_paths(cfg.seed, n_samples, cfg.dt, cfg.steps, cfg.model.K)
    return simulate_ensemble(y0, U, dW, cfg, **kw)


# ---------------------------------------------------------------------------
# energy functionals and probes


def _ci(x):
    x = np.asarray(x, dtype=float)
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
    return {"mean": m, "ci95": 1.96 * se}


def energy_stats(res: EnsembleResult, cfg: SimConfig):
    """Monte Carlo estimates of the a priori energy functionals.

    sup norms run over n <= stop, time integrals over n < stop (the
    stopped trajectory contributes nothing after its exit).
    """
    if res.fields is None:
        raise ValueError("energy_stats needs store_fields=True")
    g = cfg.grid
    S = res.n_samples
    wv = 1.0 + cfg.params.alpha1 * g.k2
    sup_v2 = np.zeros(S)
    int_grad2 = np.zeros(S)
    int_a4 = np.zeros(S)
    sup_wt_p = np.zeros(S)
    for n in range(cfg.steps + 1):
        yn = np.asarray(res.fields[:, n], dtype=complex)
        upto = res.stop >= n
        v2 = sp.sobolev_inner(g, yn, yn, wv)
        wt2 = v2 + sp.sobolev_inner(g, yn, yn, g.k2 * wv**2)
        sup_v2 = np.where(upto, np.maximum(sup_v2, v2), sup_v2)
        sup_wt_p = np.where(upto, np.maximum(sup_wt_p, wt2 ** (cfg.p_exp / 2)), sup_wt_p)
        if n < cfg.steps:
            live = res.stop > n
            # 2 ||D y||^2 = ||grad y||^2 for solenoidal fields
            grad2 = 0.5 * sp.sobolev_inner(g, yn, yn, g.k2)
            A = sp.deformation_phys(g, yn * g.mask3)
            a4 = sp.quad_integral(g, np.sum(A**2, axis=(-g.dim - 1, -g.dim - 2)) ** 2)
            int_grad2 += np.where(live, cfg.dt * grad2, 0.0)
            int_a4 += np.where(live, cfg.dt * a4, 0.0)
    counts = np.bincount(res.stop, minlength=cfg.steps + 1)
    return {
        "sup_v_sq": _ci(sup_v2),
        "int_sym_grad_sq": _ci(int_grad2),
        "int_deformation_4": _ci(int_a4),
        "sup_wtilde_p": _ci(sup_wt_p),
        "stop_histogram": counts.tolist(),
        "aborted": int(np.sum(res.aborted)),
    }


def stability_probe(y0, U1, U2, cfg: SimConfig, n_samples: int, p: float = 2.0, eps: float = 0.5):
    """Ratio of state separation to control separation under common noise.

    Returns E sup ||y1 - y2||_V^p over [0, tau1 ^ tau2] divided by
    E int_0^{tau1 ^ tau2} ||U1 - U2||_{L2}^p dt, plus the same ratio in
    the W norm with exponent 2 + eps.
    """
    g = cfg.grid
    dW = nz.sample_paths(cfg.seed, n_samples, cfg.dt, cfg.steps, cfg.model.K)
    r1 = simulate_ensemble(y0, U1, dW, cfg)
    r2 = simulate_ensemble(y0, U2, dW, cfg)
    taumin = np.minimum(r1.stop, r2.stop)
    wv = 1.0 + cfg.params.alpha1 * g.k2
    dU = np.asarray(U1) - np.asarray(U2)
    du2 = sp.l2_inner(g, dU, dU)  # (steps,)

    sup_v = np.zeros(n_samples)
    sup_w = np.zeros(n_samples)
    den_v = np.zeros(n_samples)
    den_w = np.zeros(n_samples)
    for n in range(cfg.steps + 1):
        d = np.asarray(r1.fields[:, n] - r2.fields[:, n], dtype=complex)
        v2 = sp.sobolev_inner(g, d, d, wv)
        w2 = v2 + sp.sobolev_inner(g, d, d, wv**2)
        upto = taumin >= n
        sup_v = np.where(upto, np.maximum(sup_v, v2 ** (p / 2)), sup_v)
        sup_w = np.where(upto, np.maximum(sup_w, w2 ** ((2 + eps) / 2)), sup_w)
        if n < cfg.steps:
            live = taumin > n
            den_v += np.where(live, cfg.dt * du2[n] ** (p / 2), 0.0)
            den_w += np.where(live, cfg.dt * du2[n] ** ((2 + eps) / 2), 0.0)
    ev, edv = np.mean(sup_v), np.mean(den_v)
    ew, edw = np.mean(sup_w), np.mean(den_w)
    return {
        "ratio_v": float(ev / edv) if edv > 0 else np.inf,
        "ratio_w": float(ew / edw) if edw > 0 else np.inf,
        "num_v": float(ev),
        "den_v": float(edv),
        "p": p,
        "eps": eps,
    }


def stability_sweep(y0, U1, U2, cfg: SimConfig, n_samples: int, scales, p: float = 2.0, eps: float = 0.5):
    """stability_probe along U2_s = U1 + s (U2 - U1) for each scale s.

    Same noise bank throughout (cfg.seed), so ratios across the sweep
    share common random numbers.
    """
    dU = np.asarray(U2) - np.asarray(U1)
    out = []
    for s in scales:
        rep = stability_probe(y0, U1, np.asarray(U1) + s * dU, cfg, n_samples, p, eps)
        rep["scale"] = float(s)
        out.append(rep)
    return out


def stop_time_probe(y0, U, dU, cfg: SimConfig, n_samples: int, rhos):
    """Probability that the exit index moves under a control perturbation.

    For each rho, runs U + rho dU with the same noise as the base run and
    reports P(stop differs) and P / rho.
    """
    dW = nz.sample_paths(cfg.seed, n_samples, cfg.dt, cfg.steps, cfg.model.K)
    base = simulate_ensemble(y0, U, dW, cfg, store_fields=False)
    out = []
    for rho in rhos:
        Up = np.asarray(U) + rho * np.asarray(dU) if U is not None else rho * np.asarray(dU)
        pert = simulate_ensemble(y0, Up, dW, cfg, store_fields=False)
        p = float(np.mean(pert.stop != base.stop))
        out.append({"rho": float(rho), "prob": p, "prob_over_rho": p / rho})
    return out
