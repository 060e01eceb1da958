"""Interacting particle system: aggregation drift, cutoff repulsion, and
Euler-Maruyama stepping with counter-based noise.

The drift on particle i is the mean over j of the mollified potential
gradient at x_i - x_j, minus the pressure chain rule applied to the
smoothed empirical density at x_i.  All drifts of a step are evaluated
on the frozen step-start positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, cached_property

import numpy as np

from . import _fastmath
from .errors import BlowUpError, ConfigError
from .kernels import _unit_mass_table, coulomb_constant, mollifier_normalize, bump_profile
from .noise import NoiseStream
from .nonlinearity import CutoffPressure


@dataclass(frozen=True)
class KernelParams:
    """Regularization bundle: dimension, pressure exponent, widths, cutoff, noise."""

    d: int
    m: float
    eps_k: float
    eps_p: float
    lam: float
    sigma: float = 0.0

    def violations(self):
        out = []
        if self.d < 2:
            out.append(f"d must be >= 2, got {self.d}")
        if not (self.m == 2.0 or self.m >= 3.0):
            out.append(f"m must be 2 or >= 3, got {self.m}")
        if self.eps_k <= 0 or self.eps_p <= 0:
            out.append("eps_k and eps_p must be positive")
        if not (0.0 < self.lam < 0.5):
            out.append(f"lam must lie in (0, 1/2), got {self.lam}")
        elif self.eps_p > 0 and self.lam > 0.5 * self.eps_p**self.d + 1e-12:
            out.append(
                f"lam={self.lam} exceeds eps_p^d/2={0.5 * self.eps_p ** self.d}"
                " (cutoff bands would overlap the smoothing scale)"
            )
        if self.sigma < 0:
            out.append(f"sigma must be >= 0, got {self.sigma}")
        return out

    def validate(self):
        bad = self.violations()
        if bad:
            raise ConfigError(bad)
        return self

    @cached_property
    def cutoff(self) -> CutoffPressure:
        return CutoffPressure(self.m, self.lam)


@dataclass
class ParticleEnsemble:
    """Positions of N particles in R^d at one time instant."""

    positions: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2:
            raise ValueError("positions must have shape (N, d)")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.positions.copy(), self.t)


@dataclass(frozen=True)
class SimConfig:
    """Full description of one interacting-system run."""

    params: KernelParams
    n_particles: int
    t_end: float
    dt: float | None = None
    seed: int = 0
    replications: int = 1
    initial: object = None  # InitialDatum from the pde module; None = unit gaussian
    include_aggregation: bool = True
    include_repulsion: bool = True
    drift_mode: str = "direct"  # or "cell"

    def violations(self):
        out = self.params.violations()
        if self.n_particles < 1:
            out.append("n_particles must be >= 1")
        if self.t_end < 0:
            out.append("t_end must be >= 0")
        if self.dt is not None and self.dt <= 0:
            out.append("dt must be positive")
        elif self.dt is not None and not out:
            # the cap needs valid kernel parameters to evaluate
            cap = em_stability_cap(self.params)
            if self.dt > cap * (1 + 1e-9):
                out.append(f"dt={self.dt} exceeds the stability cap {cap:.3e}")
        if self.replications < 1:
            out.append("replications must be >= 1")
        if self.drift_mode not in ("direct", "cell"):
            out.append(f"drift_mode must be 'direct' or 'cell', got {self.drift_mode!r}")
        return out

    def validate(self) -> "SimConfig":
        bad = self.violations()
        if bad:
            raise ConfigError(bad)
        return self


@lru_cache(maxsize=None)
def _grad_bump_sup(d: int) -> float:
    """sup |grad V| of the unit mollifier, scanned on a fine radial grid."""
    r = np.linspace(0.0, 1.0, 20001)
    om = np.clip(1.0 - r * r, 1e-12, None)
    vals = 2.0 * mollifier_normalize(d) * r * bump_profile(r) / om**2
    return float(np.max(vals))


def em_stability_cap(params: KernelParams) -> float:
    """Largest explicit step the pairwise drift Lipschitz scalings allow.

    Matches the kernel bounds 1/eps_k^d and 1/eps_p^{d+2}; the pressure
    curvature factor uses sup |p''| over the coincidence range (zero for
    m = 2) because the blend bands are slivers of width lambda that do not
    set the bulk stiffness.
    """
    d = params.d
    sup_p2 = params.cutoff.coincidence_sup_second()
    denom = 1.0 + sup_p2 * _grad_bump_sup(d) ** 2 / params.eps_p**2
    return 0.1 * min(params.eps_p ** (d + 2) / denom, params.eps_k**d)


def _pressure_tables(cp: CutoffPressure):
    return (
        np.ascontiguousarray(cp.low_d1, dtype=np.float64),
        np.ascontiguousarray(cp.high_d1, dtype=np.float64),
    )


def drift_all_direct(positions, params: KernelParams, include_aggregation=True, include_repulsion=True):
    """Direct O(N^2) drift for every particle; returns (drift (N,d), density (N,))."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    n, d = pos.shape
    values, derivs = _unit_mass_table(d)
    cd = mollifier_normalize(d)
    low_d1, high_d1 = _pressure_tables(params.cutoff)
    out = np.empty_like(pos)
    rho = np.empty(n)
    if d == 2:
        _fastmath.drift_2d(
            pos, params.eps_k, params.eps_p, values, derivs, cd,
            params.m, params.lam, low_d1, high_d1,
            include_aggregation, include_repulsion, out, rho,
        )
    else:
        agg_coef = 1.0 / (2.0 * np.pi) if d == 2 else (d - 2) * coulomb_constant(d)
        _fastmath.drift_nd(
            pos, params.eps_k, params.eps_p, values, derivs, cd, agg_coef,
            params.m, params.lam, low_d1, high_d1,
            include_aggregation, include_repulsion, out, rho,
        )
    return out, rho


def _build_cells_2d(pos, width):
    mins = pos.min(axis=0)
    maxs = pos.max(axis=0)
    extent = np.maximum(maxs - mins, 1e-300)
    # keep the grid at a sane size even for widely scattered points
    eff = max(width, float(np.max(extent)) / 1024.0)
    ncx = int(extent[0] / eff) + 1
    ncy = int(extent[1] / eff) + 1
    cx = np.minimum(((pos[:, 0] - mins[0]) / eff).astype(np.int64), ncx - 1)
    cy = np.minimum(((pos[:, 1] - mins[1]) / eff).astype(np.int64), ncy - 1)
    flat = cx * ncy + cy
    order = np.argsort(flat, kind="stable").astype(np.int64)
    sorted_flat = flat[order]
    ncells = ncx * ncy
    cell_start = np.searchsorted(sorted_flat, np.arange(ncells), side="left").astype(np.int64)
    cell_end = np.searchsorted(sorted_flat, np.arange(ncells), side="right").astype(np.int64)
    return order, cell_start, cell_end, ncx, ncy, float(mins[0]), float(mins[1]), eff


def repulsion_sums_cell(positions, eps_p, cell_width=None):
    """Cell-list evaluation of the smoothed density and its gradient sum (d = 2)."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    n, d = pos.shape
    if d != 2:
        raise ConfigError("the cell-list path is implemented for d = 2")
    width = eps_p if cell_width is None else float(cell_width)
    if width < eps_p:
        raise ConfigError(f"cell width {width} is smaller than eps_p={eps_p}")
    order, cell_start, cell_end, ncx, ncy, ox, oy, eff = _build_cells_2d(pos, width)
    rho = np.empty(n)
    grad = np.empty_like(pos)
    _fastmath.repulsion_cells_2d(
        pos, order, cell_start, cell_end, ncx, ncy, ox, oy, eff,
        eps_p, mollifier_normalize(2), rho, grad,
    )
    return rho, grad


def repulsion_sums_direct(positions, eps_p):
    """Direct O(N^2) evaluation of the smoothed density and its gradient sum (d = 2)."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    n, d = pos.shape
    if d != 2:
        raise ConfigError("the direct repulsion helper is implemented for d = 2")
    rho = np.empty(n)
    grad = np.empty_like(pos)
    _fastmath.repulsion_direct_2d(pos, eps_p, mollifier_normalize(2), rho, grad)
    return rho, grad


def drift_all_celllist(positions, params: KernelParams, include_aggregation=True, include_repulsion=True, cell_width=None):
    """Drift with the repulsion sums routed through the cell list.

    The aggregation kernel has unbounded support so it keeps the direct
    O(N^2) loop; only the compactly supported bump sums use cells.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    out = np.zeros_like(pos)
    rho = np.zeros(pos.shape[0])
    if include_aggregation:
        out, _ = drift_all_direct(pos, params, include_aggregation=True, include_repulsion=False)
    if include_repulsion:
        rho, grad = repulsion_sums_cell(pos, params.eps_p, cell_width)
        out = out - params.cutoff.prime(rho)[:, None] * grad
    return out, rho


def drift_all(positions, params: KernelParams, include_aggregation=True, include_repulsion=True, mode="direct"):
    if mode == "cell":
        return drift_all_celllist(positions, params, include_aggregation, include_repulsion)
    return drift_all_direct(positions, params, include_aggregation, include_repulsion)


def aggregation_drift(ensemble: ParticleEnsemble, i: int, eps_k: float):
    """Mean mollified-gradient pull on particle i (self term contributes zero)."""
    params = KernelParams(d=ensemble.d, m=2.0, eps_k=eps_k, eps_p=1.0, lam=0.25)
    drift, _ = drift_all_direct(ensemble.positions, params, include_repulsion=False)
    return drift[i]


def mollified_empirical_density(ensemble: ParticleEnsemble, i: int, eps_p: float):
    """Smoothed empirical density at particle i (includes the self term V(0)/N)."""
    params = KernelParams(d=ensemble.d, m=2.0, eps_k=1.0, eps_p=eps_p, lam=min(0.25, eps_p**ensemble.d / 2))
    _, rho = drift_all_direct(ensemble.positions, params, include_aggregation=False)
    return float(rho[i])


def repulsion_drift(ensemble: ParticleEnsemble, i: int, eps_p: float, cp: CutoffPressure):
    """Pressure chain-rule drift on particle i."""
    params = KernelParams(d=ensemble.d, m=cp.m, eps_k=1.0, eps_p=eps_p, lam=cp.lam)
    drift, _ = drift_all_direct(ensemble.positions, params, include_aggregation=False)
    return drift[i]


def em_step(
    ensemble: ParticleEnsemble,
    dt: float,
    params: KernelParams,
    noise_block,
    step: int,
    include_aggregation=True,
    include_repulsion=True,
    mode="direct",
) -> ParticleEnsemble:
    """One Euler-Maruyama step from the frozen step-start state."""
    drift, _ = drift_all(
        ensemble.positions, params, include_aggregation, include_repulsion, mode
    )
    new_pos = ensemble.positions + dt * drift
    if params.sigma > 0.0:
        new_pos = new_pos + np.sqrt(2.0 * params.sigma * dt) * noise_block
    if not np.all(np.isfinite(new_pos)):
        bad = int(np.argwhere(~np.isfinite(new_pos).all(axis=1))[0][0])
        raise BlowUpError(bad, step)
    return ParticleEnsemble(new_pos, ensemble.t + dt)


def resolve_dt(config: SimConfig) -> tuple[float, int]:
    """Step size landing exactly on t_end, within the stability cap."""
    cap = em_stability_cap(config.params)
    want = cap if config.dt is None else min(config.dt, cap)
    if config.t_end == 0.0:
        return want, 0
    n_steps = max(1, int(np.ceil(config.t_end / want - 1e-12)))
    return config.t_end / n_steps, n_steps


def simulate(
    config: SimConfig,
    output_times=None,
    noise: NoiseStream | None = None,
    replication: int = 0,
    initial: ParticleEnsemble | None = None,
):
    """Run one replication; returns snapshots at the requested output times
    (snapped to the nearest step boundary).

    Deterministic for a fixed (config, seed): the initial sample and every
    increment are pure functions of the seed and the (replication, step,
    particle) key.
    """
    config.validate()
    params = config.params
    if initial is None:
        from .pde import InitialDatum, sample_initial

        datum = config.initial or InitialDatum.gaussian(np.zeros(params.d), 1.0)
        initial = sample_initial(datum, config.n_particles, config.seed, replication)
    state = initial.copy()
    state.t = 0.0
    if noise is None:
        noise = NoiseStream(config.seed)
    dt, n_steps = resolve_dt(config)
    if output_times is None:
        output_times = [0.0, config.t_end] if config.t_end > 0 else [0.0]
    out_steps = sorted({min(n_steps, int(round(t / dt))) if dt > 0 else 0 for t in output_times})
    snapshots = []
    if 0 in out_steps:
        snapshots.append(state.copy())
    for step in range(n_steps):
        block = noise.normals(replication, step, state.n, state.d)
        state = em_step(
            state, dt, params, block, step,
            config.include_aggregation, config.include_repulsion, config.drift_mode,
        )
        if (step + 1) in out_steps:
            snapshots.append(state.copy())
    return snapshots
