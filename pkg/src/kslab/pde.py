"""Mean-field solver on a truncated box.

Solves both the smoothed density equation (bump-convolved aggregation
source, cutoff pressure of the smoothed density) and its local limit
(bare Poisson coupling, power-law pressure) with a conservative
finite-volume scheme: upwinded advective fluxes for the chemotactic and
pressure terms, central diffusive fluxes, explicit in time under a
positivity-preserving step bound.  The chemical potential comes from a
free-space spectral convolution on the doubled domain, so no periodic
images or zero-mean constraints enter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, OutOfDomainError, StepSizeError
from .kernels import bump_profile, coulomb_constant, mollifier_normalize
from .nonlinearity import pressure, pressure_prime
from .particles import KernelParams, ParticleEnsemble


@dataclass
class GridField:
    """Scalar field sampled at the cell centers of the box [-L, L]^d."""

    L: float
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    def mass(self) -> float:
        return float(self.values.sum() * self.h**self.d)

    def axis_coords(self) -> np.ndarray:
        return -self.L + (np.arange(self.n) + 0.5) * self.h

    def copy(self) -> "GridField":
        return GridField(self.L, self.values.copy(), self.t)


class InitialDatum:
    """Unit-mass initial density: gaussian, radial bump, or uniform box."""

    def __init__(self, kind, center, scale):
        if kind not in ("gaussian", "bump", "uniform"):
            raise ConfigError(f"unknown initial datum kind {kind!r}")
        self.kind = kind
        self.center = np.asarray(center, dtype=float)
        self.scale = float(scale)
        if self.scale <= 0:
            raise ConfigError("initial datum scale must be positive")

    @classmethod
    def gaussian(cls, mean, s):
        return cls("gaussian", mean, s)

    @classmethod
    def bump(cls, center, radius):
        return cls("bump", center, radius)

    @classmethod
    def uniform_box(cls, center, half_width):
        return cls("uniform", center, half_width)

    @property
    def d(self) -> int:
        return len(self.center)

    def density(self, points):
        """Continuum density at points of shape (..., d)."""
        pts = np.asarray(points, dtype=float)
        y = pts - self.center
        d = self.d
        if self.kind == "gaussian":
            s2 = self.scale**2
            return np.exp(-np.sum(y * y, axis=-1) / (2 * s2)) / (2 * math.pi * s2) ** (d / 2)
        if self.kind == "bump":
            r = np.linalg.norm(y, axis=-1) / self.scale
            return mollifier_normalize(d) * bump_profile(r) / self.scale**d
        inside = np.all(np.abs(y) <= self.scale, axis=-1)
        return inside / (2.0 * self.scale) ** d

    def grid_field(self, L: float, n: int, t: float = 0.0) -> GridField:
        """Sample on the grid and renormalize to unit discrete mass."""
        axis = -L + (np.arange(n) + 0.5) * (2.0 * L / n)
        mesh = np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"), axis=-1)
        vals = self.density(mesh)
        field = GridField(L, vals, t)
        total = field.mass()
        if total <= 0:
            raise ConfigError("initial datum has no mass inside the box")
        field.values /= total
        return field


def sample_initial(datum: InitialDatum, n: int, seed: int, replication: int = 0) -> ParticleEnsemble:
    """Draw n i.i.d. positions from the datum, deterministically per (seed, replication)."""
    bg = np.random.Philox(
        counter=np.array([0, 0, int(replication), 1], dtype=np.uint64),
        key=np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x696E6974], dtype=np.uint64),
    )
    rng = np.random.Generator(bg)
    d = datum.d
    if datum.kind == "gaussian":
        pts = datum.center + datum.scale * rng.standard_normal((n, d))
        return ParticleEnsemble(pts, 0.0)
    if datum.kind == "uniform":
        pts = datum.center + datum.scale * (2.0 * rng.random((n, d)) - 1.0)
        return ParticleEnsemble(pts, 0.0)
    # bump: rejection from the bounding box against the profile peak
    peak = bump_profile(0.0)
    out = np.empty((n, d))
    got = 0
    drawn = 0
    while got < n:
        batch = max(4 * (n - got), 256)
        y = 2.0 * rng.random((batch, d)) - 1.0
        u = rng.random(batch)
        keep = u * peak <= bump_profile(np.linalg.norm(y, axis=-1))
        drawn += batch
        take = min(int(keep.sum()), n - got)
        out[got : got + take] = y[keep][:take]
        got += take
        if drawn > 1000 * n and got < max(1, drawn // 1000):
            raise ConfigError("rejection sampling acceptance rate below 1e-3")
    return ParticleEnsemble(datum.center + datum.scale * out, 0.0)


# ---------------------------------------------------------------------------
# free-space Poisson convolution


@lru_cache(maxsize=None)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _log_cell_average(h: float) -> float:
    """Average of -ln|x| / (2 pi) over the square cell [-h/2, h/2]^2.

    Octant polar decomposition turns the integrable singularity into the
    closed-form radial integral of r ln r, leaving a smooth 1d quadrature.
    """
    gx, gw = _gauss_legendre(64)
    theta = 0.25 * math.pi * 0.5 * (gx + 1.0)
    w = 0.25 * math.pi * 0.5 * gw
    R = (h / 2.0) / np.cos(theta)
    integral = 8.0 * np.sum(w * R**2 * (2.0 * np.log(R) - 1.0) / 4.0)
    return -integral / h**2 / (2.0 * math.pi)


def _inv_r_cell_average(h: float) -> float:
    """Average of C_3 / |x| over the cube cell [-h/2, h/2]^3.

    Pyramid decomposition: the cube is six pyramids over its faces, and the
    radial part integrates in closed form, leaving a smooth 2d quadrature.
    """
    a = h / 2.0
    gx, gw = _gauss_legendre(64)
    y = a * gx
    wy = a * gw
    yy, zz = np.meshgrid(y, y, indexing="ij")
    ww = np.outer(wy, wy)
    face = np.sum(ww / np.sqrt(a * a + yy * yy + zz * zz))
    integral = 6.0 * (a / 2.0) * face
    return coulomb_constant(3) * integral / h**3


class PoissonSolver:
    """Spectral free-space solve of -Lap c = source on the doubled domain."""

    def __init__(self, d: int, n: int, L: float, gradient: bool = False):
        if d not in (2, 3):
            raise ConfigError("the grid Poisson solver supports d in {2, 3}")
        if n % 2 != 0:
            raise ConfigError("grid resolution must be even for domain doubling")
        self.d, self.n, self.L = d, n, L
        self.h = 2.0 * L / n
        m = 2 * n
        offsets = np.where(np.arange(m) < n, np.arange(m), np.arange(m) - m) * self.h
        grids = np.meshgrid(*([offsets] * d), indexing="ij")
        r2 = sum(g * g for g in grids)
        r = np.sqrt(r2)
        kernel = np.zeros_like(r)
        nz = r > 0
        if d == 2:
            kernel[nz] = -np.log(r[nz]) / (2.0 * math.pi)
            kernel[~nz] = _log_cell_average(self.h)
        else:
            kernel[nz] = coulomb_constant(3) / r[nz]
            kernel[~nz] = _inv_r_cell_average(self.h)
        self.green_hat = np.fft.rfftn(kernel)
        self.grad_hat = None
        if gradient:
            self.grad_hat = []
            for axis in range(d):
                gk = np.zeros_like(r)
                if d == 2:
                    gk[nz] = -grids[axis][nz] / (2.0 * math.pi * r2[nz])
                else:
                    gk[nz] = -coulomb_constant(3) * grids[axis][nz] / (r2[nz] * r[nz])
                # the origin-cell average of the odd gradient kernel vanishes
                self.grad_hat.append(np.fft.rfftn(gk))

    def _pad(self, values):
        m = 2 * self.n
        padded = np.zeros((m,) * self.d)
        padded[(slice(0, self.n),) * self.d] = values
        return padded

    def solve(self, source, gradient: bool = False):
        """Potential (and optionally its spectral gradient) of the source field."""
        src = np.asarray(source, dtype=float)
        if src.shape != (self.n,) * self.d:
            raise ConfigError("source shape does not match the solver grid")
        shat = np.fft.rfftn(self._pad(src))
        core = (slice(0, self.n),) * self.d
        scale = self.h**self.d
        c = np.fft.irfftn(shat * self.green_hat)[core] * scale
        if not gradient:
            return c
        if self.grad_hat is None:
            raise ConfigError("solver built without gradient kernels")
        grads = [np.fft.irfftn(shat * gh)[core] * scale for gh in self.grad_hat]
        return c, np.stack(grads)


def poisson_free_space(source: GridField, gradient: bool = False):
    """One-shot free-space solve of -Lap c = source; see PoissonSolver."""
    solver = PoissonSolver(source.d, source.n, source.L, gradient=gradient)
    if gradient:
        c, g = solver.solve(source.values, gradient=True)
        return GridField(source.L, c, source.t), g
    return GridField(source.L, solver.solve(source.values), source.t)


# ---------------------------------------------------------------------------
# smoothing convolutions on the grid


class _BumpConvolution:
    """FFT convolution with the eps-scaled bump, renormalized to unit discrete mass."""

    def __init__(self, d: int, n: int, L: float, eps: float):
        self.d, self.n, self.L, self.eps = d, n, L, eps
        h = 2.0 * L / n
        m = 2 * n
        offsets = np.where(np.arange(m) < n, np.arange(m), np.arange(m) - m) * h
        grids = np.meshgrid(*([offsets] * d), indexing="ij")
        r = np.sqrt(sum(g * g for g in grids)) / eps
        kernel = mollifier_normalize(d) * bump_profile(r) / eps**d
        total = kernel.sum() * h**d
        kernel /= total
        self.kernel_hat = np.fft.rfftn(kernel)
        self.scale = h**d

    def apply(self, values):
        m = 2 * self.n
        padded = np.zeros((m,) * self.d)
        padded[(slice(0, self.n),) * self.d] = values
        core = (slice(0, self.n),) * self.d
        return np.fft.irfftn(np.fft.rfftn(padded) * self.kernel_hat)[core] * self.scale


def _centered_gradient(values, h):
    """Second-order gradient at cell centers, one-sided at the box faces."""
    d = values.ndim
    out = np.empty((d,) + values.shape)
    for axis in range(d):
        g = np.gradient(values, h, axis=axis, edge_order=2)
        out[axis] = g
    return out


# ---------------------------------------------------------------------------
# multilinear interpolation


def _interp_weights(L, n, x):
    h = 2.0 * L / n
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    bad = np.abs(pts).max(axis=1) > L - h
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise OutOfDomainError(idx, 0.0, f"point {pts[idx]} outside the margin |x| <= L - h")
    # fractional cell-center coordinates
    f = (pts + L) / h - 0.5
    base = np.floor(f).astype(np.int64)
    base = np.clip(base, 0, n - 2)
    frac = f - base
    return base, frac


def interpolate_field(field: GridField, x):
    """Multilinear interpolation of a grid field at points x of shape (..., d)."""
    return _interp_values(field.values, field.L, x)


def _interp_values(values, L, x):
    d = values.ndim
    n = values.shape[0]
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.asarray(x).ndim == 1
    base, frac = _interp_weights(L, n, pts)
    out = np.zeros(pts.shape[0])
    for corner in range(2**d):
        w = np.ones(pts.shape[0])
        idx = []
        for axis in range(d):
            bit = (corner >> axis) & 1
            idx.append(base[:, axis] + bit)
            w = w * (frac[:, axis] if bit else 1.0 - frac[:, axis])
        out += w * values[tuple(idx)]
    return out[0] if single else out


def interpolate_gradient(field: GridField, x):
    """Multilinear interpolation of the centered-difference gradient of a field."""
    grads = _centered_gradient(field.values, field.h)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.asarray(x).ndim == 1
    out = np.stack([_interp_values(grads[a], field.L, pts) for a in range(field.d)], axis=-1)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# the mean-field stepper


@dataclass
class FieldHistory:
    """Stored fields and the interpolated drift they induce on trajectories."""

    params: KernelParams
    mode: str
    L: float
    times: np.ndarray
    u: list
    grad_c: list
    aux: list
    grad_aux: list
    include_pressure: bool = True

    @property
    def d(self) -> int:
        return self.u[0].ndim

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def _prime(self, vals):
        if not self.include_pressure:
            return np.zeros_like(vals)
        if self.mode == "mollified":
            return self.params.cutoff.prime(vals)
        return pressure_prime(np.maximum(vals, 0.0), self.params.m)

    def _bracket(self, t):
        times = self.times
        if t <= times[0]:
            return 0, 0, 0.0
        if t >= times[-1]:
            return len(times) - 1, len(times) - 1, 0.0
        hi = int(np.searchsorted(times, t, side="right"))
        lo = hi - 1
        w = (t - times[lo]) / (times[hi] - times[lo])
        return lo, hi, float(w)

    def _drift_at(self, k, pts):
        d = self.d
        drift = np.empty_like(pts)
        for a in range(d):
            drift[:, a] = _interp_values(self.grad_c[k][a], self.L, pts)
        prime = self._prime(_interp_values(self.aux[k], self.L, pts))
        for a in range(d):
            drift[:, a] -= prime * _interp_values(self.grad_aux[k][a], self.L, pts)
        return drift

    def drift(self, t, x):
        """Mean-field drift at time t and points x of shape (M, d).

        Linear interpolation in t between the drifts of the bracketing
        stored fields.
        """
        lo, hi, w = self._bracket(t)
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        out = self._drift_at(lo, pts)
        if hi != lo and w > 0.0:
            out = (1.0 - w) * out + w * self._drift_at(hi, pts)
        return out

    def u_field(self, t) -> GridField:
        lo, hi, w = self._bracket(t)
        vals = self.u[lo] if w == 0.0 or hi == lo else (1 - w) * self.u[lo] + w * self.u[hi]
        return GridField(self.L, vals, t)


class MeanFieldPDE:
    """Explicit conservative solver for one parameter set on one grid."""

    def __init__(
        self,
        params: KernelParams,
        L: float,
        n: int,
        mode: str = "mollified",
        include_aggregation: bool = True,
        include_pressure: bool = True,
        include_diffusion: bool = True,
        cfl: float = 0.4,
    ):
        if mode not in ("mollified", "limit"):
            raise ConfigError(f"mode must be 'mollified' or 'limit', got {mode!r}")
        if n % 2 != 0:
            raise ConfigError("grid resolution must be even for domain doubling")
        self.params = params
        self.L, self.n, self.d = float(L), int(n), params.d
        self.h = 2.0 * L / n
        self.mode = mode
        self.include_aggregation = include_aggregation
        self.include_pressure = include_pressure
        self.include_diffusion = include_diffusion
        self.cfl = cfl
        self.sigma = params.sigma if include_diffusion else 0.0
        self.cutoff = params.cutoff if mode == "mollified" else None
        self.poisson = PoissonSolver(self.d, n, L) if include_aggregation else None
        self.conv_k = (
            _BumpConvolution(self.d, n, L, params.eps_k)
            if (include_aggregation and mode == "mollified")
            else None
        )
        self.conv_p = (
            _BumpConvolution(self.d, n, L, params.eps_p)
            if mode == "mollified"
            else None
        )

    def _potentials(self, u):
        """Chemical potential c and pressure argument for the current density."""
        if self.include_aggregation:
            source = self.conv_k.apply(u) if self.conv_k is not None else u
            c = self.poisson.solve(source)
        else:
            c = None
        if self.mode == "mollified":
            aux = self.conv_p.apply(u)
        else:
            aux = u
        return c, aux

    def _pressure_of(self, aux):
        if not self.include_pressure:
            return None
        if self.mode == "mollified":
            return self.cutoff.value(aux)
        return pressure(np.maximum(aux, 0.0), self.params.m)

    def rhs(self, u):
        """Flux divergence, positivity step bound, and stability step bound."""
        d, h = self.d, self.h
        c, aux = self._potentials(u)
        pi = self._pressure_of(aux)
        rhs = np.zeros_like(u)
        outflow = np.zeros_like(u)
        max_speed = 0.0
        for axis in range(d):
            sl_lo = [slice(None)] * d
            sl_hi = [slice(None)] * d
            sl_lo[axis] = slice(0, -1)
            sl_hi[axis] = slice(1, None)
            sl_lo, sl_hi = tuple(sl_lo), tuple(sl_hi)
            w = np.zeros_like(u[sl_lo])
            if c is not None:
                w = w + (c[sl_hi] - c[sl_lo]) / h
            if pi is not None:
                w = w - (pi[sl_hi] - pi[sl_lo]) / h
            flux = np.maximum(w, 0.0) * u[sl_lo] + np.minimum(w, 0.0) * u[sl_hi]
            if self.sigma > 0.0:
                flux = flux - self.sigma * (u[sl_hi] - u[sl_lo]) / h
            rhs[sl_lo] -= flux / h
            rhs[sl_hi] += flux / h
            outflow[sl_lo] += np.maximum(w, 0.0) / h
            outflow[sl_hi] += np.maximum(-w, 0.0) / h
            if w.size:
                max_speed = max(max_speed, float(np.max(np.abs(w))))
        # positivity: each cell keeps a nonnegative value under this bound
        out_coef = float(np.max(outflow)) + 2.0 * d * self.sigma / h**2
        dt_pos = 0.9 / out_coef if out_coef > 0 else np.inf
        # parabolic stability including the degenerate pressure diffusivity
        diff = self.sigma
        if pi is not None:
            if self.mode == "mollified":
                diff = diff + float(np.max(u * self.cutoff.prime(aux)))
            else:
                diff = diff + float(
                    np.max(u * pressure_prime(np.maximum(u, 1e-300), self.params.m))
                )
        dt_stab = self.cfl * h**2 / (2.0 * d * diff) if diff > 0 else np.inf
        dt_adv = self.cfl * h / max_speed if max_speed > 0 else np.inf
        return rhs, min(dt_pos, dt_stab, dt_adv)

    def solve(
        self,
        u0: GridField,
        t_end: float,
        store_every: float | None = None,
        dt: float | None = None,
        dt_max: float | None = None,
    ) -> FieldHistory:
        """March to t_end, storing fields at multiples of store_every.

        With dt=None the step adapts to the stability and positivity bounds;
        a fixed dt is validated against them every step and rejected with a
        suggestion when too large.
        """
        if u0.values.shape != (self.n,) * self.d:
            raise ConfigError("initial field shape does not match the solver grid")
        if store_every is None:
            store_every = t_end if t_end > 0 else 1.0
        u = u0.values.copy()
        t = 0.0
        times = [0.0]
        stored = [self._derived(u)]
        n_targets = max(1, int(round(t_end / store_every))) if t_end > 0 else 0
        targets = [t_end * (k + 1) / n_targets for k in range(n_targets)]
        for target in targets:
            while t < target - 1e-12:
                rhs, dt_safe = self.rhs(u)
                if dt_max is not None:
                    dt_safe = min(dt_safe, dt_max)
                if dt is not None:
                    if dt > dt_safe * (1 + 1e-9):
                        raise StepSizeError(dt, dt_safe)
                    step = min(dt, target - t)
                else:
                    step = min(dt_safe, target - t)
                u = u + step * rhs
                # clip float dust; the scheme preserves sign in exact arithmetic
                np.maximum(u, 0.0, out=u)
                t += step
            t = target
            times.append(t)
            stored.append(self._derived(u))
        return FieldHistory(
            params=self.params,
            mode=self.mode,
            L=self.L,
            times=np.asarray(times),
            u=[s[0] for s in stored],
            grad_c=[s[1] for s in stored],
            aux=[s[2] for s in stored],
            grad_aux=[s[3] for s in stored],
            include_pressure=self.include_pressure,
        )

    def _derived(self, u):
        c, aux = self._potentials(u)
        if c is not None:
            grad_c = _centered_gradient(c, self.h)
        else:
            grad_c = np.zeros((self.d,) + u.shape)
        grad_aux = _centered_gradient(aux, self.h)
        return u.copy(), grad_c, np.asarray(aux).copy(), grad_aux


def pde_rhs(u: GridField, params: KernelParams, mode: str = "mollified", **toggles):
    """One evaluation of the conservative flux divergence."""
    solver = MeanFieldPDE(params, u.L, u.n, mode=mode, **toggles)
    rhs, _ = solver.rhs(u.values)
    return GridField(u.L, rhs, u.t)


def pde_solve(
    u0: GridField,
    params: KernelParams,
    t_end: float,
    mode: str = "mollified",
    store_every: float | None = None,
    dt: float | None = None,
    dt_max: float | None = None,
    **toggles,
) -> FieldHistory:
    """Convenience wrapper building a solver for the field's grid."""
    solver = MeanFieldPDE(params, u0.L, u0.n, mode=mode, **toggles)
    return solver.solve(u0, t_end, store_every=store_every, dt=dt, dt_max=dt_max)
