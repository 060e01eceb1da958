"""Parameter planning, convergence studies, and chaos metrics.

The cutoff widths follow the logarithmic schedule eps_k = (alpha_k ln N)^{-1/d},
eps_p = (alpha_p ln N)^{-1/(dm-d+2)}, lam = eps_p^d / 2.  Studies couple
systems on shared noise, estimate trajectory errors over replications, and
fit log-log slopes; marginal metrics compare the empirical one-particle law
against the mean-field density and test pairwise decorrelation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import wasserstein_distance

from .coupling import coupled_run, simulate_field_driven, trajectory_error
from .errors import ConfigError, DegenerateFitError
from .noise import NoiseStream
from .particles import KernelParams, SimConfig
from .pde import GridField, InitialDatum, MeanFieldPDE, sample_initial


@dataclass(frozen=True)
class ScalingPlan:
    """Cutoff parameters derived from (N, alpha_k, alpha_p, d, m)."""

    n: int
    alpha_k: float
    alpha_p: float
    d: int
    m: float
    eps_k: float
    eps_p: float
    lam: float
    band_overlap_warning: bool
    beta: float | None = None
    delta: float | None = None
    admissibility_margin: float | None = None

    def echo(self) -> str:
        lines = [
            f"N = {self.n}",
            f"alpha_k = {self.alpha_k!r}, alpha_p = {self.alpha_p!r}",
            f"d = {self.d}, m = {self.m}",
            f"eps_k = {self.eps_k!r}",
            f"eps_p = {self.eps_p!r}",
            f"lambda = {self.lam!r}",
        ]
        if self.band_overlap_warning:
            lines.append("warning: lambda >= 1/4, cutoff bands overlap the unit scale")
        if self.admissibility_margin is not None:
            lines.append(f"admissibility margin (unknown constant aside) = {self.admissibility_margin!r}")
        return "\n".join(lines)


def plan_parameters(n, alpha_k, alpha_p, d, m, beta=None, delta=None) -> ScalingPlan:
    """Cutoff schedule of the logarithmic scaling regime."""
    bad = []
    if n < 3:
        bad.append(f"N must be >= 3 so that ln N > 1, got {n}")
    if alpha_k <= 0 or alpha_p <= 0:
        bad.append("alpha_k and alpha_p must be positive")
    if not (m == 2.0 or m >= 3.0):
        bad.append(f"m must be 2 or >= 3, got {m}")
    if d < 2:
        bad.append(f"d must be >= 2, got {d}")
    if bad:
        raise ConfigError(bad)
    log_n = math.log(n)
    eps_k = (alpha_k * log_n) ** (-1.0 / d)
    exponent = d * m - d + 2
    eps_p = (alpha_p * log_n) ** (-1.0 / exponent)
    lam = 0.5 * eps_p**d
    margin = None
    if beta is not None and delta is not None:
        margin = 1.0 - delta * (2 * d * m - 2 * d + 2) / exponent - beta
    return ScalingPlan(
        n=int(n),
        alpha_k=float(alpha_k),
        alpha_p=float(alpha_p),
        d=int(d),
        m=float(m),
        eps_k=eps_k,
        eps_p=eps_p,
        lam=lam,
        band_overlap_warning=bool(lam >= 0.25),
        beta=beta,
        delta=delta,
        admissibility_margin=margin,
    )


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    half_width: float


def rate_fit(points) -> FitResult:
    """Weighted least squares of ln y on ln x.

    points: iterable of (x, y) or (x, y, stderr); weights are the inverse
    variances of ln y, unit when no stderr is given.  The half-width is
    1.96 times the slope's standard error from the fit covariance.
    """
    pts = [tuple(p) for p in points]
    if len(pts) < 3:
        raise DegenerateFitError("rate fit needs at least 3 points")
    x = np.array([p[0] for p in pts], float)
    y = np.array([p[1] for p in pts], float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise DegenerateFitError("rate fit needs positive x and y")
    if len(set(x.tolist())) < 2:
        raise DegenerateFitError("rate fit needs at least 2 distinct x values")
    se = np.array([p[2] if len(p) > 2 and p[2] else 0.0 for p in pts], float)
    with np.errstate(divide="ignore"):
        w = np.where(se > 0, (y / np.where(se > 0, se, 1.0)) ** 2, 1.0)
    lx, ly = np.log(x), np.log(y)
    sw = w.sum()
    mx = (w * lx).sum() / sw
    my = (w * ly).sum() / sw
    sxx = (w * (lx - mx) ** 2).sum()
    slope = (w * (lx - mx) * (ly - my)).sum() / sxx
    intercept = my - slope * mx
    dof = max(len(pts) - 2, 1)
    resid = ly - (intercept + slope * lx)
    chi2 = (w * resid**2).sum()
    var_slope = max(chi2 / dof, 1e-300) / sxx
    return FitResult(float(slope), float(intercept), float(1.96 * math.sqrt(var_slope)))


@dataclass
class StudyResult:
    """Per-point error estimates and the fitted log-log rate."""

    xs: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    fit: FitResult
    meta: dict
    sup_times: np.ndarray | None = None
    point_meta: list | None = None

    def rows(self):
        """Rows in the trajectory-error CSV schema, one per study point."""
        metric = self.meta.get("metric", "sup")
        for k, (e, s) in enumerate(zip(self.estimates, self.stderrs)):
            t = self.sup_times[k] if self.sup_times is not None else ""
            pm = self.point_meta[k] if self.point_meta is not None else {}
            yield [
                t, metric, e, s,
                pm.get("N", ""), pm.get("eps_k", ""), pm.get("eps_p", ""),
                pm.get("lambda", ""), pm.get("sigma", ""), pm.get("R", ""),
            ]


def _fit_or_nan(pts):
    try:
        return rate_fit(pts)
    except DegenerateFitError:
        return FitResult(float("nan"), float("nan"), float("nan"))


def fluctuation_study(
    params: KernelParams,
    n_list,
    *,
    t_end: float,
    grid_L: float,
    grid_n: int,
    store_every: float,
    replications: int,
    seed: int,
    initial: InitialDatum | None = None,
    dt: float | None = None,
    include_aggregation: bool = True,
    include_repulsion: bool = True,
) -> StudyResult:
    """Interacting-vs-intermediate gap at fixed cutoffs across N.

    One smoothed-field solve feeds every N and every replication; the
    coupled pairs share noise keys so the measured gap isolates the
    finite-N fluctuation of the empirical drift.
    """
    if len(n_list) < 3:
        raise ConfigError("fluctuation study needs at least 3 values of N")
    datum = initial or InitialDatum.gaussian(np.zeros(params.d), 0.5)
    pde = MeanFieldPDE(
        params, grid_L, grid_n, mode="mollified",
        include_aggregation=include_aggregation, include_pressure=include_repulsion,
    )
    u0 = datum.grid_field(grid_L, grid_n)
    history = pde.solve(u0, t_end, store_every=store_every)
    ests, ses, sup_times, point_meta = [], [], [], []
    for n in n_list:
        config = SimConfig(
            params=params, n_particles=int(n), t_end=t_end, dt=dt, seed=seed,
            replications=replications, initial=datum,
            include_aggregation=include_aggregation, include_repulsion=include_repulsion,
        )
        run = coupled_run(config, history, None, output_times=_dense_times(t_end))
        meta = {"N": int(n), "eps_k": params.eps_k, "eps_p": params.eps_p,
                "lambda": params.lam, "sigma": params.sigma, "R": replications}
        report = trajectory_error(
            run.interacting, run.intermediate, run.times, "max_then_mean", meta=meta
        )
        ests.append(report.sup_estimate)
        ses.append(report.sup_stderr)
        sup_times.append(float(run.times[report.sup_index]))
        point_meta.append(meta)
    xs = np.asarray([float(n) for n in n_list])
    fit = _fit_or_nan(list(zip(xs, ests, ses)))
    return StudyResult(xs, np.asarray(ests), np.asarray(ses), fit,
                       meta={"kind": "fluctuation", "metric": "max_then_mean",
                             "params": params, "R": replications},
                       sup_times=np.asarray(sup_times), point_meta=point_meta)


def _dense_times(t_end, k=10):
    return [t_end * i / k for i in range(k + 1)]


def meanfield_rate_study(
    params: KernelParams,
    eps_list,
    *,
    t_end: float,
    grid_L: float,
    grid_n: int,
    store_every: float,
    replications: int,
    seed: int,
    dt: float,
    initial: InitialDatum | None = None,
) -> StudyResult:
    """Intermediate-vs-limit gap across shrinking cutoffs.

    The systems are non-interacting, so single-particle replications
    suffice; the limit trajectories are computed once and reused against
    every smoothed run on the same noise keys.
    """
    if len(eps_list) < 3:
        raise ConfigError("rate study needs at least 3 cutoff values")
    d = params.d
    datum = initial or InitialDatum.gaussian(np.zeros(d), 0.5)
    u0 = datum.grid_field(grid_L, grid_n)
    noise = NoiseStream(seed)
    n_steps = max(1, int(round(t_end / dt)))
    dt_eff = t_end / n_steps
    out_steps = sorted({int(round(n_steps * i / 10)) for i in range(11)})

    limit_pde = MeanFieldPDE(params, grid_L, grid_n, mode="limit")
    hist_limit = limit_pde.solve(u0, t_end, store_every=store_every)
    hats = _field_paths(hist_limit, datum, params.sigma, dt_eff, n_steps, out_steps, noise, replications, seed)

    ests, ses, xs, sup_times, point_meta = [], [], [], [], []
    for eps in eps_list:
        p_eps = replace(params, eps_k=eps, eps_p=eps, lam=0.5 * eps**d)
        pde = MeanFieldPDE(p_eps, grid_L, grid_n, mode="mollified")
        hist = pde.solve(u0, t_end, store_every=store_every)
        bars = _field_paths(hist, datum, params.sigma, dt_eff, n_steps, out_steps, noise, replications, seed)
        times = np.asarray(out_steps, float) * dt_eff
        meta = {"N": 1, "eps_k": eps, "eps_p": eps, "lambda": p_eps.lam,
                "sigma": params.sigma, "R": replications}
        report = trajectory_error(bars, hats, times, "mean_square", meta=meta)
        xs.append(2.0 * eps)  # eps_k + eps_p
        ests.append(report.sup_estimate)
        ses.append(report.sup_stderr)
        sup_times.append(float(times[report.sup_index]))
        point_meta.append(meta)
    fit = _fit_or_nan(list(zip(xs, ests, ses)))
    return StudyResult(np.asarray(xs), np.asarray(ests), np.asarray(ses), fit,
                       meta={"kind": "meanfield_rate", "metric": "mean_square",
                             "params": params, "R": replications},
                       sup_times=np.asarray(sup_times), point_meta=point_meta)


def _field_paths(history, datum, sigma, dt, n_steps, out_steps, noise, replications, seed):
    """(R, T, 1, d) single-particle paths driven by one field history.

    The replications are independent copies, so they advance as one batch
    whose noise rows are keyed by the replication index; any history driven
    on the same keys consumes identical increments row by row.
    """
    init = sample_initial(datum, replications, seed, 0)
    snaps = simulate_field_driven(
        history, init, sigma, dt, n_steps, noise, 0, out_steps=set(out_steps)
    )
    stacked = np.stack([s.positions for s in snaps])  # (T, R, d)
    return stacked.transpose(1, 0, 2)[:, :, None, :]


# ---------------------------------------------------------------------------
# propagation-of-chaos metrics


def slice_directions(d: int, n_directions: int, seed: int):
    """Deterministic unit directions: seeded Gaussian draws, normalized."""
    bg = np.random.Philox(
        counter=np.array([0, 0, 0, 2], dtype=np.uint64),
        key=np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x736C696365], dtype=np.uint64),
    )
    rng = np.random.Generator(bg)
    dirs = rng.standard_normal((n_directions, d))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _field_atoms(field: GridField):
    axis = field.axis_coords()
    mesh = np.stack(np.meshgrid(*([axis] * field.d), indexing="ij"), axis=-1)
    pts = mesh.reshape(-1, field.d)
    w = (field.values * field.h**field.d).reshape(-1)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise ConfigError("reference field has no mass")
    return pts, w / total


def sliced_w1(samples, field: GridField, n_directions: int = 64, seed: int = 0) -> float:
    """Average 1d Wasserstein-1 over random projections against a grid measure."""
    samples = np.asarray(samples, float)
    pts, w = _field_atoms(field)
    if abs(float(field.mass()) - 1.0) > 1e-6:
        raise ConfigError("reference field must be normalized to unit mass")
    dirs = slice_directions(samples.shape[1], n_directions, seed)
    acc = 0.0
    for u in dirs:
        acc += wasserstein_distance(samples @ u, pts @ u, v_weights=w)
    return acc / n_directions


def sample_field(field: GridField, n: int, seed: int, stream: int = 0):
    """n i.i.d. draws from a nonnegative grid field: cell multinomial + in-cell uniform."""
    pts, w = _field_atoms(field)
    bg = np.random.Philox(
        counter=np.array([0, 0, int(stream), 3], dtype=np.uint64),
        key=np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x6669656C64], dtype=np.uint64),
    )
    rng = np.random.Generator(bg)
    idx = rng.choice(len(w), size=n, p=w)
    jitter = field.h * (rng.random((n, field.d)) - 0.5)
    return pts[idx] + jitter


def resampling_baseline(field: GridField, n: int, n_directions: int, seed: int, draws: int = 8) -> float:
    """Mean sliced-W1 of i.i.d. field samples against the field itself."""
    vals = [
        sliced_w1(sample_field(field, n, seed, stream=k), field, n_directions, seed)
        for k in range(draws)
    ]
    return float(np.mean(vals))


def pair_independence(ensembles) -> float:
    """Max |Pearson correlation| between particle-1 and particle-2 coordinates.

    ensembles: array (R, N, d) of final positions over R replications.
    """
    ens = np.asarray(ensembles, float)
    if ens.ndim != 3 or ens.shape[1] < 2:
        raise ValueError("need (R, N>=2, d) ensembles")
    x1 = ens[:, 0, :]
    x2 = ens[:, 1, :]
    d = ens.shape[2]
    worst = 0.0
    for a in range(d):
        for b in range(d):
            c = np.corrcoef(x1[:, a], x2[:, b])[0, 1]
            worst = max(worst, abs(float(c)))
    return worst


@dataclass
class MarginalReport:
    """Chaos metrics of an ensemble set against a reference density."""

    k: int
    sliced: dict
    baseline: float
    independence: float | None
    meta: dict


def marginal_metrics(
    ensembles,
    field: GridField,
    k: int = 1,
    n_directions: int = 64,
    seed: int = 0,
    baseline_draws: int = 8,
) -> MarginalReport:
    """Compare empirical k-marginals with the mean-field law (k in {1, 2}).

    k = 1 pools all particles of all replications; k = 2 adds per-particle
    marginal distances for the first two particles and the cross-replication
    decorrelation statistic.
    """
    if k not in (1, 2):
        raise ConfigError("k must be 1 or 2")
    ens = np.asarray(ensembles, float)
    if ens.ndim == 2:
        ens = ens[None]
    pooled = ens.reshape(-1, ens.shape[-1])
    per_sample_n = pooled.shape[0]
    sliced = {"pooled": sliced_w1(pooled, field, n_directions, seed)}
    independence = None
    if k == 2:
        sliced["particle_1"] = sliced_w1(ens[:, 0, :], field, n_directions, seed)
        sliced["particle_2"] = sliced_w1(ens[:, 1, :], field, n_directions, seed)
        independence = pair_independence(ens)
    baseline = resampling_baseline(field, per_sample_n, n_directions, seed, baseline_draws)
    return MarginalReport(
        k=k,
        sliced=sliced,
        baseline=baseline,
        independence=independence,
        meta={"n_directions": n_directions, "samples": per_sample_n, "R": ens.shape[0]},
    )
