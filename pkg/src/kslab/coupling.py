"""Coupled trajectories: interacting particles against their mean-field twins.

Three systems share initial positions and Brownian increments per
(replication, step, particle) key: the interacting N-body system, the
intermediate system driven by the smoothed mean-field drift, and the limit
system driven by the local mean-field drift.  Pathwise differences then
measure drift differences only, which is what the error functionals
estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .noise import NoiseStream
from .particles import ParticleEnsemble, SimConfig, em_step, resolve_dt
from .pde import FieldHistory, sample_initial, InitialDatum


@dataclass
class CoupledRun:
    """Aligned trajectory arrays of shape (replications, times, N, d)."""

    config: SimConfig
    times: np.ndarray
    interacting: np.ndarray
    intermediate: np.ndarray
    limit: np.ndarray | None = None


@dataclass
class ErrorReport:
    """Monte Carlo trajectory-error estimates with standard errors."""

    metric: str
    times: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    meta: dict

    @property
    def sup_estimate(self) -> float:
        return float(np.max(self.estimates))

    @property
    def sup_index(self) -> int:
        return int(np.argmax(self.estimates))

    @property
    def sup_stderr(self) -> float:
        return float(self.stderrs[self.sup_index])

    def rows(self):
        """CSV rows: t, metric, estimate, stderr plus the metadata columns."""
        keys = ("N", "eps_k", "eps_p", "lambda", "sigma", "R")
        meta = [self.meta.get(k) for k in keys]
        for t, e, s in zip(self.times, self.estimates, self.stderrs):
            yield [t, self.metric, e, s] + meta


def field_drift_step(history: FieldHistory, positions, t, dt):
    """Drift increment for a field-driven system, evaluated at the frozen state."""
    return history.drift(t, positions) * dt


def simulate_field_driven(
    history: FieldHistory,
    initial: ParticleEnsemble,
    sigma: float,
    dt: float,
    n_steps: int,
    noise: NoiseStream,
    replication: int = 0,
    out_steps=None,
):
    """Euler-Maruyama for independent copies driven by interpolated fields."""
    pos = initial.positions.copy()
    n, d = pos.shape
    t = 0.0
    snaps = []
    if out_steps is None:
        out_steps = {n_steps}
    if 0 in out_steps:
        snaps.append(ParticleEnsemble(pos.copy(), 0.0))
    root = np.sqrt(2.0 * sigma * dt) if sigma > 0 else 0.0
    for step in range(n_steps):
        pos = pos + field_drift_step(history, pos, t, dt)
        if sigma > 0:
            pos = pos + root * noise.normals(replication, step, n, d)
        t += dt
        if (step + 1) in out_steps:
            snaps.append(ParticleEnsemble(pos.copy(), t))
    return snaps


def simulate_intermediate(config: SimConfig, history: FieldHistory, dt: float, noise=None, replication=0, out_steps=None):
    """Mean-field twin of the interacting system under the smoothed fields."""
    if history.mode != "mollified":
        raise ConfigError("intermediate system needs mollified-mode fields")
    return _simulate_mode(config, history, dt, noise, replication, out_steps)


def simulate_limit(config: SimConfig, history: FieldHistory, dt: float, noise=None, replication=0, out_steps=None):
    """Limit system under the local fields."""
    if history.mode != "limit":
        raise ConfigError("limit system needs limit-mode fields")
    return _simulate_mode(config, history, dt, noise, replication, out_steps)


def _simulate_mode(config, history, dt, noise, replication, out_steps):
    noise = noise or NoiseStream(config.seed)
    datum = config.initial or InitialDatum.gaussian(np.zeros(config.params.d), 1.0)
    initial = sample_initial(datum, config.n_particles, config.seed, replication)
    n_steps = max(1, int(round(config.t_end / dt))) if config.t_end > 0 else 0
    return simulate_field_driven(
        history, initial, config.params.sigma, dt, n_steps, noise, replication, out_steps
    )


def coupled_run(
    config: SimConfig,
    history_mollified: FieldHistory,
    history_limit: FieldHistory | None = None,
    output_times=None,
) -> CoupledRun:
    """Advance the systems in lockstep on shared noise and initial data."""
    config.validate()
    params = config.params
    n, d = config.n_particles, params.d
    dt, n_steps = resolve_dt(config)
    if output_times is None:
        output_times = [0.0, config.t_end]
    out_steps = sorted({min(n_steps, int(round(t / dt))) if n_steps else 0 for t in output_times})
    out_set = set(out_steps)
    times = np.asarray([s * dt for s in out_steps])
    noise = NoiseStream(config.seed)
    datum = config.initial or InitialDatum.gaussian(np.zeros(d), 1.0)

    shape = (config.replications, len(out_steps), n, d)
    arr_x = np.empty(shape)
    arr_bar = np.empty(shape)
    arr_hat = np.empty(shape) if history_limit is not None else None

    root = np.sqrt(2.0 * params.sigma * dt) if params.sigma > 0 else 0.0
    for rep in range(config.replications):
        init = sample_initial(datum, n, config.seed, rep)
        state_x = ParticleEnsemble(init.positions.copy(), 0.0)
        pos_bar = init.positions.copy()
        pos_hat = init.positions.copy() if history_limit is not None else None
        slot = 0
        if 0 in out_set:
            arr_x[rep, slot] = state_x.positions
            arr_bar[rep, slot] = pos_bar
            if arr_hat is not None:
                arr_hat[rep, slot] = pos_hat
            slot += 1
        t = 0.0
        for step in range(n_steps):
            block = noise.normals(rep, step, n, d)
            state_x = em_step(
                state_x, dt, params, block, step,
                config.include_aggregation, config.include_repulsion, config.drift_mode,
            )
            pos_bar = pos_bar + history_mollified.drift(t, pos_bar) * dt
            if history_limit is not None:
                pos_hat = pos_hat + history_limit.drift(t, pos_hat) * dt
            if params.sigma > 0:
                noise_inc = root * block
                pos_bar = pos_bar + noise_inc
                if history_limit is not None:
                    pos_hat = pos_hat + noise_inc
            t += dt
            if (step + 1) in out_set:
                arr_x[rep, slot] = state_x.positions
                arr_bar[rep, slot] = pos_bar
                if arr_hat is not None:
                    arr_hat[rep, slot] = pos_hat
                slot += 1
    return CoupledRun(
        config=config,
        times=times,
        interacting=arr_x,
        intermediate=arr_bar,
        limit=arr_hat,
    )


def trajectory_error(a, b, times, aggregation="max_then_mean", meta=None) -> ErrorReport:
    """Monte Carlo estimate of the squared trajectory gap between two systems.

    a, b: arrays (R, T, N, d) on common times.  max_then_mean estimates
    E[max_i |A - B|^2]; mean_square estimates E[|A - B|^2] pooled over
    particles.  Standard errors come from the replication spread.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if aggregation not in ("max_then_mean", "mean_square"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    gap2 = np.sum((a - b) ** 2, axis=-1)  # (R, T, N)
    if aggregation == "max_then_mean":
        per_rep = gap2.max(axis=-1)  # (R, T)
    else:
        per_rep = gap2.mean(axis=-1)
    r = per_rep.shape[0]
    est = per_rep.mean(axis=0)
    stderr = per_rep.std(axis=0, ddof=1) / np.sqrt(r) if r > 1 else np.zeros_like(est)
    return ErrorReport(
        metric=aggregation,
        times=np.asarray(times, float),
        estimates=est,
        stderrs=stderr,
        meta=dict(meta or {}),
    )
