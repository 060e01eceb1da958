"""Batch command-line surface: config parsing, orchestration, persistence.

Every run is driven by one YAML document; the raw text is echoed as a
comment block into each CSV artifact so results carry their provenance.
Outputs are byte-identical for identical (config, seed) at any worker
count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np
import yaml

from . import io as ksio
from .errors import ConfigError, KslabError
from .experiments import (
    fluctuation_study,
    meanfield_rate_study,
    plan_parameters,
    resampling_baseline,
    sliced_w1,
    pair_independence,
)
from .coupling import coupled_run, trajectory_error
from .kernels import mass_table
from .particles import (
    KernelParams,
    SimConfig,
    drift_all_direct,
    repulsion_sums_cell,
    repulsion_sums_direct,
    simulate,
)
from .pde import InitialDatum, MeanFieldPDE


_TOP_KEYS = {
    "d", "m", "sigma", "eps_k", "eps_p", "lambda", "n_particles", "t_end", "dt",
    "seed", "replications", "initial", "grid", "output_times", "drift_mode",
    "include_aggregation", "include_repulsion", "workers", "pde", "study",
    "plan", "bench",
}
_INITIAL_KEYS = {"kind", "center", "scale"}
_GRID_KEYS = {"L", "n", "store_every"}
_PDE_KEYS = {"mode", "t_end", "include_aggregation", "include_pressure", "include_diffusion"}
_STUDY_KEYS = {"n_list", "eps_list", "directions", "dt", "replications", "baseline_draws"}
_PLAN_KEYS = {"N", "alpha_k", "alpha_p", "beta", "delta"}
_BENCH_KEYS = {"n_particles", "steps", "eps_k", "eps_p"}


@dataclass
class RunConfig:
    """Validated configuration plus the verbatim document it came from."""

    text: str
    data: dict

    @property
    def workers(self) -> int:
        return max(1, int(self.data.get("workers", 1)))

    def params(self) -> KernelParams:
        d = self.data
        lam = d.get("lambda")
        if lam is None:
            lam = 0.5 * d["eps_p"] ** d["d"]
        return KernelParams(
            d=d["d"], m=float(d["m"]), eps_k=float(d["eps_k"]),
            eps_p=float(d["eps_p"]), lam=float(lam), sigma=float(d["sigma"]),
        )

    def initial(self) -> InitialDatum:
        blk = self.data["initial"]
        return InitialDatum(blk["kind"], blk["center"], blk["scale"])

    def sim_config(self) -> SimConfig:
        d = self.data
        return SimConfig(
            params=self.params(),
            n_particles=int(d["n_particles"]),
            t_end=float(d["t_end"]),
            dt=d.get("dt"),
            seed=int(d["seed"]),
            replications=int(d["replications"]),
            initial=self.initial(),
            include_aggregation=bool(d["include_aggregation"]),
            include_repulsion=bool(d["include_repulsion"]),
            drift_mode=d["drift_mode"],
        )

    def grid(self):
        g = self.data["grid"]
        return float(g["L"]), int(g["n"]), float(g["store_every"])

    def output_times(self):
        times = self.data.get("output_times")
        if times is None:
            times = [0.0, float(self.data["t_end"])]
        return [float(t) for t in times]

    def provenance(self) -> str:
        params = self.params()
        lines = [self.text.strip(), "--- derived ---",
                 f"eps_k = {params.eps_k!r}, eps_p = {params.eps_p!r}, "
                 f"lambda = {params.lam!r}, m = {params.m!r}, d = {params.d}, "
                 f"sigma = {params.sigma!r}"]
        blk = self.data.get("plan")
        if blk:
            from .experiments import plan_parameters

            plan = plan_parameters(blk["N"], blk["alpha_k"], blk["alpha_p"],
                                   self.data["d"], self.data["m"],
                                   beta=blk.get("beta"), delta=blk.get("delta"))
            lines.append("--- plan ---")
            lines.append(plan.echo())
        return "\n".join(lines)


def _check_keys(block, allowed, where, bad):
    if not isinstance(block, dict):
        bad.append(f"{where} must be a mapping")
        return
    for key in block:
        if key not in allowed:
            bad.append(f"unknown key {key!r} in {where}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML run document, reporting every violation."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"config is not valid YAML: {exc}"])
    if data is None:
        data = {}
    bad = []
    _check_keys(data, _TOP_KEYS, "the top level", bad)
    if bad:
        raise ConfigError(bad)

    defaults = {
        "d": 2, "m": 2.0, "sigma": 0.0, "eps_k": 0.5, "eps_p": 0.5,
        "n_particles": 256, "t_end": 0.1, "seed": 0, "replications": 1,
        "drift_mode": "direct", "include_aggregation": True,
        "include_repulsion": True, "workers": 1,
    }
    merged = {**defaults, **data}
    merged.setdefault("initial", {"kind": "gaussian", "center": [0.0] * merged["d"], "scale": 0.5})
    merged.setdefault("grid", {"L": 4.0, "n": 128, "store_every": max(merged["t_end"], 1e-9) / 10})

    _check_keys(merged["initial"], _INITIAL_KEYS, "initial", bad)
    _check_keys(merged["grid"], _GRID_KEYS, "grid", bad)
    for name, keys in (("pde", _PDE_KEYS), ("study", _STUDY_KEYS),
                       ("plan", _PLAN_KEYS), ("bench", _BENCH_KEYS)):
        if name in merged:
            _check_keys(merged[name], keys, name, bad)
    if bad:
        raise ConfigError(bad)

    cfg = RunConfig(text=text, data=merged)
    try:
        bad.extend(cfg.sim_config().violations())
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        bad.append(f"invalid scalar block: {exc}")
    g = merged["grid"]
    if not isinstance(g.get("n"), int) or g["n"] < 4 or g["n"] % 2:
        bad.append("grid.n must be an even integer >= 4")
    if not g.get("L") or g["L"] <= 0:
        bad.append("grid.L must be positive")
    if bad:
        raise ConfigError(bad)
    return cfg


def _set_workers(n: int):
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(min(max(1, int(n)), limit))


def _resolve_workers(args, cfg: RunConfig) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("KSLAB_WORKERS")
    if env:
        return int(env)
    return cfg.workers


# ---------------------------------------------------------------------------
# subcommands


def _cmd_plan(cfg: RunConfig, out: str):
    blk = cfg.data.get("plan")
    if not blk:
        raise ConfigError(["plan subcommand needs a 'plan' block"])
    plan = plan_parameters(
        blk["N"], blk["alpha_k"], blk["alpha_p"], cfg.data["d"], cfg.data["m"],
        beta=blk.get("beta"), delta=blk.get("delta"),
    )
    header = ["N", "alpha_k", "alpha_p", "d", "m", "eps_k", "eps_p", "lambda",
              "band_overlap_warning", "admissibility_margin"]
    row = [plan.n, plan.alpha_k, plan.alpha_p, plan.d, plan.m, plan.eps_k,
           plan.eps_p, plan.lam, int(plan.band_overlap_warning),
           plan.admissibility_margin if plan.admissibility_margin is not None else ""]
    ksio.write_csv(os.path.join(out, "plan.csv"), header, [row],
                   provenance=cfg.provenance())
    print(plan.echo())


def _cmd_simulate(cfg: RunConfig, out: str):
    sim = cfg.sim_config().validate()
    times = cfg.output_times()
    all_snaps = []
    for rep in range(sim.replications):
        snaps = simulate(sim, output_times=times, replication=rep)
        for k, snap in enumerate(snaps):
            ksio.write_snapshot(os.path.join(out, f"snap_r{rep:03d}_{k:03d}.kspc"), snap)
        all_snaps.extend(snaps)
    ksio.write_csv(
        os.path.join(out, "trajectory.csv"),
        ["t", "i"] + [f"x_{a + 1}" for a in range(sim.params.d)],
        ksio.trajectory_rows(all_snaps),
        provenance=cfg.provenance(),
    )
    r, m = mass_table(sim.params.d, sim.params.eps_k)
    ksio.write_csv(os.path.join(out, "enclosed_mass.csv"), ["r", "M"],
                   ksio.mass_table_rows(r, m), provenance=cfg.provenance())


def _cmd_pde(cfg: RunConfig, out: str):
    blk = cfg.data.get("pde", {})
    mode = blk.get("mode", "mollified")
    t_end = float(blk.get("t_end", cfg.data["t_end"]))
    L, n, store = cfg.grid()
    params = cfg.params()
    solver = MeanFieldPDE(
        params, L, n, mode=mode,
        include_aggregation=blk.get("include_aggregation", True),
        include_pressure=blk.get("include_pressure", True),
        include_diffusion=blk.get("include_diffusion", True),
    )
    u0 = cfg.initial().grid_field(L, n)
    hist = solver.solve(u0, t_end, store_every=store)
    rows = []
    for k, t in enumerate(hist.times):
        u = hist.u[k]
        rows.append([t, float(u.sum() * (2 * L / n) ** params.d), float(u.min()), float(u.max())])
    ksio.write_csv(os.path.join(out, "pde_diagnostics.csv"),
                   ["t", "mass", "min_u", "max_u"], rows, provenance=cfg.provenance())
    ksio.write_field(os.path.join(out, "field_final.ksfd"), hist.u_field(hist.t_end))
    ksio.write_csv(os.path.join(out, "field_linecut.csv"), ["axis", "coord", "u"],
                   ksio.field_linecut_rows(hist.u_field(hist.t_end)),
                   provenance=cfg.provenance())
    cp = params.cutoff
    sample = np.geomspace(params.lam / 4, 8.0 / params.lam, 512)
    ksio.write_csv(os.path.join(out, "pressure_table.csv"),
                   ["r", "p_lambda", "p_lambda_prime", "p_lambda_second"],
                   ([r, cp.value(r), cp.prime(r), cp.second(r)] for r in sample),
                   provenance=cfg.provenance())


def _build_histories(cfg: RunConfig, need_limit=True):
    L, n, store = cfg.grid()
    params = cfg.params()
    sim = cfg.sim_config()
    u0 = cfg.initial().grid_field(L, n)
    hist_m = MeanFieldPDE(
        params, L, n, mode="mollified",
        include_aggregation=sim.include_aggregation,
        include_pressure=sim.include_repulsion,
    ).solve(u0, sim.t_end, store_every=store)
    hist_l = None
    if need_limit:
        hist_l = MeanFieldPDE(
            params, L, n, mode="limit",
            include_aggregation=sim.include_aggregation,
            include_pressure=sim.include_repulsion,
        ).solve(u0, sim.t_end, store_every=store)
    return hist_m, hist_l


_ERROR_HEADER = ["t", "metric", "estimate", "stderr", "N", "eps_k", "eps_p", "lambda", "sigma", "R"]


def _cmd_couple(cfg: RunConfig, out: str):
    sim = cfg.sim_config().validate()
    hist_m, hist_l = _build_histories(cfg)
    run = coupled_run(sim, hist_m, hist_l, output_times=cfg.output_times())
    meta = {"N": sim.n_particles, "eps_k": sim.params.eps_k, "eps_p": sim.params.eps_p,
            "lambda": sim.params.lam, "sigma": sim.params.sigma, "R": sim.replications}
    for name, a, b in (
        ("interacting_vs_intermediate", run.interacting, run.intermediate),
        ("intermediate_vs_limit", run.intermediate, run.limit),
        ("interacting_vs_limit", run.interacting, run.limit),
    ):
        rows = []
        for agg in ("max_then_mean", "mean_square"):
            rows.extend(trajectory_error(a, b, run.times, agg, meta=meta).rows())
        ksio.write_csv(os.path.join(out, f"errors_{name}.csv"), _ERROR_HEADER,
                       rows, provenance=cfg.provenance())


def _study_csv(cfg, out, name, study):
    rows = list(study.rows())
    rows.append(["slope", "", study.fit.slope, study.fit.half_width,
                 "", "", "", "", "", ""])
    rows.append(["intercept", "", study.fit.intercept, "",
                 "", "", "", "", "", ""])
    ksio.write_csv(os.path.join(out, name), _ERROR_HEADER, rows,
                   provenance=cfg.provenance())


def _cmd_fluctuation(cfg: RunConfig, out: str):
    blk = cfg.data.get("study", {})
    n_list = blk.get("n_list")
    if not n_list:
        raise ConfigError(["fluctuation subcommand needs study.n_list"])
    L, n, store = cfg.grid()
    study = fluctuation_study(
        cfg.params(), n_list, t_end=float(cfg.data["t_end"]),
        grid_L=L, grid_n=n, store_every=store,
        replications=int(blk.get("replications", cfg.data["replications"])),
        seed=int(cfg.data["seed"]), initial=cfg.initial(), dt=cfg.data.get("dt"),
    )
    _study_csv(cfg, out, "fluctuation_study.csv", study)
    print(f"fluctuation slope: {study.fit.slope:+.4f} +- {study.fit.half_width:.4f}")


def _cmd_meanfield_rate(cfg: RunConfig, out: str):
    blk = cfg.data.get("study", {})
    eps_list = blk.get("eps_list")
    if not eps_list:
        raise ConfigError(["meanfield-rate subcommand needs study.eps_list"])
    L, n, store = cfg.grid()
    study = meanfield_rate_study(
        cfg.params(), eps_list, t_end=float(cfg.data["t_end"]),
        grid_L=L, grid_n=n, store_every=store,
        replications=int(blk.get("replications", cfg.data["replications"])),
        seed=int(cfg.data["seed"]), dt=float(blk.get("dt", 2e-3)),
        initial=cfg.initial(),
    )
    _study_csv(cfg, out, "meanfield_rate_study.csv", study)
    print(f"mean-field rate slope: {study.fit.slope:+.4f} +- {study.fit.half_width:.4f}")


def _cmd_chaos(cfg: RunConfig, out: str):
    blk = cfg.data.get("study", {})
    sim = cfg.sim_config().validate()
    hist_m, _ = _build_histories(cfg, need_limit=False)
    finals = np.empty((sim.replications, sim.n_particles, sim.params.d))
    for rep in range(sim.replications):
        snaps = simulate(sim, output_times=[sim.t_end], replication=rep)
        finals[rep] = snaps[-1].positions
    field = hist_m.u_field(sim.t_end)
    n_dirs = int(blk.get("directions", 64))
    metric = sliced_w1(finals[0], field, n_dirs, sim.seed)
    baseline = resampling_baseline(field, sim.n_particles, n_dirs, sim.seed,
                                   draws=int(blk.get("baseline_draws", 8)))
    indep = pair_independence(finals) if sim.replications > 1 else ""
    ksio.write_csv(
        os.path.join(out, "chaos_metrics.csv"),
        ["metric", "value"],
        [["sliced_w1", metric], ["baseline", baseline],
         ["ratio", metric / baseline if baseline else ""],
         ["pair_independence", indep],
         ["threshold_4_over_sqrt_R", 4.0 / np.sqrt(sim.replications)]],
        provenance=cfg.provenance(),
    )
    print(f"sliced W1 {metric:.5f} vs baseline {baseline:.5f}; independence {indep}")


def _cmd_bench(cfg: RunConfig, out: str):
    blk = cfg.data.get("bench", {})
    n = int(blk.get("n_particles", 10000))
    steps = int(blk.get("steps", 100))
    eps_k = float(blk.get("eps_k", 0.05))
    eps_p = float(blk.get("eps_p", 0.05))
    params = KernelParams(d=2, m=2.0, eps_k=eps_k, eps_p=eps_p,
                          lam=min(0.25, 0.5 * eps_p**2), sigma=0.0)
    rng = np.random.Generator(np.random.Philox(key=np.array([cfg.data["seed"], 7], dtype=np.uint64)))
    pos = rng.random((n, 2))
    drift_all_direct(pos[:128], params)  # compile outside the timed region
    repulsion_sums_direct(pos[:128], eps_p)
    repulsion_sums_cell(pos[:128], eps_p)

    t0 = time.perf_counter()
    for _ in range(steps):
        drift_all_direct(pos, params)
    t_direct_full = time.perf_counter() - t0

    t0 = time.perf_counter()
    for _ in range(steps):
        repulsion_sums_direct(pos, eps_p)
    t_rep_direct = time.perf_counter() - t0

    t0 = time.perf_counter()
    for _ in range(steps):
        repulsion_sums_cell(pos, eps_p)
    t_rep_cell = time.perf_counter() - t0

    speedup = t_rep_direct / t_rep_cell if t_rep_cell > 0 else float("inf")
    ksio.write_csv(
        os.path.join(out, "bench.csv"),
        ["quantity", "seconds"],
        [["direct_full_drift_total", t_direct_full],
         ["repulsion_direct_total", t_rep_direct],
         ["repulsion_cell_total", t_rep_cell],
         ["cell_speedup", speedup],
         ["n_particles", n], ["steps", steps]],
        provenance=cfg.provenance(),
    )
    print(f"direct drift {steps} steps: {t_direct_full:.2f}s; cell speedup {speedup:.2f}x")


_COMMANDS = {
    "plan": _cmd_plan,
    "simulate": _cmd_simulate,
    "pde": _cmd_pde,
    "couple": _cmd_couple,
    "fluctuation": _cmd_fluctuation,
    "meanfield-rate": _cmd_meanfield_rate,
    "chaos": _cmd_chaos,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kslab",
        description="particle and mean-field laboratory for degenerate chemotaxis dynamics",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--workers", type=int, default=None, help="thread count")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            text = fh.read()
        cfg = parse_config(text)
        if args.seed is not None:
            cfg.data["seed"] = int(args.seed)
        os.makedirs(args.out, exist_ok=True)
        _set_workers(_resolve_workers(args, cfg))
        _COMMANDS[args.command](cfg, args.out)
    except KslabError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError):
            payload["violations"] = exc.violations
        print(json.dumps(payload), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc)}), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
