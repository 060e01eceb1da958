"""kslab: particle and mean-field laboratory for degenerate chemotaxis dynamics.

Simulates a moderately interacting stochastic particle system whose drift
combines a mollified Newtonian attraction with a cutoff porous-medium
repulsion, solves the matching smoothed and limiting mean-field equations
on a box, couples trajectories on shared noise, and measures convergence
rates and propagation-of-chaos metrics at desk scale.
"""

from .errors import (
    BlowUpError,
    ConfigError,
    DegenerateFitError,
    FormatError,
    KslabError,
    OutOfDomainError,
    SingularityError,
    StepSizeError,
)
from .kernels import (
    CoulombKernel,
    KernelBoundProbe,
    Mollifier,
    MollifiedCoulomb,
    coulomb_constant,
    coulomb_grad,
    coulomb_phi,
    enclosed_mass,
    kernel_bound_probe,
    mollified_coulomb_grad,
    mollifier_eval,
    mollifier_grad,
    mollifier_normalize,
)
from .nonlinearity import CutoffPressure, p_lambda_eval, p_lambda_prime, p_lambda_second, pressure
from .noise import NoiseStream
from .particles import (
    KernelParams,
    ParticleEnsemble,
    SimConfig,
    aggregation_drift,
    drift_all_celllist,
    drift_all_direct,
    em_stability_cap,
    em_step,
    mollified_empirical_density,
    repulsion_drift,
    simulate,
)
from .pde import (
    FieldHistory,
    GridField,
    InitialDatum,
    MeanFieldPDE,
    interpolate_field,
    interpolate_gradient,
    pde_rhs,
    pde_solve,
    poisson_free_space,
    sample_initial,
)
from .coupling import CoupledRun, ErrorReport, coupled_run, simulate_intermediate, simulate_limit, trajectory_error
from .experiments import (
    FitResult,
    MarginalReport,
    ScalingPlan,
    StudyResult,
    fluctuation_study,
    marginal_metrics,
    meanfield_rate_study,
    pair_independence,
    plan_parameters,
    rate_fit,
    resampling_baseline,
    sample_field,
    sliced_w1,
)

__version__ = "0.1.0"
