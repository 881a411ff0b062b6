"""Numerical laboratory for the hydrostatic limit of a polluted shallow atmosphere.

Rescaled anisotropic Navier-Stokes + pollutant transport on a staggered grid,
its hydrostatic (primitive-equation) limit, and the diagnostics that turn the
limit analysis into runnable checks: energy ledger, a-priori norms, a
time-translation modulus, weak-form residuals, and eps-sweep convergence
metrics.
"""

from .core import (
    BoundaryForcing,
    DiffusionTensor,
    Grid,
    GridSpec,
    PhysParams,
    build_grid,
    coercivity_constant,
    coriolis_at,
    scale_diffusion,
    unscale_state,
)
from .operators import (
    StaggeredVelocity,
    advect_scalar,
    advect_velocity,
    anisotropic_laplacian,
    apply_concentration_bcs,
    apply_velocity_bcs,
    diffuse_concentration,
    divergence,
    extend_velocity,
    grad_pressure,
)
from .sources import SourceSpec, evaluate_source, source_norm_bound
from .aniso import (
    CFLError,
    NumericsError,
    ProjectionError,
    SimState,
    pressure_projection_anisotropic,
    stable_dt,
    step_anisotropic,
)
from .hydro import diagnose_w, step_hydrostatic, surface_pressure_projection
from .diagnostics import (
    ConvergenceReport,
    EnergyReport,
    RunHistory,
    apriori_norms,
    convergence_metrics,
    energy_balance,
    translation_modulus,
    weak_residual,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .harness import epsilon_sweep, run_simulation, write_csv, write_vtk

__version__ = "0.1.0"
