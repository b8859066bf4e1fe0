"""Geometric multigrid with tunable relaxation on random-coefficient
diffusion problems."""

from .cycles import (
    CycleSpec,
    Hierarchy,
    SolveReport,
    build_hierarchy,
    coarse_solve,
    multigrid_cycle,
    solve,
    two_grid_cycle,
)
from .problem import (
    DiffusivityField,
    GridGeometry,
    StencilOperator,
    assemble,
    constant_field,
    load_field,
    node_index,
    sample_lognormal_field,
    sample_seeds,
    save_field,
)
from .smoothers import (
    ColorMap,
    SmootherSpec,
    assign_colors,
    build_smoother_matrix,
    make_sweeper,
    spai0_diagonal,
    sweep,
)
from .spectral import (
    ErrorPropagator,
    RateWindow,
    build_two_grid_propagator,
    gelfand_estimate,
    gelfand_loss,
    improvement,
    measured_rate,
    power_iteration,
    spectral_radius,
)
from .transfer import (
    ProlongationOperator,
    bilinear_prolongation,
    blackbox_prolongation,
    galerkin_coarsen,
    make_prolongation,
)
from .optimize import (
    TrainConfig,
    TrainTrace,
    batch_loss,
    coordinate_grid_search,
    gradient,
    local_search,
    omega_sweep,
    theta_to_spec,
    train,
)
from .bench import EnsembleProtocol, stats, win_percentage

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
