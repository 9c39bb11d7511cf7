"""Simulation and physics-informed learning toolkit for a 2D all-vanadium
flow cell: physics closures, a damped-Newton reference solver, composite
physics-informed networks with self-adaptive loss weighting, a two-phase
trainer, and CSV/JSON command-line tools.
"""

from .physics import (
    CellParameters, ElectrolyteComposition, Side, Stage,
    average_current_density, background_composition, close_composition,
    effective_conductivities, ionic_conductivity, ocv, overpotential,
    clamp_overpotential, butler_volmer, inlet_concentration, equation_scale,
    cell_ocv, replace_params,
)
from .refsolver import (
    Grid, FieldState, SolveReport, SweepResult, AssemblyError, SolverError,
    newton_solve, sweep_soc, cell_voltage, integrated_currents,
    collector_current_profile, membrane_current_profile,
    positive_collector_current_profile, outlet_profiles,
)
from .network import (
    ModifiedFNN, CompositeNet, init_weights, save_model, load_model,
)
from .derivatives import (
    DiffBundle, EvalRequest, eval_many, eval_with_spatial_derivatives,
    loss_gradient, sa_weight_gradient,
)
from .sampling import SamplingConfig, SamplingPlan, LabeledSet, build_sampling_plan
from .loss import (
    OPERATORS, OPERATOR_IDS, SAWeights, LossBreakdown, total_loss,
    all_residuals, epinn_residual, data_residuals,
)
from .training import TrainConfig, TrainResult, train, PINNModel
from .io import VoltageCurve, ComparisonReport, compare_outputs

__version__ = "0.1.0"
