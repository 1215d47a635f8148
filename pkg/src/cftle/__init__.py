"""Exponent fields for passive and controlled agents in analytic unsteady
flows, with receding-horizon control policies and their diagnostics."""

__version__ = "0.1.0"

from .flowfield import (DoubleGyre, DoubleGyreParams, RotationFlow, SaddleFlow,
                        ZeroFlow, double_gyre_velocity, make_flow,
                        rotation_velocity, saddle_velocity)
from .grids import DomainBox, GridSpec, ScalarField, VectorField
from .integrate import (IntegrationError, StepSpec, Trajectory, advect,
                        flow_map_grid, step)
from .ftle import (extract_ridges, flow_map_jacobian, ftle_field,
                   ftle_from_flow_map, max_singular_value_2x2,
                   sigma_from_jacobian)
from .ocp import (ActuationBounds, BatchSolution, CostWeights, GoalSpec,
                  HorizonSpec, OcpSolution, SolverOptions, first_action,
                  gradient, rollout, solve_ocp, solve_ocp_batch)
from .policy import (ControlledField, GenerationReport, PolicyGrid,
                     controlled_field, generate_mpc_policy, load_policy,
                     reverse_policy_periodic, save_policy)
from .diagnostics import (PatchSpec, accumulated_state_error_field,
                          advect_patches, check_grad_jf, check_hjb_relation,
                          energy_field, field_distance, ridge_centroid_x,
                          sunflower_disk, terminal_cost_field)
from .serialization import (FormatError, config_hash, read_field, write_field)
from .render import render_pgm, write_pgm
from .config import ConfigError, RunConfig, load_config, parse_config
