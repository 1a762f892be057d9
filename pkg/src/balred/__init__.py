"""Equivalence transformations between balance laws and autonomous conservation laws."""
from .expr import (Compiled, EvalError, Expr, ParseError, diff_expr, eval_expr, parse_expr,
                   simplify, substitute, to_string)
from .flow import GeneratorSpec, lie_flow
from .solver import (SolverConfig, isentropic_vortex_field, pushforward_field,
                     solve_balance_splitting, solve_conservation)
from .systems import (AnalyticField, BalanceSystem, ConservationSystem, DiscreteField,
                      ExprBalanceSystem, Grid, build_euler_energy_system, build_euler_system,
                      ideal_gas_pressure, residual)
from .transforms import (check_divergence_free, derive_closed_form, euler_composed_transform,
                         invert, make_map, rotating_gravity_system, select_centrifugal_signs,
                         xi1_transform, xi5to10_transform, xi11_transform, xi12_transform,
                         xi234_transform)
from .verify import (compare_fields, exact_riemann_euler, group_law_check,
                     residual_convergence)

__version__ = "0.1.0"
