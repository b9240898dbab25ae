"""Fisher market equilibria with fairness constraints enforced by price interventions."""

from .audit import (EnvyReport, ExposureReport, ParetoGapReport, WelfareDelta, budget_adjusted_envy,
                    buyer_item_pareto_gap, buyer_pareto_gap, exposure, exposure_report, welfare_delta)
from .constraints import (ConstraintResidual, LinearConstraintSet, Multipliers, build_aef, build_pbp, build_pip,
                          evaluate_constraints, interventions_from_multipliers, raw_constraints)
from .errors import (ConstraintError, ConvergenceError, InfeasibleConstraintsError, MarketError, OracleError,
                     RejectionBudgetError, ScenarioError, UnboundedDemandError, UtilityDomainError)
from .lp import LinearProgram, LPResult, solve_lp
from .market import (Allocation, DemandBundle, Market, PriceSystem, best_response_utility, demand_response,
                     eg_objective, excess_demand, linear_utility)
from .opic import (NoisyOracle, OpicState, OpicTrace, RateSchedule, ReplayOracle, SolverOracle,
                   averaged_violation_curve, opic_step, run_opic, time_averaged_violation)
from .solver import (KktReport, SolverConfig, StepSchedule, TaxSubsidyEquilibrium, brute_force_eg,
                     feasibility_presolve, solve_constrained_eg, solve_offset_eg, verify_equilibrium)

__version__ = "0.1.0"
