"""Uplink of an IRS-assisted multi-user MISO system with hardware impairments.

The package computes channel statistics, LMMSE estimates, the closed-form
use-and-then-forget spectral efficiency and its gradient with respect to the
IRS phases, optimises the phases by projected gradient ascent, and checks
every closed-form expectation by Monte-Carlo simulation.
"""

from .channel import (ChannelStatistics, NumericError, RbmPhases, build_statistics,
                      cached_statistics, effective_covariances)
from .estimation import EstimatorState, estimator_state, nmse, perfect_csi_state
from .montecarlo import McReport, McRow, mc_nmse, mc_sinr_terms
from .optimizer import (OptimizerConfig, OptimizerTrace, grad_sum_se, project_unit_modulus,
                        run_pga)
from .performance import SinrBreakdown, UatfModel, closed_form_sinr, evaluate, sum_se
from .scenario import (PhaseNoiseModel, Scenario, ScenarioError, default_scenario,
                       load_scenario)
from .sweeps import Curve, SweepSpec, perfect_csi_mode, run_sweep

__version__ = "0.1.0"

__all__ = [
    "ChannelStatistics", "Curve", "EstimatorState", "McReport", "McRow", "NumericError",
    "OptimizerConfig", "OptimizerTrace", "PhaseNoiseModel", "RbmPhases", "Scenario",
    "ScenarioError", "SinrBreakdown", "SweepSpec", "UatfModel", "build_statistics",
    "cached_statistics", "closed_form_sinr", "default_scenario", "effective_covariances",
    "estimator_state", "evaluate", "grad_sum_se", "load_scenario", "mc_nmse", "mc_sinr_terms",
    "nmse", "perfect_csi_mode", "perfect_csi_state", "project_unit_modulus", "run_pga",
    "run_sweep", "sum_se",
]
