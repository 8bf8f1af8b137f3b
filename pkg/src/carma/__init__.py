"""Karma-based lane access for the morning commute bottleneck.

Closed-form benchmarks (no control and optimal tolling), the karma game's
stationary Nash equilibrium, performance and fairness metrics, and a
finite-population simulator.
"""
from .benchmarks import VotDistribution, nom_equilibrium, toll_equilibrium
from .bottleneck import BottleneckParams, queue_profile
from .mdp import CommuterType, Population, SocialContext, UrgencyProcess
from .mechanism import KarmaGrid
from .metrics import (
    SchemeMetrics,
    carma_metrics,
    fairness_report,
    interpolate_queue_delay,
    nom_metrics,
    toll_metrics,
    type_average_vot,
)
from .solver import SneSolution, SolverConfig, init_social_state, residuals, solve_sne

__version__ = "0.1.0"

__all__ = [
    "BottleneckParams", "queue_profile", "VotDistribution", "nom_equilibrium", "toll_equilibrium",
    "KarmaGrid", "UrgencyProcess", "CommuterType", "Population", "SocialContext",
    "SolverConfig", "SneSolution", "init_social_state", "solve_sne", "residuals",
    "SchemeMetrics", "carma_metrics", "nom_metrics", "toll_metrics", "fairness_report",
    "interpolate_queue_delay", "type_average_vot",
]
