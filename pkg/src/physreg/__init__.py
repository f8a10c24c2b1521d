"""Physics-encoded spatio-temporal regression.

Recover the initial condition of ``u' + L u = 0`` from scattered noisy
observations with a truncated eigenbasis least-squares estimator.
"""

from .eigen import (EigenSystem, MultiplicityWarning, analytic_eigensystem_neumann_1d,
                    analytic_eigensystem_periodic_2d, numeric_eigensystem,
                    verify_orthonormality)
from .estimator import (NoFeasibleCutoff, RankDeficient, SpectralFit, TheoryParams,
                        build_design, fit_fixed_K, ise, select_K, solve_ls)
from .evolution import GridFixed, ObservationSet, generate_observations, propagate
from .operators import BoundaryKind, DomainSpec, Lap1D, Lap2D, SL1D, symmetrize
from .penalized import PenalizedSpec, fit_penalized, gcv_select
from .simstudy import StudyConfig, StudyReport, run_rate_study, run_table1

__version__ = "0.1.0"
