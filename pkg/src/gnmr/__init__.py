"""Gauss-Newton matrix recovery (GNMR) for low-rank matrix sensing and completion."""

from .algorithm import (balance_factors, check_stopping, final_estimate, gnmr_step, parse_variant,
                        run_gnmr, variant_name, GnmrState)
from .diagnostics import (NeighborhoodReport, balance, incoherence_mu, neighborhood_report,
                          procrustes_distance, recovery_success, rel_rmse, rip_delta, rip_probe)
from .harness import SweepResult, SweepSpec, Variant, load_config, parse_config, run_sweep
from .model import (FactorPair, GnmrConfig, IterationRecord, IterationTrace, LowRankMatrix,
                    ProblemInstance, StoppingCriteria, dense, frobenius_error)
from .operators import (GaussianEnsemble, LinearizedOperator, MeasurementModel, SamplingPattern,
                        adjoint, apply, linearized_adjoint, linearized_apply, rhs_for_alpha)
from .probgen import (PatternInfeasibleError, SpectrumSpec, completion_instance, make_observations,
                      random_low_rank, sample_pattern, sensing_instance)
from .solver import SolveReport, SolverError, solve_min_norm
from .spectral import InitConfig, InitResult, bsvd, estimate_sigma_r, spectral_init

__version__ = "0.1.0"
