"""Softmax-gated multinomial logistic mixture-of-experts laboratory."""

from .errors import (ContractViolation, InconclusiveError, ParameterRangeError,
                     TransformDomainError)
from .gates import (GateTransform, IDENTITY, IndependenceReport, apply,
                    independence_check)
from .model import (Component, Dataset, MixingMeasure, canonicalize, density,
                    density_matrix, expert_prob, gate_weights, load_dataset,
                    load_measure, log_likelihood, measure_from_dict,
                    measure_to_dict, save_dataset, save_measure, u_value)
from .synth import Scenario, load_scenario, preset, sample, save_scenario
from .em import (FitConfig, FitReport, InitSpec, NewtonConfig, e_step, fit,
                 init_near_truth, init_random, m_step)
from .metrics import (McConfig, McEstimate, VoronoiAssignment, hellinger_expect,
                      tv_expect, voronoi_cells, voronoi_loss)
from .theory import (AdversarialParams, PdeReport, adversarial_params,
                     build_adversarial, classify_regime, collapse_ratio_series,
                     dr_closed_form, pde_interaction_check,
                     reindex_collapsed_first)
from .harness import (ExperimentConfig, RatePoint, RateReport, desk_grid,
                      fit_loglog_slope, run_nll_comparison, run_rate_experiment)

__version__ = "0.1.0"
