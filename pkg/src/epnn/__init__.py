"""Factorized EP for two-layer neural-network regression with sparse priors."""

from .activation import g, mean_g, var_g
from .data import Dataset, load_csv, normalize, synth_case, synth_case_raw
from .engine import (EPFit, FitConfig, FitReport, PosteriorState, fit,
                     initialize, loo_density, marginal_likelihood, sweep_likelihood)
from .exceptions import (CavityCollapse, ConfigError, ConstantColumnError,
                         DegenerateMass, DimensionMismatch, Diverged,
                         DowndateViolation, EPError, NonFiniteError,
                         NotPositiveDefinite, ParseError, SkippedUpdate)
from .gaussians import (Gaussian1D, GaussianDense, NaturalSite1D,
                        assemble_posterior_v, assemble_posterior_w, cavity_scalar,
                        log_partition, rank_one_update)
from .likelihood import (CavityBundle, LikelihoodSites, TiltedSummary, cavity_v,
                         predictive_f_moments, site_update_scalar, site_update_v,
                         tilted_h, tilted_theta, tilted_v)
from .modelfile import load_config, load_model, save_model
from .prediction import PredictiveMoments, evaluate, predict, predict_batch
from .priors import (OutputPriorSites, PriorConfig, WeightPriorSites,
                     partial_Z_and_conditionals, prior_sweep_v, prior_sweep_w,
                     tilted_truncated_t, tilted_w_phi)
from .quadrature import QuadratureRule, gauss_hermite_rule, quad_moments, uniform_rule

__version__ = "0.1.0"
