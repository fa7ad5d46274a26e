"""Exploratory dividend control under a hidden two-state regime."""
from .core import (ConfigError, ControlConfig, DomainError, EnvParams, NoPositiveRoot,
                   boundary_targets, entropy_reward, entropy_reward_sensitivity,
                   f_lambda, f_lambda_prime, f_lambda_second, gibbs_cdf, gibbs_density,
                   kappa_from_quadratic, sample_action, value_surface)
from .parametric import ParametricModel, ThetaParams

__version__ = "0.1.0"
