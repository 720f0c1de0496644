"""Bayesian integration of preclinical studies for human dose prediction.

The workflow fits hierarchical PK/PD models to animal studies one after the
other, extrapolates the posteriors to humans allometrically, checks which
studies agree using Hellinger distances between variance-standardised dose
distributions, and merges the agreeing ones with a product rule.
"""

from .errors import (CampaignError, ConfigError, ConvergenceWarning, DomainError,
                     DosemergeError)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "CampaignError", "ConfigError", "ConvergenceWarning", "DomainError",
           "DosemergeError", "__version__"]
