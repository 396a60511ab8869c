"""Interpretable survival analysis: Cox risk models, symbolic feature
distillation, and quantile risk stratification."""

from survfix.outcomes import Outcomes
from survfix.errors import SurvfixError

__version__ = "0.1.0"

__all__ = ["Outcomes", "SurvfixError", "__version__"]
