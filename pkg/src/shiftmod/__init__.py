"""Discovery and cross-validated TMLE estimation of subgroups with maximal
differential response to stochastic shifts of continuous exposures."""

__version__ = "0.1.0"
