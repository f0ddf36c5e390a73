"""Neural counterfactual generation under covariate and domain shift."""

__version__ = "0.1.0"
