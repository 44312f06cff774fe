"""Equation discovery for partially observed stochastic systems.

The learning loop alternates conditional-Gaussian sampling of hidden paths,
causation-entropy structure selection and constrained maximum likelihood.
"""

__version__ = "0.1.0"
