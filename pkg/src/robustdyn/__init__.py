"""Worst-case bounds for dynamic discrete-choice counterfactuals.

The latent-state transition law of a structural model is allowed to move
inside a KL ball around a reference law.  Bounds on scalar counterfactuals
come from entropic optimal transport duality and an annealed MCMC search
over the dual variables.
"""
from .errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    InfeasibleError,
    NumericalError,
    RobustDynError,
    SupportError,
)
from .measures import (
    Coupling,
    DiscreteMeasure,
    Grid,
    KdeEstimate,
    MarkovChain,
    discretize_ar1,
    joint_from_chain,
    kde_fit,
    kl_divergence,
    marginal,
    product_coupling,
)

__version__ = "0.1.0"
