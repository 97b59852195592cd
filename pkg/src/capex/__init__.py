"""capex: learn capability models of black-box subjects by active experimentation."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    DirichletCPT,
    Instantiation,
    ModelState,
    NetworkStructure,
    VariableSpec,
    dirichlet_expected_kl,
    entropy,
    enumerate_instantiations,
    instantiation_at,
    kl_divergence,
    posterior_mean,
    posterior_update,
    situation_at,
    situation_index,
    uniform_model,
)
