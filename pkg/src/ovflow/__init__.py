"""Numerical laboratory for overparameterized gradient flows of deep linear networks.

The package studies what happens when a matrix objective f(W) is optimized
through a factored parameterization W = W_N ... W_2 W_1 under gradient flow:
which quantities stay conserved, when the factored flow still reaches a
minimizer of f, how layer imbalance speeds the flow up, and how the spurious
critical points that the factorization introduces can be certified as strict
saddles. A two-parameter sigmoidal model with the same conservation structure
is included as a nonlinear proof of concept.
"""

from ovflow.cost import QuadraticMatrixCost, ScalarCost, parse_scalar_cost, pdpli_check
from ovflow.linnet import LayerStack, NetShape, balanced_init, layer_gradients, product, random_init, rescale_pair
from ovflow.invariant import InvariantSet, drift, imbalance_scalar, invariants, norm_chain_residual
from ovflow.odeint import IntegratorConfig
from ovflow.flow import Trajectory, detect_convergence, integrate, integrate_baseline, sweep

__all__ = [
    "QuadraticMatrixCost",
    "ScalarCost",
    "parse_scalar_cost",
    "pdpli_check",
    "LayerStack",
    "NetShape",
    "balanced_init",
    "layer_gradients",
    "product",
    "random_init",
    "rescale_pair",
    "InvariantSet",
    "drift",
    "imbalance_scalar",
    "invariants",
    "norm_chain_residual",
    "IntegratorConfig",
    "Trajectory",
    "detect_convergence",
    "integrate",
    "integrate_baseline",
    "sweep",
]

__version__ = "0.1.0"
