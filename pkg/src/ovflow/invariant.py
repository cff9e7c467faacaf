"""Conserved quantities of the factored gradient flow.

Along the flow every adjacent pair of layers conserves the symmetric matrix

    C_i = W_i W_i^T - W_{i+1}^T W_{i+1},

so these act as a fingerprint of the initial condition. ``drift`` measures
how far a numerical trajectory lets that fingerprint move; the scalar
imbalance c = 2 tr(C^2) - (tr C)^2 is the single number that controls the
two-layer scalar-output case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ovflow.linnet import LayerStack

__all__ = ["InvariantSet", "invariants", "imbalance_scalar", "norm_chain_residual", "drift"]


@dataclass(frozen=True)
class InvariantSet:
    """The N-1 balance matrices of a stack, their traces, and, for the
    two-layer scalar-output case, the scalar imbalance c."""

    matrices: tuple[np.ndarray, ...]
    traces: tuple[float, ...]
    imbalance_c: Optional[float]


def invariants(stack: LayerStack) -> InvariantSet:
    """Balance matrices C_i = W_i W_i^T - W_{i+1}^T W_{i+1} for i = 1..N-1."""
    if stack.shape.depth < 2:
        raise ValueError("invariants need at least two layers")
    mats = []
    for a, b in zip(stack.layers[:-1], stack.layers[1:]):
        c = a @ a.T - b.T @ b
        c.flags.writeable = False
        mats.append(c)
    traces = tuple(float(np.trace(c)) for c in mats)
    imbalance = None
    if stack.shape.depth == 2 and stack.shape.n == 1:
        # numpy arithmetic throughout: near-overflow states (a flow stopped
        # on non_finite) must give inf here, not raise
        with np.errstate(over="ignore", invalid="ignore"):
            c = mats[0]
            imbalance = float(2.0 * np.trace(c @ c) - np.float64(traces[0]) ** 2)
    return InvariantSet(matrices=tuple(mats), traces=traces, imbalance_c=imbalance)


def imbalance_scalar(inv: InvariantSet) -> float:
    """c = 2 tr(C^2) - (tr C)^2 for a single balance matrix."""
    if len(inv.matrices) != 1:
        raise ValueError("scalar imbalance is defined for two-layer stacks only")
    c = inv.matrices[0]
    with np.errstate(over="ignore", invalid="ignore"):
        return float(2.0 * np.trace(c @ c) - np.trace(c) ** 2)


def norm_chain_residual(stack: LayerStack, inv0: InvariantSet) -> list[float]:
    """How far the stack is from ||W_i||_F^2 - ||W_{i+1}||_F^2 = tr C_i(0).

    inv0 is the invariant set of the initial condition; zero residuals mean
    the Frobenius-norm chain implied by conservation still holds.
    """
    if len(inv0.traces) != stack.shape.depth - 1:
        raise ValueError("invariant set does not match the stack depth")
    norms = [float(np.sum(layer * layer)) for layer in stack.layers]
    return [
        abs(norms[i] - norms[i + 1] - inv0.traces[i])
        for i in range(stack.shape.depth - 1)
    ]


def drift(traj) -> float:
    """Worst normalized invariant drift along a trajectory.

    max over samples t and pairs i of
    ||C_i(t) - C_i(0)||_F / (1 + ||C_i(0)||_F). Zero for an exact flow;
    for a numerical one this is the conservation error of the integrator.
    """
    samples = getattr(traj, "samples", traj)
    if len(samples) == 0:
        raise ValueError("empty trajectory")
    worst = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        base = invariants(samples[0].stack).matrices
        scales = [1.0 + float(np.linalg.norm(c)) for c in base]
        for sample in samples:
            now = invariants(sample.stack).matrices
            for c0, c1, scale in zip(base, now, scales):
                err = float(np.linalg.norm(c1 - c0)) / scale
                if err > worst:
                    worst = err
    return worst
