"""A two-parameter sigmoidal model with the same conservation structure.

The model trains y = w2 * sigma(w1) with sigma(z) = z / sqrt(1 + z^2)
toward the value 1 under the loss (1 - w2 sigma(w1))^2. Its flow field

    dw1/dt = (w2 sqrt(1 + w1^2) - w2^2 w1) / (1 + w1^2)^2
    dw2/dt = (w1 sqrt(1 + w1^2) - w2 w1^2) / (1 + w1^2)

conserves C = w2^2 - (1 + w1^2)^2 / 2, the nonlinear analogue of the layer
balance invariant. The origin is a strict saddle whose stable manifold is
exactly the branch of the level set C = -1/2 through it,

    w2 = +- w1 sqrt((2 + w1^2) / 2),

so tracing the separatrix numerically and comparing against that formula
is a closed-form test of the whole pipeline. A linear comparison model
(train y = w2 * w1 toward 1) is included for side-by-side portraits; its
separatrices are the lines w2 = +- w1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ovflow.odeint import IntegratorConfig, solve_flow

__all__ = [
    "SigState",
    "sigma",
    "sig_flow_field",
    "sig_invariant",
    "sig_cost",
    "manifold_curve",
    "SigSample",
    "SigTrajectory",
    "sig_integrate",
    "origin_eigenvectors",
    "separatrix_trace",
    "linear_field",
    "PortraitData",
    "phase_portrait",
    "write_portrait_csv",
    "write_overlays_csv",
]


@dataclass(frozen=True)
class SigState:
    w1: float
    w2: float


def sigma(z: Union[float, np.ndarray]):
    """The bounded nonlinearity z / sqrt(1 + z^2)."""
    return z / np.sqrt(1.0 + np.square(z))


def _field_arrays(w1, w2):
    one = 1.0 + np.square(w1)
    root = np.sqrt(one)
    dw1 = (w2 * root - np.square(w2) * w1) / np.square(one)
    dw2 = (w1 * root - w2 * np.square(w1)) / one
    return dw1, dw2


def sig_flow_field(state: SigState) -> tuple[float, float]:
    """Right-hand side of the sigmoidal flow at a state."""
    dw1, dw2 = _field_arrays(state.w1, state.w2)
    return float(dw1), float(dw2)


def sig_invariant(state: SigState) -> float:
    """C = w2^2 - (1 + w1^2)^2 / 2; constant along the flow."""
    return state.w2**2 - 0.5 * (1.0 + state.w1**2) ** 2


def sig_cost(state: SigState) -> float:
    return (1.0 - state.w2 * float(sigma(state.w1))) ** 2


def manifold_curve(w1: Union[float, np.ndarray]):
    """The two branches (plus, minus) of the origin's invariant manifold."""
    mag = np.abs(w1) * np.sqrt((2.0 + np.square(w1)) / 2.0)
    branch = np.where(np.asarray(w1) >= 0, mag, -mag)
    return branch, -branch


@dataclass(frozen=True)
class SigSample:
    t: float
    w1: float
    w2: float
    invariant: float
    cost: float


@dataclass(frozen=True)
class SigTrajectory:
    samples: tuple[SigSample, ...]
    stop_reason: str

    @property
    def final(self) -> SigSample:
        return self.samples[-1]


def _sig_rhs(y: np.ndarray) -> np.ndarray:
    dw1, dw2 = _field_arrays(y[0], y[1])
    return np.array([dw1, dw2])


def sig_integrate(
    state0: SigState,
    cfg: IntegratorConfig,
    checkpoints: Optional[Sequence[float]] = None,
) -> SigTrajectory:
    """Integrate the sigmoidal flow from state0."""
    result = solve_flow(_sig_rhs, np.array([state0.w1, state0.w2]), cfg, checkpoints=checkpoints)
    samples = tuple(
        SigSample(
            t=float(t),
            w1=float(y[0]),
            w2=float(y[1]),
            invariant=sig_invariant(SigState(float(y[0]), float(y[1]))),
            cost=sig_cost(SigState(float(y[0]), float(y[1]))),
        )
        for t, y in zip(result.t, result.y)
    )
    return SigTrajectory(samples=samples, stop_reason=result.stop_reason)


def origin_eigenvectors(h: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """(stable, unstable) unit eigenvectors of the numerically linearized
    field at the origin, oriented into the w1 > 0 half plane."""
    jac = np.empty((2, 2))
    for j in range(2):
        step = np.zeros(2)
        step[j] = h
        jac[:, j] = (_sig_rhs(step) - _sig_rhs(-step)) / (2.0 * h)
    eigvals, eigvecs = np.linalg.eig(jac)
    eigvals = eigvals.real
    eigvecs = eigvecs.real
    order = np.argsort(eigvals)
    stable = eigvecs[:, order[0]]
    unstable = eigvecs[:, order[-1]]
    stable = stable / np.linalg.norm(stable)
    unstable = unstable / np.linalg.norm(unstable)
    if stable[0] < 0:
        stable = -stable
    if unstable[0] < 0:
        unstable = -unstable
    return stable, unstable


def separatrix_trace(
    sign: str,
    direction: str,
    cfg: IntegratorConfig,
    eps: float = 1e-6,
    radius: float = 4.0,
) -> np.ndarray:
    """Trace an invariant manifold branch of the origin as a polyline.

    sign is "plus" or "minus" (which half plane the branch leaves through);
    direction "forward" follows the unstable manifold with the flow, while
    "backward" runs time-reversed along the stable manifold, which is the
    branch the closed-form curve describes. Integration starts eps off the
    origin along the matching eigenvector and stops at cfg.t_max or once
    the state leaves the given radius.
    """
    if sign not in ("plus", "minus"):
        raise ValueError(f"sign must be 'plus' or 'minus', got {sign!r}")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must be a small positive offset")

    stable, unstable = origin_eigenvectors()
    vec = unstable if direction == "forward" else stable
    if sign == "minus":
        vec = -vec
    y0 = eps * vec

    rhs = _sig_rhs if direction == "forward" else (lambda y: -_sig_rhs(y))
    checkpoints = np.arange(0.01, cfg.t_max, 0.01)
    result = solve_flow(
        rhs,
        y0,
        cfg,
        checkpoints=checkpoints,
        stop_when=lambda t, y: bool(np.max(np.abs(y)) > radius),
    )
    return result.y.copy()


def linear_field(w1, w2):
    """Gradient flow of (1 - w2 w1)^2 in two scalar parameters; the
    comparison model whose separatrices are straight lines."""
    resid = 2.0 * (1.0 - w2 * w1)
    return resid * w2, resid * w1


@dataclass(frozen=True)
class PortraitData:
    """A sampled vector field plus overlay curves, ready for CSV/SVG export.

    w1, w2, dw1, dw2 are flat arrays over the grid (row-major). Overlays
    are (curve_id, polyline) pairs with polylines as (m, 2) arrays.
    """

    kind: str
    bounds: tuple[float, float, float, float]
    grid: int
    w1: np.ndarray
    w2: np.ndarray
    dw1: np.ndarray
    dw2: np.ndarray
    overlays: tuple[tuple[str, np.ndarray], ...]


def _clip_curve(w1: np.ndarray, w2: np.ndarray, bounds) -> np.ndarray:
    lo1, hi1, lo2, hi2 = bounds
    keep = (w1 >= lo1) & (w1 <= hi1) & (w2 >= lo2) & (w2 <= hi2)
    return np.column_stack([w1[keep], w2[keep]])


def phase_portrait(
    bounds: tuple[float, float, float, float],
    grid: int,
    include_manifolds: bool = True,
    kind: str = "sigmoid",
) -> PortraitData:
    """Sample the flow field on a uniform grid with overlay curves.

    Overlays: the target (equilibrium) curve branches, and, when requested,
    the origin's separatrix branches from the closed-form expressions.
    """
    if kind not in ("sigmoid", "linear"):
        raise ValueError(f"kind must be 'sigmoid' or 'linear', got {kind!r}")
    lo1, hi1, lo2, hi2 = (float(b) for b in bounds)
    if not (lo1 < hi1 and lo2 < hi2):
        raise ValueError(f"degenerate bounds {bounds}")
    if grid < 2:
        raise ValueError("grid must be at least 2")

    xs = np.linspace(lo1, hi1, grid)
    ys = np.linspace(lo2, hi2, grid)
    g1, g2 = np.meshgrid(xs, ys, indexing="ij")
    if kind == "sigmoid":
        d1, d2 = _field_arrays(g1, g2)
    else:
        d1, d2 = linear_field(g1, g2)

    overlays = []
    span = np.linspace(lo1, hi1, 801)
    if kind == "sigmoid":
        # target curve w2 = 1 / sigma(w1), one branch per sign of w1
        pos = span[span > 1e-3]
        neg = span[span < -1e-3]
        overlays.append(("target_pos", _clip_curve(pos, 1.0 / np.asarray(sigma(pos)), bounds)))
        overlays.append(("target_neg", _clip_curve(neg, 1.0 / np.asarray(sigma(neg)), bounds)))
        if include_manifolds:
            plus, minus = manifold_curve(span)
            overlays.append(("manifold_plus", _clip_curve(span, np.asarray(plus), bounds)))
            overlays.append(("manifold_minus", _clip_curve(span, np.asarray(minus), bounds)))
    else:
        pos = span[span > 1e-3]
        neg = span[span < -1e-3]
        overlays.append(("target_pos", _clip_curve(pos, 1.0 / pos, bounds)))
        overlays.append(("target_neg", _clip_curve(neg, 1.0 / neg, bounds)))
        if include_manifolds:
            overlays.append(("manifold_plus", _clip_curve(span, span, bounds)))
            overlays.append(("manifold_minus", _clip_curve(span, -span, bounds)))

    return PortraitData(
        kind=kind,
        bounds=(lo1, hi1, lo2, hi2),
        grid=grid,
        w1=g1.ravel(),
        w2=g2.ravel(),
        dw1=np.asarray(d1).ravel(),
        dw2=np.asarray(d2).ravel(),
        overlays=tuple(overlays),
    )


def write_portrait_csv(portrait: PortraitData, path: str) -> None:
    """Field samples as w1,w2,dw1,dw2 rows, 17 significant digits."""
    with open(path, "w", newline="") as handle:
        handle.write("w1,w2,dw1,dw2\n")
        for a, b, c, d in zip(portrait.w1, portrait.w2, portrait.dw1, portrait.dw2):
            handle.write(f"{a:.17g},{b:.17g},{c:.17g},{d:.17g}\n")


def write_overlays_csv(portrait: PortraitData, path: str) -> None:
    """All overlay polylines in one file, tagged by curve_id."""
    with open(path, "w", newline="") as handle:
        handle.write("w1,w2,curve_id\n")
        for curve_id, polyline in portrait.overlays:
            for a, b in polyline:
                handle.write(f"{a:.17g},{b:.17g},{curve_id}\n")
