"""The two-layer scalar-output case: dichotomy, reduction, acceleration.

State is a vector pair (w1, w2) with product z = w2 . w1 driving a scalar
cost f(z). Writing s for the sign of f'(0), the combination u = w1 - s w2
is what separates the two fates of the flow: d = ||u|| is conserved-sign
(u only ever shrinks or grows by the scalar factor s f'(z)), d = 0 pins
the trajectory to the anti-balanced line into the origin, and d > 0 keeps
the flow away from the origin so it must run down f itself.

Everything here reduces to one dimension: z obeys

    dz/dt = -f'(z) sqrt(c + 4 z^2)

where c is the scalar imbalance, conserved and equal to D = S^2 - 4 z^2
with S = ||w1||^2 + ||w2||^2. Larger c means a uniformly faster clock,
which is the acceleration effect; rescaling time by dtau = sqrt(c + 4 z^2) dt
collapses runs with different c onto one curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ovflow.cost import PdpliReport, ScalarCost, pdpli_check
from ovflow.flow import Trajectory, detect_convergence, integrate
from ovflow.linnet import LayerStack, NetShape
from ovflow.odeint import IntegratorConfig, solve_flow

__all__ = [
    "ScalarPairState",
    "anti_balanced",
    "d_metric",
    "conserved_D",
    "to_stack",
    "state_from_stack",
    "full_flow",
    "ReducedTrajectory",
    "reduced_flow",
    "match_reduction",
    "reparameterize_time",
    "AccelReport",
    "compare_acceleration",
    "DichotomyRun",
    "DichotomyReport",
    "dichotomy_experiment",
]


@dataclass(frozen=True)
class ScalarPairState:
    """w1 is the first-layer column, w2 the second-layer row, both length k."""

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        w1 = np.array(self.w1, dtype=float).ravel()
        w2 = np.array(self.w2, dtype=float).ravel()
        if w1.shape != w2.shape or w1.size == 0:
            raise ValueError(f"w1 and w2 must share a positive length, got {w1.shape} and {w2.shape}")
        w1.flags.writeable = False
        w2.flags.writeable = False
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @property
    def z(self) -> float:
        return float(self.w2 @ self.w1)

    @property
    def S(self) -> float:
        return float(self.w1 @ self.w1 + self.w2 @ self.w2)


def anti_balanced(w2: np.ndarray, cost: ScalarCost) -> ScalarPairState:
    """The state on the measure-zero line: w1 = s w2 with s = sign f'(0)."""
    s = cost.sign_at_zero()
    w2 = np.asarray(w2, dtype=float).ravel()
    return ScalarPairState(w1=s * w2, w2=w2)


def d_metric(state: ScalarPairState, cost: ScalarCost) -> float:
    """Distance to the anti-balanced line, d = ||w1 - s w2||."""
    s = cost.sign_at_zero()
    return float(np.linalg.norm(state.w1 - s * state.w2))


def conserved_D(state: ScalarPairState) -> float:
    """D = S^2 - 4 z^2; conserved, nonnegative, and equal to the scalar
    imbalance c of the corresponding stack."""
    return state.S ** 2 - 4.0 * state.z ** 2


def to_stack(state: ScalarPairState) -> LayerStack:
    k = state.w1.size
    return LayerStack(
        NetShape(n=1, k=k, depth=2),
        (state.w1.reshape(k, 1), state.w2.reshape(1, k)),
    )


def state_from_stack(stack: LayerStack) -> ScalarPairState:
    if stack.shape.depth != 2 or stack.shape.n != 1:
        raise ValueError("expected a two-layer scalar-output stack")
    return ScalarPairState(w1=stack.layers[0].ravel(), w2=stack.layers[1].ravel())


def full_flow(
    state0: ScalarPairState,
    cost: ScalarCost,
    cfg: IntegratorConfig,
    checkpoints: Optional[Sequence[float]] = None,
) -> Trajectory:
    """The coupled (w1, w2) flow, run through the generic stack machinery."""
    return integrate(to_stack(state0), cost.as_matrix(), cfg, checkpoints=checkpoints)


@dataclass(frozen=True)
class ReducedTrajectory:
    """Samples of the one-dimensional reduced flow."""

    t: np.ndarray
    z: np.ndarray
    f: np.ndarray
    stop_reason: str


def reduced_flow(
    cost: ScalarCost,
    c: float,
    z0: float,
    cfg: IntegratorConfig,
    checkpoints: Optional[Sequence[float]] = None,
) -> ReducedTrajectory:
    """Integrate dz/dt = -f'(z) sqrt(c + 4 z^2)."""
    if c < -1e-12:
        raise ValueError(f"imbalance c must be nonnegative, got {c}")
    c = max(c, 0.0)

    def field(y: np.ndarray) -> np.ndarray:
        z = float(y[0])
        return np.array([-cost.deriv(z) * math.sqrt(c + 4.0 * z * z)])

    result = solve_flow(field, np.array([z0]), cfg, checkpoints=checkpoints)
    z = result.y[:, 0]
    f = np.array([cost.value(v) for v in z])
    return ReducedTrajectory(t=result.t, z=z, f=f, stop_reason=result.stop_reason)


def match_reduction(cost: ScalarCost, state0: ScalarPairState, cfg: IntegratorConfig) -> float:
    """Max |z_full(t) - z_reduced(t)| over a shared time grid.

    The full pair flow and the reduced flow with c = D(state0) are both
    forced through the same checkpoint times, so the comparison needs no
    interpolation.
    """
    grid = np.linspace(0.0, cfg.t_max, max(2, int(round(cfg.t_max / 0.01)) + 1))
    full = full_flow(state0, cost, cfg, checkpoints=grid)
    reduced = reduced_flow(cost, conserved_D(state0), state0.z, cfg, checkpoints=grid)

    z_full = {s.t: float(np.asarray(s.stack.layers[1] @ s.stack.layers[0])[0, 0]) for s in full.samples}
    z_red = dict(zip(reduced.t, reduced.z))
    shared = sorted(set(z_full) & set(z_red))
    if not shared:
        raise RuntimeError("no shared sample times between full and reduced runs")
    return max(abs(z_full[t] - z_red[t]) for t in shared)


def reparameterize_time(traj: ReducedTrajectory, c: float) -> np.ndarray:
    """Map samples (t, z) to (tau, z) with dtau = sqrt(c + 4 z^2) dt.

    Trapezoidal quadrature; the sampling must be dense enough (spacing at
    most ~0.01) for the clock integral to be trustworthy.
    """
    t = np.asarray(traj.t, dtype=float)
    if t.size < 2:
        return np.column_stack([np.zeros_like(t), traj.z])
    gaps = np.diff(t)
    if gaps.max() > 0.0101:
        raise ValueError(f"sample spacing {gaps.max():.4g} too coarse for the clock integral")
    speed = np.sqrt(c + 4.0 * np.asarray(traj.z) ** 2)
    tau = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * gaps)])
    return np.column_stack([tau, traj.z])


@dataclass(frozen=True)
class AccelReport:
    """Cost-versus-time curves for a low and a high imbalance run from the
    same z0, plus the sup-norm mismatch of z(tau) after the clock change."""

    t_grid: np.ndarray
    cost_low_c: np.ndarray
    cost_high_c: np.ndarray
    tau_collapse_error: float
    tau_grid: np.ndarray
    z_low_tau: np.ndarray
    z_high_tau: np.ndarray


def compare_acceleration(
    cost: ScalarCost,
    z0: float,
    c_low: float,
    c_high: float,
    cfg: IntegratorConfig,
    allow_degenerate: bool = False,
) -> AccelReport:
    """Race two reduced flows that differ only in imbalance.

    Preconditions: c_low < c_high and the start is not already critical
    (f'(z0) != 0). With c_low = 0 and z0 = 0 the low run never moves; that
    degenerate race is refused unless allow_degenerate is set.
    """
    if not c_high > c_low:
        raise ValueError(f"need c_low < c_high, got {c_low} >= {c_high}")
    if cost.deriv(z0) == 0.0:
        raise ValueError(f"z0 = {z0} is already a critical point of f")
    if c_low == 0.0 and z0 == 0.0 and not allow_degenerate:
        raise ValueError("c = 0 from z0 = 0 never moves; pass allow_degenerate to race it anyway")

    grid = np.linspace(0.0, cfg.t_max, max(2, int(round(cfg.t_max / 0.005)) + 1))
    low = reduced_flow(cost, c_low, z0, cfg, checkpoints=grid)
    high = reduced_flow(cost, c_high, z0, cfg, checkpoints=grid)

    t_shared = np.array(sorted(set(low.t) & set(high.t)))
    f_low = dict(zip(low.t, low.f))
    f_high = dict(zip(high.t, high.f))
    cost_low = np.array([f_low[t] for t in t_shared])
    cost_high = np.array([f_high[t] for t in t_shared])

    tau_low = reparameterize_time(low, c_low)
    tau_high = reparameterize_time(high, c_high)
    tau_end = min(tau_low[-1, 0], tau_high[-1, 0])
    tau_grid = np.linspace(0.0, tau_end, 200)
    z_low = np.interp(tau_grid, tau_low[:, 0], tau_low[:, 1])
    z_high = np.interp(tau_grid, tau_high[:, 0], tau_high[:, 1])
    err = float(np.max(np.abs(z_low - z_high))) if tau_end > 0 else 0.0

    return AccelReport(
        t_grid=t_shared,
        cost_low_c=cost_low,
        cost_high_c=cost_high,
        tau_collapse_error=err,
        tau_grid=tau_grid,
        z_low_tau=z_low,
        z_high_tau=z_high,
    )


@dataclass(frozen=True)
class DichotomyRun:
    kind: str  # "generic" or "anti_balanced"
    d0: float
    D0: float
    final_cost: float
    final_state_norm: float
    label: str


@dataclass(frozen=True)
class DichotomyReport:
    runs: tuple[DichotomyRun, ...]
    pdpli: PdpliReport
    generic_converged: bool
    anti_converged_to_origin: bool

    @property
    def passed(self) -> bool:
        return self.generic_converged and self.anti_converged_to_origin


def dichotomy_experiment(
    cost: ScalarCost,
    k: int,
    cfg: IntegratorConfig,
    n_generic: int = 20,
    n_anti: int = 5,
    seed: int = 0,
    scan_interval: tuple[float, float] = (-3.0, 3.0),
) -> DichotomyReport:
    """Run the two-fates battery for a gradient-dominated scalar cost.

    Generic starts (d > 0) must drive f to its infimum; anti-balanced
    starts (d = 0) must collapse to the origin, where f keeps the value
    f(0). Preconditions checked here: f'(0) != 0, f(0) above the infimum,
    and the gradient-dominance scan passing on the given interval.
    """
    s = cost.sign_at_zero()
    report = pdpli_check(cost, scan_interval)
    if not report.passed:
        raise ValueError(f"cost fails the gradient-dominance scan at w = {report.witness}")
    fmin = cost.min_value if cost.min_value is not None else _grid_min(cost, scan_interval)
    if not cost.value(0.0) > fmin + 1e-9:
        raise ValueError("f(0) must sit strictly above the infimum for the dichotomy to bite")

    rng = np.random.default_rng(seed)
    runs = []

    for _ in range(n_generic):
        w1 = rng.normal(0.0, 0.5, size=k)
        w2 = rng.normal(0.0, 0.5, size=k)
        while np.linalg.norm(w1 - s * w2) < 0.05:
            w1 = rng.normal(0.0, 0.5, size=k)
            w2 = rng.normal(0.0, 0.5, size=k)
        runs.append(("generic", ScalarPairState(w1=w1, w2=w2)))

    for _ in range(n_anti):
        w2 = rng.normal(0.0, 0.5, size=k)
        while np.linalg.norm(w2) < 0.05:
            w2 = rng.normal(0.0, 0.5, size=k)
        runs.append(("anti_balanced", anti_balanced(w2, cost)))

    results = []
    for kind, state0 in runs:
        traj = full_flow(state0, cost, cfg)
        final = traj.final
        final_state = state_from_stack(final.stack)
        results.append(
            DichotomyRun(
                kind=kind,
                d0=d_metric(state0, cost),
                D0=conserved_D(state0),
                final_cost=final.cost,
                final_state_norm=float(
                    np.linalg.norm(np.concatenate([final_state.w1, final_state.w2]))
                ),
                label=detect_convergence(traj, cost.as_matrix()).label,
            )
        )

    generic_ok = all(
        abs(r.final_cost - fmin) < 1e-6 for r in results if r.kind == "generic"
    )
    f_origin = cost.value(0.0)
    anti_ok = all(
        r.final_state_norm < 1e-4 and abs(r.final_cost - f_origin) < 1e-6
        for r in results
        if r.kind == "anti_balanced"
    )
    return DichotomyReport(
        runs=tuple(results),
        pdpli=report,
        generic_converged=generic_ok,
        anti_converged_to_origin=anti_ok,
    )


def _grid_min(cost: ScalarCost, interval: tuple[float, float]) -> float:
    grid = np.linspace(interval[0], interval[1], 2001)
    return min(cost.value(w) for w in grid)
