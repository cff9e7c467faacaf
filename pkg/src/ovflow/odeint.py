"""Explicit Runge-Kutta integration of autonomous fields.

Two methods are provided: the Dormand-Prince 5(4) embedded pair with a
proportional-integral step controller (the default), and fixed-step
classical RK4. Both treat the state as a flat float vector; callers pack
and unpack their own structures.

The solver stops on whichever comes first: the field norm dropping below
``grad_tol`` (convergence), reaching ``t_max``, exhausting ``max_steps``,
a non-finite state (the last finite sample is kept), or a caller-supplied
predicate. ``checkpoints`` are times the solver must land on exactly;
they are always recorded, which is how trajectories from different systems
get compared on a shared time grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = ["IntegratorConfig", "OdeResult", "solve_flow"]

_H_MIN = 1e-12
_H_MAX = 1.0

# Dormand-Prince 5(4) tableau
_A = (
    np.array([0.2]),
    np.array([3.0 / 40.0, 9.0 / 40.0]),
    np.array([44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0]),
    np.array([19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0]),
    np.array([9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0]),
    np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0]),
)
_B = np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0])
# fifth-order minus embedded fourth-order weights
_E = np.array(
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0]
)

# PI controller exponents for an order-4 error estimate
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0
_SAFETY = 0.9


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration settings shared by every flow in the package.

    method is "rk45" (adaptive Dormand-Prince) or "rk4" (fixed step h0).
    grad_tol is the field-norm threshold that counts as convergence.
    """

    method: str = "rk45"
    rtol: float = 1e-10
    atol: float = 1e-12
    h0: float = 1e-3
    t_max: float = 50.0
    grad_tol: float = 1e-8
    max_steps: int = 1_000_000
    record_stride: int = 1

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown method {self.method!r}; use 'rk45' or 'rk4'")
        for name in ("rtol", "atol", "h0", "t_max", "grad_tol"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")


@dataclass
class OdeResult:
    """Sampled solution: times, states (one row per sample), field norms at
    the samples, why integration stopped, and the accepted step count."""

    t: np.ndarray
    y: np.ndarray
    field_norm: np.ndarray
    stop_reason: str
    n_steps: int


def _finite(arr: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(arr)))


def solve_flow(
    field: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    cfg: IntegratorConfig,
    checkpoints: Optional[Sequence[float]] = None,
    stop_when: Optional[Callable[[float, np.ndarray], bool]] = None,
) -> OdeResult:
    """Integrate dy/dt = field(y) from y0 under the given config."""
    y = np.array(y0, dtype=float).ravel()
    if not _finite(y):
        raise ValueError("initial state contains non-finite entries")

    cps: list[float] = []
    if checkpoints is not None:
        cps = [float(t) for t in checkpoints if 0.0 < float(t) <= cfg.t_max]
        cps.sort()

    ts: list[float] = []
    ys: list[np.ndarray] = []
    fns: list[float] = []

    def record(t: float, state: np.ndarray, fnorm: float) -> None:
        if ts and ts[-1] == t:
            return
        ts.append(t)
        ys.append(state.copy())
        fns.append(fnorm)

    def finish(reason: str, steps: int) -> OdeResult:
        return OdeResult(
            t=np.array(ts),
            y=np.array(ys),
            field_norm=np.array(fns),
            stop_reason=reason,
            n_steps=steps,
        )

    k1 = np.asarray(field(y), dtype=float).ravel()
    if not _finite(k1):
        raise ValueError("field is non-finite at the initial state")
    fnorm = float(np.linalg.norm(k1))
    record(0.0, y, fnorm)
    if fnorm < cfg.grad_tol:
        return finish("converged", 0)
    if stop_when is not None and stop_when(0.0, y):
        return finish("stopped", 0)

    if cfg.method == "rk4":
        return _run_rk4(field, y, k1, fnorm, cfg, cps, stop_when, record, finish)
    return _run_dopri(field, y, k1, fnorm, cfg, cps, stop_when, record, finish)


def _run_dopri(field, y, k1, fnorm, cfg, cps, stop_when, record, finish):
    t = 0.0
    h = min(max(cfg.h0, _H_MIN), _H_MAX)
    err_prev = 1.0
    steps = 0
    cp_idx = 0
    stages = np.empty((7, y.size))
    stages[0] = k1

    while True:
        if steps >= cfg.max_steps:
            record(t, y, fnorm)
            return finish("max_steps", steps)

        bound = cps[cp_idx] if cp_idx < len(cps) else cfg.t_max
        landing = False
        h_try = h
        if t + h_try >= bound - 1e-14 * max(1.0, bound):
            h_try = bound - t
            landing = True

        # blowups are expected to overflow here; the finiteness check below
        # turns them into a clean stop instead of a warning cascade
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(6):
                yi = y + h_try * (_A[i] @ stages[: i + 1])
                stages[i + 1] = field(yi)
            y_new = y + h_try * (_B @ stages)
            err_vec = h_try * (_E @ stages)

        if not (_finite(y_new) and _finite(err_vec)):
            record(t, y, fnorm)
            return finish("non_finite", steps)

        with np.errstate(over="ignore", invalid="ignore"):
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if math.isnan(err):
            err = math.inf

        if err <= 1.0 or h_try <= _H_MIN * 1.0000001:
            steps += 1
            t = bound if landing else t + h_try
            y = y_new
            stages[0] = stages[6]  # first-same-as-last: stage 7 is the field at y_new
            fnorm = float(np.linalg.norm(stages[0]))

            hit_cp = landing and cp_idx < len(cps) and bound == cps[cp_idx]
            if hit_cp:
                cp_idx += 1
            if hit_cp or steps % cfg.record_stride == 0:
                record(t, y, fnorm)

            if fnorm < cfg.grad_tol:
                record(t, y, fnorm)
                return finish("converged", steps)
            if t >= cfg.t_max - 1e-14 * max(1.0, cfg.t_max):
                record(t, y, fnorm)
                return finish("t_max", steps)
            if stop_when is not None and stop_when(t, y):
                record(t, y, fnorm)
                return finish("stopped", steps)

            err = max(err, 1e-10)
            factor = _SAFETY * err ** (-_PI_ALPHA) * err_prev ** _PI_BETA
            factor = min(5.0, max(0.2, factor))
            h = min(max(h * factor, _H_MIN), _H_MAX)
            err_prev = err
        else:
            factor = max(0.2, _SAFETY * err ** (-_PI_ALPHA))
            h = min(max(h_try * factor, _H_MIN), _H_MAX)


def _run_rk4(field, y, k1, fnorm, cfg, cps, stop_when, record, finish):
    t = 0.0
    steps = 0
    cp_idx = 0

    while True:
        if steps >= cfg.max_steps:
            record(t, y, fnorm)
            return finish("max_steps", steps)

        bound = cps[cp_idx] if cp_idx < len(cps) else cfg.t_max
        landing = False
        h = cfg.h0
        if t + h >= bound - 1e-14 * max(1.0, bound):
            h = bound - t
            landing = True

        with np.errstate(over="ignore", invalid="ignore"):
            k2 = np.asarray(field(y + 0.5 * h * k1), dtype=float).ravel()
            k3 = np.asarray(field(y + 0.5 * h * k2), dtype=float).ravel()
            k4 = np.asarray(field(y + h * k3), dtype=float).ravel()
            y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        if not _finite(y_new):
            record(t, y, fnorm)
            return finish("non_finite", steps)

        steps += 1
        t = bound if landing else t + h
        y = y_new
        k1 = np.asarray(field(y), dtype=float).ravel()
        if not _finite(k1):
            record(t, y, fnorm)
            return finish("non_finite", steps)
        fnorm = float(np.linalg.norm(k1))

        hit_cp = landing and cp_idx < len(cps) and bound == cps[cp_idx]
        if hit_cp:
            cp_idx += 1
        if hit_cp or steps % cfg.record_stride == 0:
            record(t, y, fnorm)

        if fnorm < cfg.grad_tol:
            record(t, y, fnorm)
            return finish("converged", steps)
        if t >= cfg.t_max - 1e-14 * max(1.0, cfg.t_max):
            record(t, y, fnorm)
            return finish("t_max", steps)
        if stop_when is not None and stop_when(t, y):
            record(t, y, fnorm)
            return finish("stopped", steps)
