"""Tool-tip wrench estimates from joint-torque residuals (virtual work)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import AXES, Condition, Frame, Trajectory, Wrench
from .manipulator import KinematicModel, condition_number, jacobian

COND_THRESHOLD = 1e4
RCOND = 1e-8


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class WrenchEstimate:
    wrench: Wrench
    residual_tau: np.ndarray
    jacobian_cond: float
    valid: bool


def is_valid(cond: float, threshold: float = COND_THRESHOLD) -> bool:
    return bool(cond <= threshold)


def solve_wrench(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution of ``J.T @ w = r``."""
    w, *_ = np.linalg.lstsq(J.T, r, rcond=RCOND)
    return w


def estimate_wrench(model: KinematicModel, q, tau_meas, tau_pred,
                    threshold: float = COND_THRESHOLD) -> WrenchEstimate:
    """External wrench (base frame) explaining ``tau_meas - tau_pred``."""
    J = jacobian(model, q)
    r = np.asarray(tau_meas, dtype=float) - np.asarray(tau_pred, dtype=float)
    cond = condition_number(J)
    w = solve_wrench(J, r)
    return WrenchEstimate(Wrench.from_vector(w, Frame.BASE), r, cond, is_valid(cond, threshold))


def jacobian_series(model: KinematicModel, q: np.ndarray) -> np.ndarray:
    return np.stack([jacobian(model, qk) for qk in np.asarray(q)])


def wrench_series(model: KinematicModel, q, tau_meas, tau_pred, threshold: float = COND_THRESHOLD):
    """Per-sample wrench estimates as arrays ``(w (n, 6), cond (n,), valid (n,))``."""
    q = np.asarray(q, dtype=float)
    r = np.asarray(tau_meas, dtype=float) - np.asarray(tau_pred, dtype=float)
    w = np.empty_like(r)
    cond = np.empty(len(q))
    for k, qk in enumerate(q):
        J = jacobian(model, qk)
        cond[k] = condition_number(J)
        w[k] = solve_wrench(J, r[k])
    return w, cond, cond <= threshold


def fictitious_wrench_series(model: KinematicModel, tr: Trajectory, tau_pred,
                             threshold: float = COND_THRESHOLD):
    """Wrench estimates during contact-free trocar motion; the truth is zero."""
    if tr.condition is not Condition.TROCAR:
        raise EstimationError(
            f"fictitious wrenches need a no-contact trocar trajectory, got {tr.condition.value}")
    return wrench_series(model, tr.q, tr.tau, tau_pred, threshold)


def write_wrench_csv(path, t, w, valid=None) -> Path:
    """CSV with the dataset's wrench column names (``fx..tz``) plus a validity flag."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    w = np.asarray(w, dtype=float)
    valid = np.ones(len(w), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,fx,fy,fz,tx,ty,tz,valid\n")
        for tk, wk, vk in zip(t, w, valid):
            fh.write(",".join([repr(float(tk))] + [repr(float(x)) for x in wk] + [str(int(vk))]) + "\n")
    return path


__all__ = [
    "AXES", "COND_THRESHOLD", "EstimationError", "WrenchEstimate", "estimate_wrench",
    "fictitious_wrench_series", "is_valid", "jacobian_series", "solve_wrench", "wrench_series",
    "write_wrench_csv",
]
