"""Small damped Gauss-Newton (Levenberg-Marquardt style) minimizer.

Problems in this package are tiny (6-12 parameters, tens of residuals),
so a numeric-Jacobian implementation is both fast enough and simple to
audit. Rotations are parameterized as local rotation-vector increments
around an initialization that is already close to the optimum, which
keeps the chart away from its singularity at pi.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula; series expansion below 1e-8 rad."""
    w = np.asarray(w, dtype=np.float64)
    angle = np.linalg.norm(w)
    kx, ky, kz = w
    skew = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    if angle < 1e-8:
        return np.eye(3) + skew + 0.5 * (skew @ skew)
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + a * skew + b * (skew @ skew)


def matrix_to_rotvec(r: np.ndarray) -> np.ndarray:
    c = 0.5 * (np.trace(r) - 1.0)
    angle = math.acos(min(1.0, max(-1.0, c)))
    v = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle < 1e-8:
        return v
    if math.pi - angle < 1e-6:
        # near pi the off-diagonal difference vanishes; recover axis from R + I
        m = 0.5 * (r + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = m[:, i] / axis[i] * 0.5
            axis[i] = math.sqrt(max(0.0, m[i, i]))
        n = np.linalg.norm(axis)
        if n > 0:
            axis = axis / n
        # sign from the skew part where it survives
        if np.dot(axis, v) < 0:
            axis = -axis
        return axis * angle
    return v / math.sin(angle) * angle


def numeric_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-7) -> np.ndarray:
    r0 = fun(x)
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        jac[:, i] = (fun(xp) - fun(xm)) / (2.0 * step)
    return jac


def least_squares(
    fun: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    max_iter: int = 50,
    step_tol: float = 1e-10,
    lam0: float = 1e-3,
) -> tuple[np.ndarray, bool, int]:
    """Minimize 0.5*||fun(x)||^2. Returns (x, converged, iterations)."""
    x = np.asarray(x0, dtype=np.float64).copy()
    r = fun(x)
    cost = float(r @ r)
    lam = lam0
    stalled = 0
    for it in range(1, max_iter + 1):
        jac = numeric_jacobian(fun, x)
        g = jac.T @ jac
        grad = jac.T @ r
        diag = np.clip(np.diag(g), 1e-12, None)
        accepted = False
        step = None
        cost_before = cost
        for _ in range(12):
            try:
                step = np.linalg.solve(g + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + step
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam * 0.3, 1e-14)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction found at any damping: at the optimum
            return x, True, it
        if np.linalg.norm(step) < step_tol:
            return x, True, it
        # numeric-Jacobian plateau: cost no longer improves measurably
        if cost_before - cost <= 1e-15 * max(cost_before, 1e-300):
            stalled += 1
            if stalled >= 2:
                return x, True, it
        else:
            stalled = 0
    return x, False, max_iter
