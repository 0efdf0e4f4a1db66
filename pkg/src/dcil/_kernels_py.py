"""Pure-Python/numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
The compiled module is preferred at import time (see ``dcil.kernels``);
this module is the reference the compiled one is tested against.
"""
from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    theta = math.fmod(theta + math.pi, TWO_PI)
    if theta <= 0.0:
        theta += TWO_PI
    return theta - math.pi


def segment_hits(x0: float, y0: float, x1: float, y1: float,
                 rects: np.ndarray, bounds: np.ndarray) -> bool:
    """True if the segment (x0,y0)->(x1,y1) leaves ``bounds`` or touches a rect.

    ``rects`` is an (n, 4) array of closed boxes ``xmin, ymin, xmax, ymax``;
    ``bounds`` is ``xmin, ymin, xmax, ymax`` of the open arena interior.
    """
    if not (bounds[0] < x1 < bounds[2] and bounds[1] < y1 < bounds[3]):
        return True
    dx = x1 - x0
    dy = y1 - y0
    for k in range(rects.shape[0]):
        rxmin, rymin, rxmax, rymax = rects[k, 0], rects[k, 1], rects[k, 2], rects[k, 3]
        # Liang-Barsky slab clipping of t in [0, 1]
        t0 = 0.0
        t1 = 1.0
        hit = True
        for p, q in ((-dx, x0 - rxmin), (dx, rxmax - x0),
                     (-dy, y0 - rymin), (dy, rymax - y0)):
            if p == 0.0:
                if q < 0.0:
                    hit = False
                    break
            else:
                r = q / p
                if p < 0.0:
                    if r > t1:
                        hit = False
                        break
                    if r > t0:
                        t0 = r
                else:
                    if r < t0:
                        hit = False
                        break
                    if r < t1:
                        t1 = r
        if hit:
            return True
    return False


def point_blocked(x: float, y: float, rects: np.ndarray, bounds: np.ndarray) -> bool:
    if not (bounds[0] < x < bounds[2] and bounds[1] < y < bounds[3]):
        return True
    for k in range(rects.shape[0]):
        if rects[k, 0] <= x <= rects[k, 2] and rects[k, 1] <= y <= rects[k, 3]:
            return True
    return False


def dubins_step(x: float, y: float, theta: float, action: float,
                speed: float, dt: float, u_max: float,
                rects: np.ndarray, bounds: np.ndarray):
    """One Euler step; returns ``(x', y', theta', collided)``."""
    theta2 = wrap_angle(theta + action * u_max * dt)
    x2 = x + speed * math.cos(theta2) * dt
    y2 = y + speed * math.sin(theta2) * dt
    if segment_hits(x, y, x2, y2, rects, bounds):
        return x, y, theta2, True
    return x2, y2, theta2, False


def propagate(x: float, y: float, theta: float, action: float, n_steps: int,
              speed: float, dt: float, u_max: float,
              rects: np.ndarray, bounds: np.ndarray,
              gx: float, gy: float, eps: float) -> tuple[np.ndarray, int]:
    """Roll a constant control forward for up to ``n_steps`` steps.

    Returns ``(states, status)`` where ``states`` holds the visited states
    (excluding the start). ``status`` is -1 on collision (states is empty),
    otherwise the number of steps taken; propagation stops early on the
    first state within ``eps`` of ``(gx, gy)``.
    """
    out = np.empty((n_steps, 3))
    eps2 = eps * eps
    for i in range(n_steps):
        x, y, theta, collided = dubins_step(x, y, theta, action, speed, dt, u_max,
                                            rects, bounds)
        if collided:
            return out[:0], -1
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = theta
        if (x - gx) ** 2 + (y - gy) ** 2 <= eps2:
            return out[:i + 1], i + 1
    return out, n_steps


def nearest_index(points: np.ndarray, n: int, qx: float, qy: float) -> int:
    """Index of the row of ``points[:n]`` closest to ``(qx, qy)`` (first on ties)."""
    d = (points[:n, 0] - qx) ** 2 + (points[:n, 1] - qy) ** 2
    return int(np.argmin(d))


# --------------------------------------------------------------------------
# dense layers on C-contiguous row-major arrays


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, relu: bool) -> np.ndarray:
    """``max(x @ w + b, 0)`` (or without the ReLU) into a new array."""
    if w.shape[0] != x.shape[1] or b.shape[0] != w.shape[1]:
        raise ValueError("dense_forward: shape mismatch")
    out = x @ w
    out += b
    if relu:
        np.maximum(out, 0.0, out=out)
    return out


def dense_backward(h: np.ndarray, w: np.ndarray, dz: np.ndarray,
                   gw: np.ndarray | None, gb: np.ndarray | None, relu_in: bool) -> np.ndarray:
    """Accumulate ``h.T @ dz`` into ``gw`` and column sums into ``gb`` (when given);
    return ``dz @ w.T`` masked by ``h > 0`` when ``relu_in``."""
    if w.shape[0] != h.shape[1] or dz.shape != (h.shape[0], w.shape[1]):
        raise ValueError("dense_backward: shape mismatch")
    if gw is not None:
        gw += h.T @ dz
    if gb is not None:
        gb += dz.sum(axis=0)
    dh = dz @ w.T
    if relu_in:
        dh[h <= 0.0] = 0.0
    return dh


def adam_update(params: np.ndarray, grads: np.ndarray, m: np.ndarray, v: np.ndarray,
                step: float, b1: float, b2: float, eps_hat: float) -> None:
    m *= b1
    m += (1.0 - b1) * grads
    v *= b2
    v += (1.0 - b2) * (grads * grads)
    params -= step * m / (np.sqrt(v) + eps_hat)


def polyak(target: np.ndarray, source: np.ndarray, tau: float) -> None:
    target *= 1.0 - tau
    target += tau * source
