# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same signatures as ``dcil._kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fmod, sqrt, M_PI
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI


cpdef double wrap_angle(double theta):
    theta = fmod(theta + M_PI, TWO_PI)
    if theta <= 0.0:
        theta += TWO_PI
    return theta - M_PI


cdef bint _segment_hits(double x0, double y0, double x1, double y1,
                        const double[:, ::1] rects, const double[::1] bounds) noexcept nogil:
    cdef Py_ssize_t k, j
    cdef double dx, dy, t0, t1, p, q, r
    cdef double ps[4]
    cdef double qs[4]
    cdef bint hit
    if not (bounds[0] < x1 < bounds[2] and bounds[1] < y1 < bounds[3]):
        return True
    dx = x1 - x0
    dy = y1 - y0
    for k in range(rects.shape[0]):
        ps[0] = -dx
        qs[0] = x0 - rects[k, 0]
        ps[1] = dx
        qs[1] = rects[k, 2] - x0
        ps[2] = -dy
        qs[2] = y0 - rects[k, 1]
        ps[3] = dy
        qs[3] = rects[k, 3] - y0
        t0 = 0.0
        t1 = 1.0
        hit = True
        for j in range(4):
            p = ps[j]
            q = qs[j]
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


def segment_hits(double x0, double y0, double x1, double y1,
                 const double[:, ::1] rects, const double[::1] bounds):
    return bool(_segment_hits(x0, y0, x1, y1, rects, bounds))


def point_blocked(double x, double y, const double[:, ::1] rects, const double[::1] bounds):
    cdef Py_ssize_t k
    if not (bounds[0] < x < bounds[2] and bounds[1] < y < bounds[3]):
        return True
    for k in range(rects.shape[0]):
        if rects[k, 0] <= x <= rects[k, 2] and rects[k, 1] <= y <= rects[k, 3]:
            return True
    return False


def dubins_step(double x, double y, double theta, double action,
                double speed, double dt, double u_max,
                const double[:, ::1] rects, const double[::1] bounds):
    cdef double theta2 = wrap_angle(theta + action * u_max * dt)
    cdef double x2 = x + speed * cos(theta2) * dt
    cdef double y2 = y + speed * sin(theta2) * dt
    if _segment_hits(x, y, x2, y2, rects, bounds):
        return x, y, theta2, True
    return x2, y2, theta2, False


def propagate(double x, double y, double theta, double action, int n_steps,
              double speed, double dt, double u_max,
              const double[:, ::1] rects, const double[::1] bounds,
              double gx, double gy, double eps):
    out_arr = np.empty((n_steps, 3))
    cdef double[:, ::1] out = out_arr
    cdef double eps2 = eps * eps
    cdef double x2, y2
    cdef int i
    for i in range(n_steps):
        theta = wrap_angle(theta + action * u_max * dt)
        x2 = x + speed * cos(theta) * dt
        y2 = y + speed * sin(theta) * dt
        if _segment_hits(x, y, x2, y2, rects, bounds):
            return out_arr[:0], -1
        x = x2
        y = y2
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = theta
        if (x - gx) * (x - gx) + (y - gy) * (y - gy) <= eps2:
            return out_arr[:i + 1], i + 1
    return out_arr, n_steps


def nearest_index(const double[:, ::1] points, Py_ssize_t n, double qx, double qy):
    cdef Py_ssize_t i, best = 0
    cdef double d, dx, dy, best_d = 1e300
    for i in range(n):
        dx = points[i, 0] - qx
        dy = points[i, 1] - qy
        d = dx * dx + dy * dy
        if d < best_d:
            best_d = d
            best = i
    return best


# --------------------------------------------------------------------------
# dense layers on C-contiguous row-major arrays


def dense_forward(const double[:, ::1] x, const double[:, ::1] w, const double[::1] b,
                  bint relu):
    """``max(x @ w + b, 0)`` (or without the ReLU) into a new array."""
    cdef int n_batch = x.shape[0], k = x.shape[1], n = w.shape[1]
    cdef int i, j
    cdef double one = 1.0, zero = 0.0, v
    if w.shape[0] != k or b.shape[0] != n:
        raise ValueError("dense_forward: shape mismatch")
    out_arr = np.empty((n_batch, n))
    cdef double[:, ::1] out = out_arr
    if n_batch == 0:
        return out_arr
    with nogil:
        dgemm(b"N", b"N", &n, &n_batch, &k, &one, <double*>&w[0, 0], &n,
              <double*>&x[0, 0], &k, &zero, &out[0, 0], &n)
        for i in range(n_batch):
            for j in range(n):
                v = out[i, j] + b[j]
                if relu and v < 0.0:
                    v = 0.0
                out[i, j] = v
    return out_arr


def dense_backward(const double[:, ::1] h, const double[:, ::1] w, const double[:, ::1] dz,
                   double[:, ::1] gw, double[::1] gb, bint relu_in):
    """Accumulate ``h.T @ dz`` into ``gw`` and column sums into ``gb`` (when given);
    return ``dz @ w.T`` masked by ``h > 0`` when ``relu_in``."""
    cdef int n_batch = h.shape[0], k = h.shape[1], n = w.shape[1]
    cdef int i, j
    cdef double one = 1.0, zero = 0.0
    if w.shape[0] != k or dz.shape[0] != n_batch or dz.shape[1] != n:
        raise ValueError("dense_backward: shape mismatch")
    dh_arr = np.empty((n_batch, k))
    cdef double[:, ::1] dh = dh_arr
    if n_batch == 0:
        return dh_arr
    with nogil:
        if gw is not None:
            dgemm(b"N", b"T", &n, &k, &n_batch, &one, <double*>&dz[0, 0], &n,
                  <double*>&h[0, 0], &k, &one, &gw[0, 0], &n)
        if gb is not None:
            for i in range(n_batch):
                for j in range(n):
                    gb[j] += dz[i, j]
        dgemm(b"T", b"N", &k, &n_batch, &n, &one, <double*>&w[0, 0], &n,
              <double*>&dz[0, 0], &n, &zero, &dh[0, 0], &k)
        if relu_in:
            for i in range(n_batch):
                for j in range(k):
                    if h[i, j] <= 0.0:
                        dh[i, j] = 0.0
    return dh_arr


def adam_update(double[::1] params, const double[::1] grads, double[::1] m, double[::1] v,
                double step, double b1, double b2, double eps_hat):
    cdef Py_ssize_t i, n = params.shape[0]
    cdef double g
    with nogil:
        for i in range(n):
            g = grads[i]
            m[i] = b1 * m[i] + (1.0 - b1) * g
            v[i] = b2 * v[i] + (1.0 - b2) * g * g
            params[i] -= step * m[i] / (sqrt(v[i]) + eps_hat)


def polyak(double[::1] target, const double[::1] source, double tau):
    cdef Py_ssize_t i, n = target.shape[0]
    cdef double keep = 1.0 - tau
    with nogil:
        for i in range(n):
            target[i] = keep * target[i] + tau * source[i]
