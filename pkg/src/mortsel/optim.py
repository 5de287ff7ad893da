"""BFGS quasi-Newton minimization with a strong-Wolfe line search.

Written for small, smooth problems whose objective may be infinite outside
an unknown feasible region: non-finite trial values are treated as "step
too long" and the line search bisects back toward the last good point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = np.finfo(float).eps
_C1 = 1e-4
_C2 = 0.9


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str
    nfev: int


def central_gradient(f, x, f0=None, strict=False):
    """Central-difference gradient with steps ``eps**(1/3) * max(1, |x_i|)``.

    When one side of a stencil is non-finite a one-sided difference is used,
    unless ``strict`` is set, in which case ``FloatingPointError`` is raised.
    """
    x = np.asarray(x, float)
    g = np.empty_like(x)
    h = EPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(x))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        fp, fm = f(x + e), f(x - e)
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2.0 * h[i])
            continue
        if strict:
            raise FloatingPointError(f"non-finite objective at stencil point of coordinate {i}")
        if f0 is None:
            f0 = f(x)
        if np.isfinite(fp) and np.isfinite(f0):
            g[i] = (fp - f0) / h[i]
        elif np.isfinite(fm) and np.isfinite(f0):
            g[i] = (f0 - fm) / h[i]
        else:
            g[i] = np.nan
    return g


class _Counted:
    def __init__(self, f):
        self.f = f
        self.n = 0

    def __call__(self, x):
        self.n += 1
        with np.errstate(all="ignore"):
            v = float(self.f(x))
        return v if not np.isnan(v) else np.inf


def _interpolate(a_lo, f_lo, g_lo, a_hi, f_hi):
    """Minimizer of the quadratic through (a_lo, f_lo, g_lo) and (a_hi, f_hi),
    safeguarded to the middle 80% of the bracket; bisection if undefined."""
    lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
    width = hi - lo
    mid = 0.5 * (lo + hi)
    if not np.isfinite(f_hi):
        return mid
    d = a_hi - a_lo
    denom = 2.0 * (f_hi - f_lo - g_lo * d)
    if denom <= 0:
        return mid
    a = a_lo - g_lo * d * d / denom
    if not np.isfinite(a):
        return mid
    return min(max(a, lo + 0.1 * width), hi - 0.1 * width)


def wolfe_line_search(phi, dphi, f0, g0, a1=1.0, max_iter=40):
    """Find a step satisfying the strong Wolfe conditions.

    ``phi(a)`` and ``dphi(a)`` are the objective and directional derivative
    along the search direction; ``g0 < 0`` is required. Returns
    ``(step, f_step, ok)``; when the conditions cannot be met but some step
    gave sufficient decrease, that step is returned with ``ok=False``.
    """
    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = a1
    best = (0.0, f0)

    def zoom(a_lo, f_lo, g_lo, a_hi, f_hi):
        nonlocal best
        for _ in range(max_iter):
            aj = _interpolate(a_lo, f_lo, g_lo, a_hi, f_hi)
            fj = phi(aj)
            if fj <= f0 + _C1 * aj * g0 and fj < best[1]:
                best = (aj, fj)
            if not np.isfinite(fj) or fj > f0 + _C1 * aj * g0 or fj >= f_lo:
                a_hi, f_hi = aj, fj
            else:
                gj = dphi(aj)
                if abs(gj) <= -_C2 * g0:
                    return aj, fj, True
                if gj * (a_hi - a_lo) >= 0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, g_lo = aj, fj, gj
            if abs(a_hi - a_lo) <= EPS * max(1.0, abs(a_lo)):
                break
        return best[0], best[1], False

    for i in range(max_iter):
        fa = phi(a)
        if fa <= f0 + _C1 * a * g0 and fa < best[1]:
            best = (a, fa)
        if not np.isfinite(fa) or fa > f0 + _C1 * a * g0 or (i > 0 and fa >= f_prev):
            return zoom(a_prev, f_prev, g_prev, a, fa)
        ga = dphi(a)
        if abs(ga) <= -_C2 * g0:
            return a, fa, True
        if ga >= 0:
            return zoom(a, fa, ga, a_prev, f_prev)
        a_prev, f_prev, g_prev = a, fa, ga
        a *= 2.0
    return best[0], best[1], False


def bfgs(f, x0, grad=None, max_iter=500, gtol=1e-6, ftol=1e-10, f_offset=0.0):
    """Minimize ``f`` from ``x0`` with BFGS.

    Converges when the gradient's infinity norm is at most ``gtol`` or when
    one iteration changes ``f`` by at most ``ftol`` relative to
    ``|f + f_offset|`` (the offset lets callers minimize a shifted objective
    while keeping the tolerance relative to the unshifted value).
    ``grad`` defaults to :func:`central_gradient`.
    """
    with np.errstate(all="ignore"):
        return _bfgs(f, x0, grad, max_iter, gtol, ftol, f_offset)


def _bfgs(f, x0, grad, max_iter, gtol, ftol, f_offset):
    fc = _Counted(f)
    if grad is None:
        def grad(x, fx=None):
            return central_gradient(fc, x, fx)
    x = np.array(x0, float)
    fx = fc(x)
    if not np.isfinite(fx):
        return OptimizeResult(x, fx, np.full_like(x, np.nan), 0, False, "non-finite objective at start", fc.n)
    g = grad(x, fx)
    n = x.size
    eye = np.eye(n)
    Hinv = eye.copy()
    fresh = True
    message = "maximum iterations reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if not np.all(np.isfinite(g)):
            message = "non-finite gradient"
            break
        if np.max(np.abs(g)) <= gtol:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break
        p = -Hinv @ g
        slope = float(g @ p)
        if not slope < 0:
            Hinv, fresh = eye.copy(), True
            p, slope = -g, -float(g @ g)
        a1 = 1.0
        if fresh:
            a1 = min(1.0, 1.0 / max(np.max(np.abs(g)), EPS))

        grads = {}

        def phi(a):
            return fc(x + a * p)

        def dphi(a):
            gx = grad(x + a * p)
            grads[a] = gx
            return float(gx @ p)

        step, f_new, ok = wolfe_line_search(phi, dphi, fx, slope, a1)
        if step == 0.0:
            if not fresh:
                Hinv, fresh = eye.copy(), True
                continue
            message = "line search failed"
            break
        s = step * p
        x_new = x + s
        g_new = grads.get(step)
        if g_new is None:
            g_new = grad(x_new, f_new)
        y = g_new - g
        change = abs(fx - f_new)
        x, g, f_prev, fx = x_new, g_new, fx, f_new
        if change <= ftol * max(abs(f_prev + f_offset), abs(fx + f_offset), EPS):
            converged, message = True, "relative function tolerance reached"
            break
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if fresh:
                Hinv = eye * (sy / float(y @ y))
            rho = 1.0 / sy
            V = eye - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
            fresh = False
    return OptimizeResult(x, fx, g, it, converged, message, fc.n)


def fd_hessian(grad, x):
    """Symmetrized central-difference Jacobian of ``grad``."""
    x = np.asarray(x, float)
    n = x.size
    H = np.empty((n, n))
    h = EPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(x))
    with np.errstate(all="ignore"):
        for i in range(n):
            e = np.zeros(n)
            e[i] = h[i]
            H[i] = (grad(x + e) - grad(x - e)) / (2.0 * h[i])
    return 0.5 * (H + H.T)


def newton_refine(f, grad, x0, max_iter=100, tol=1e-12, f_offset=0.0, f_noise=0.0):
    """Polish a BFGS solution with modified Newton steps.

    BFGS can stall on ridges whose Hessian spans many orders of magnitude
    (a nested model's boundary, approached on a log scale). Each step here
    uses the finite-difference Hessian of ``grad`` with eigenvalues replaced
    by their absolute values (floored relative to the largest), followed by
    backtracking on ``f``. Stops when the predicted decrease
    ``g' H^-1 g / 2`` is at most ``tol * max(1, |f + f_offset|)`` or when no
    step lowers ``f``. The final full step is kept if it shrinks the gradient
    and raises ``f`` by no more than ``f_noise`` (the objective's rounding
    level), so the result is never worse than ``x0`` by more than that.
    """
    fc = _Counted(f)
    x = np.array(x0, float)
    fx = fc(x)
    message = "maximum iterations reached"
    converged = False
    g = np.full_like(x, np.nan)
    it = 0
    if not np.isfinite(fx):
        return OptimizeResult(x, fx, g, 0, False, "non-finite objective at start", fc.n)
    for it in range(1, max_iter + 1):
        g = grad(x)
        H = fd_hessian(grad, x)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
            message = "non-finite gradient or Hessian"
            break
        w, V = np.linalg.eigh(H)
        w = np.maximum(np.abs(w), 1e-14 * max(np.max(np.abs(w)), EPS))
        p = -V @ ((V.T @ g) / w)
        decrement = -0.5 * float(g @ p)
        if decrement <= tol * max(1.0, abs(fx + f_offset)):
            converged, message = True, "Newton decrement below tolerance"
            # a last full step may shrink the gradient below f's resolution
            f_new = fc(x + p)
            if f_new <= fx + f_noise:
                g_new = grad(x + p)
                if np.max(np.abs(g_new)) < np.max(np.abs(g)):
                    x, fx, g = x + p, f_new, g_new
            it -= 1
            break
        a = 1.0
        while a > 1e-10:
            f_new = fc(x + a * p)
            if f_new <= fx + _C1 * a * float(g @ p):
                break
            a *= 0.5
        else:
            message = "no decrease along Newton direction"
            break
        x, fx = x + a * p, f_new
    return OptimizeResult(x, fx, g, it, converged, message, fc.n)
