"""
Cutoff functions and complex-contour Taylor coefficients.

The compatibility series needs time derivatives of coefficient fields and of
operators built from them. Background closures are analytic in t, so the
j-th derivative at t0 is read off a trapezoid rule on a small circle in the
complex t plane.
"""

import math

import numpy as np

CONTOUR_RADIUS = 0.05
CONTOUR_POINTS = 24


def _bump(x):
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, np.exp(-1.0 / safe), 0.0)


def _bump_d1(x):
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, _bump(x) / safe**2, 0.0)


def _bump_d2(x):
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, _bump(x) * (1.0 - 2.0 * safe) / safe**4, 0.0)


def _cutoff_parts(s):
    u = np.abs(np.asarray(s, dtype=float))
    a, b = _bump(1.0 - u), _bump(u - 0.5)
    da, db = -_bump_d1(1.0 - u), _bump_d1(u - 0.5)
    dda, ddb = _bump_d2(1.0 - u), _bump_d2(u - 0.5)
    total = a + b
    numer = da * b - a * db
    f0 = a / total
    f1 = numer / total**2
    f2 = (dda * b - a * ddb) / total**2 - 2.0 * numer * (da + db) / total**3
    return f0, f1, f2


def cutoff(s):
    """
    Smooth cutoff chi(s).

    Equal to 1 for |s| <= 1/2 and to 0 for |s| >= 1, C-infinity in between.
    """
    return _cutoff_parts(s)[0]


def cutoff_prime(s):
    """First derivative of cutoff()."""
    return np.sign(s) * _cutoff_parts(s)[1]


def cutoff_second(s):
    """Second derivative of cutoff()."""
    return _cutoff_parts(s)[2]


def cutoff_monomial(t, k, eps):
    """
    Evaluate c(t) = chi(t/eps) t^k / k! with its first two time derivatives.

    Args:
        t: Time (scalar)
        k: Monomial degree
        eps: Cutoff width

    Returns:
        Tuple (c, c_dot, c_ddot)
    """
    s = t / eps
    x0 = float(cutoff(s))
    x1 = float(cutoff_prime(s)) / eps
    x2 = float(cutoff_second(s)) / eps**2
    m0 = t**k / math.factorial(k)
    m1 = t ** (k - 1) / math.factorial(k - 1) if k >= 1 else 0.0
    m2 = t ** (k - 2) / math.factorial(k - 2) if k >= 2 else 0.0
    return x0 * m0, x1 * m0 + x0 * m1, x2 * m0 + 2.0 * x1 * m1 + x0 * m2


def contour_nodes(t0, radius=CONTOUR_RADIUS, points=CONTOUR_POINTS):
    """Complex sample times t0 + radius * exp(i theta_m) and their angles."""
    angles = 2.0 * np.pi * np.arange(points) / points
    return t0 + radius * np.exp(1j * angles), angles


def contour_derivative(samples, angles, radius, order):
    """
    Cauchy-integral estimate of the order-th derivative at the contour centre.

    Args:
        samples: Sequence of arrays f(z_m), one per contour node
        angles: Node angles from contour_nodes()
        radius: Contour radius
        order: Derivative order (>= 1)

    Returns:
        Real part of f^(order)(t0)
    """
    phase = np.exp(-1j * order * np.asarray(angles))
    acc = sum(p * s for p, s in zip(phase, samples))
    scale = math.factorial(order) / (len(samples) * radius**order)
    return np.real(acc * scale)


def contour_derivatives(samples, angles, radius, max_order):
    """List [f', f'', ..., f^(max_order)] from one set of contour samples."""
    return [contour_derivative(samples, angles, radius, j) for j in range(1, max_order + 1)]
