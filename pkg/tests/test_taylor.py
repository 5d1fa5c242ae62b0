import math

import numpy as np
import pytest

from taylor import (contour_derivatives, contour_nodes, cutoff, cutoff_monomial, cutoff_prime,
                    cutoff_second, CONTOUR_RADIUS)


def test_cutoff_plateau_and_support():
    s = np.array([-2.0, -1.0, -0.5, -0.25, 0.0, 0.3, 0.5, 1.0, 1.5])
    values = cutoff(s)
    np.testing.assert_allclose(values[[2, 3, 4, 5, 6]], 1.0)
    np.testing.assert_allclose(values[[0, 1, 7, 8]], 0.0)


def test_cutoff_is_monotone_on_transition():
    s = np.linspace(0.5, 1.0, 101)
    assert np.all(np.diff(cutoff(s)) <= 1e-15)


@pytest.mark.parametrize('s', [0.6, 0.75, 0.9, -0.7])
def test_cutoff_derivatives_match_differences(s):
    h = 1e-5
    d1 = (cutoff(s + h) - cutoff(s - h)) / (2 * h)
    d2 = (cutoff(s + h) - 2 * cutoff(s) + cutoff(s - h)) / h**2
    assert cutoff_prime(s) == pytest.approx(d1, rel=1e-6, abs=1e-8)
    assert cutoff_second(s) == pytest.approx(d2, rel=1e-3, abs=1e-5)


def test_cutoff_monomial_near_origin_is_plain_monomial():
    t, eps = 0.1, 1.0
    c, c1, c2 = cutoff_monomial(t, 3, eps)
    assert c == pytest.approx(t**3 / 6)
    assert c1 == pytest.approx(t**2 / 2)
    assert c2 == pytest.approx(t)


def test_cutoff_monomial_vanishes_beyond_width():
    assert cutoff_monomial(2.0, 2, 0.5) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize('t0', [0.0, 0.3])
def test_contour_derivatives_of_exponential(t0):
    nodes, angles = contour_nodes(t0)
    samples = [np.exp(2.0 * z) for z in nodes]
    derivs = contour_derivatives(samples, angles, CONTOUR_RADIUS, 3)
    for order, value in enumerate(derivs, start=1):
        assert value == pytest.approx(2.0**order * math.exp(2.0 * t0), rel=1e-10)


def test_contour_derivatives_of_arrays():
    nodes, angles = contour_nodes(0.0)
    base = np.arange(4.0)
    samples = [base * np.sin(z) for z in nodes]
    d1, d2 = contour_derivatives(samples, angles, CONTOUR_RADIUS, 2)
    np.testing.assert_allclose(d1, base, atol=1e-12)
    np.testing.assert_allclose(d2, 0.0, atol=1e-12)
