import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from irbp.quadrature import IntegrationError, gauss_legendre, integrate_interval, integrate_triangle


def test_rule_is_exact_for_degree_13():
    t, w = gauss_legendre(7)
    for deg in range(14):
        assert np.sum(w * t ** deg) == pytest.approx(1.0 / (deg + 1), rel=1e-14)


def test_interval_smooth_and_steep():
    assert integrate_interval(np.sin, 0.0, math.pi) == pytest.approx(2.0, rel=1e-12)
    a = 100 * math.pi
    val = integrate_interval(lambda x: a / (1 + (a * x) ** 2), -1.0, 1.0)
    assert val == pytest.approx(2 * math.atan(a), rel=1e-10)


def test_interval_nonconvergence_reports_achieved_error():
    with pytest.raises(IntegrationError) as err:
        integrate_interval(lambda x: np.sign(np.sin(1e7 * x)) * 1e3, 0.0, 1.0, max_depth=3)
    assert err.value.achieved > 0


@given(st.integers(0, 6), st.integers(0, 6))
def test_triangle_monomials(i, j):
    # int over the reference triangle of x^i y^j = i! j! / (i + j + 2)!
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    exact = math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)
    assert integrate_triangle(lambda x, y: x ** i * y ** j, tri) == pytest.approx(exact, rel=1e-11)


def test_triangle_affine_map():
    tri = np.array([[0.2, 0.1], [0.7, 0.3], [0.4, 0.9]])
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    assert integrate_triangle(lambda x, y: np.ones_like(x), tri) == pytest.approx(area, rel=1e-14)
    centroid = tri.mean(axis=0)
    assert integrate_triangle(lambda x, y: x, tri) == pytest.approx(area * centroid[0], rel=1e-13)
