import numpy as np
import pytest
from numpy.testing import assert_array_equal

from parsers.poly_text import parse_poly
from shared.errors import PolyParseError


def test_quadratic():
    s = parse_poly("x^2 - 2")
    assert s.d == 1 and s.p == 1
    assert_array_equal(s.coeffs, [[-2.0, 0.0, 1.0]])
    assert not s.has_placeholder
    assert s.degree() == 2


def test_placeholder_constant():
    s = parse_poly("x^5 - S")
    assert s.degree() == 5
    assert s.has_placeholder
    assert_array_equal(s.coeffs[0], [0, 0, 0, 0, 0, 1])
    assert_array_equal(s.s_coeffs[0], [-1, 0, 0, 0, 0, 0])
    sub = s.substitute(2.0)
    assert not sub.has_placeholder
    assert_array_equal(sub.coeffs[0], [-2, 0, 0, 0, 0, 1])


def test_two_variables():
    s = parse_poly("x^2*y - 3*y + 1")
    assert s.d == 2
    c = s.coeffs[0]
    assert c[2, 1] == 1.0
    assert c[0, 1] == -3.0
    assert c[0, 0] == 1.0
    assert np.count_nonzero(c) == 3


def test_system_of_equations():
    s = parse_poly("x^2 + y^2 - 4; x - y")
    assert s.p == 2 and s.d == 2
    assert s.coeffs[1, 1, 0] == 1.0 and s.coeffs[1, 0, 1] == -1.0


def test_juxtaposition_signs_and_like_terms():
    s = parse_poly("-2x^3 + 0.5 x - x + 1e-1")
    assert_array_equal(s.coeffs[0], [0.1, -0.5, 0.0, -2.0])


def test_s_times_monomial():
    s = parse_poly("S*x + x^2")
    assert_array_equal(s.s_coeffs[0], [0.0, 1.0, 0.0])
    assert_array_equal(s.coeffs[0], [0.0, 0.0, 1.0])


def test_explicit_dimension():
    assert parse_poly("x^2 - 1", d=2).coeffs.shape == (1, 3, 3)
    with pytest.raises(PolyParseError):
        parse_poly("x*y", d=1)


@pytest.mark.parametrize("text", ["", "   ", "x^7", "x^2 +", "x ^ y", "2 $ x", "x^2 - S*S", "x^-1", "x^1.5",
                                  "* x"])
def test_rejects(text):
    with pytest.raises(PolyParseError):
        parse_poly(text)


def test_error_carries_position():
    with pytest.raises(PolyParseError) as err:
        parse_poly("x^2 $ 1")
    assert err.value.position == 4
    assert err.value.exit_code == 5


def test_degree_limit_counts_both_variables():
    parse_poly("x^3*y^3")
    with pytest.raises(PolyParseError):
        parse_poly("x^4*y^3")
