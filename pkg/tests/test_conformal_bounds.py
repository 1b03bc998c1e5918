import math

import pytest
from hypothesis import given, settings, strategies as st

from spherecone.conformal_bounds import (ModulusBracket, annulus_modulus, appendix_ext_bracket, modulus_height_bound,
                                         strebel_extremal_length, subadditivity_check, sys_ext_limit, sys_ext_ratio,
                                         theorem_d_threshold)
from spherecone.errors import DomainError


def test_annulus_modulus():
    assert annulus_modulus(1.0, math.e ** (2 * math.pi)) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        annulus_modulus(2.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(1.01, 5.0), st.floats(1.01, 5.0))
def test_annulus_subadditive(a, p, q):
    # cutting along a round circle is additive, so equality holds
    M = annulus_modulus(a, a * p * q)
    assert subadditivity_check(M, annulus_modulus(a, a * p), annulus_modulus(a * p, a * p * q))


def test_flat_cylinder_height_bound():
    # flat cylinder of circumference c and height H has modulus H / c = H^2 / Area
    H, c = 0.7, 2.0
    bound, eq = modulus_height_bound(H, H * c, flat=True)
    assert eq and bound == pytest.approx(H / c)
    with pytest.raises(DomainError):
        modulus_height_bound(0.0, 1.0)


def test_strebel():
    assert strebel_extremal_length(0.5) == 0.5


def test_bracket():
    b = ModulusBracket(1.0, 2.0)
    assert b.contains(1.5) and not b.contains(2.1) and b.contains(2.0 + 1e-9, tol=1e-6)
    with pytest.raises(ValueError):
        ModulusBracket(2.0, 1.0)


@pytest.mark.parametrize("eps", [1e-2, 1e-3, 1e-5])
def test_appendix_bracket_tightens(eps):
    b = appendix_ext_bracket(0.5, eps, 2)
    assert b.upper == pytest.approx(math.pi / math.log(1 / eps))
    # the two sides agree to leading order as eps -> 0
    assert b.upper / b.lower - 1 < 5 / math.log(1 / eps)
    with pytest.raises(DomainError):
        appendix_ext_bracket(0.5, 0.7)


def test_theorem_d_threshold():
    val = theorem_d_threshold([1.0, 1.0], -2, 1.0, 1e6)
    assert val == pytest.approx((1 / math.pi) * (1 / (18 * math.pi)) ** 7, rel=1e-4)
    with pytest.raises(DomainError):
        theorem_d_threshold([1.0], -1, 1.0, 1.0)


def test_sys_ext_ratio():
    assert sys_ext_ratio(0.1, 10 ** -10, 1.0, -1) == pytest.approx(0.1 * math.log(1e10) / (2 * math.pi))
    assert sys_ext_limit(-2) == 3.5
