"""Closed-form conformal quantities: annulus moduli, modulus bounds and
extremal-length brackets for the appendix family."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * math.pi


def annulus_modulus(r_in: float, r_out: float) -> float:
    """Modulus log(r_out / r_in) / 2 pi of the plane annulus r_in < |z| < r_out."""
    if not (0.0 < r_in < r_out):
        raise DomainError("need 0 < r_in < r_out")
    return math.log(r_out / r_in) / TWO_PI


def modulus_height_bound(H: float, area: float, flat: bool = False):
    """Lower bound H^2 / Area for the modulus of a cylinder of height H.

    Returns (bound, equality) where equality is True when the caller declares
    a flat straight cylinder, in which case the bound is the modulus.
    """
    if H <= 0 or area <= 0:
        raise DomainError("H and area must be positive")
    return H * H / area, bool(flat)


def subadditivity_check(M: float, M1: float, M2: float, tol: float = 1e-9) -> bool:
    """M >= M1 + M2 for a cylinder cut along a waist into two subcylinders."""
    return M >= M1 + M2 - tol


def strebel_extremal_length(r: float) -> float:
    """Extremal length 2 r^2 of the curve separating x1, x2 from x3, x4 on S_{r, phi}."""
    if r <= 0:
        raise DomainError("r must be positive")
    return 2.0 * r * r


@dataclass(frozen=True)
class ModulusBracket:
    lower: float
    upper: float
    lower_source: str = "log(16 y'_{k-1} / y'_k) with y'_j = tan(eps^j / 2)^(1 / theta1)"
    upper_source: str = "2 pi theta1 / log(1 / eps)"

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError("bracket with lower > upper")

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= x <= self.upper + tol


def _log_y_ratio(theta1, eps, k):
    # log(y'_{k-1} / y'_k) with y'_j = tan(eps^j / 2)^(1 / theta1)
    a = math.tan(0.5 * eps ** (k - 1))
    b = math.tan(0.5 * eps ** k)
    return (math.log(a) - math.log(b)) / theta1


def appendix_ext_bracket(theta1: float, eps: float, k: int = 2) -> ModulusBracket:
    """Bracket for the extremal length of the curve gamma_k about x1.

    upper = 2 pi theta1 / log(1/eps) comes from the round annulus between the
    scales eps^k and eps^(k-1).  lower = 2 pi / log(16 y'_{k-1} / y'_k) is the
    planar comparison, whose denominator is theta1 log 16 + log(1/eps) plus
    the exact correction term.
    """
    if not (0.0 < eps < 0.5):
        raise DomainError("eps must lie in (0, 1/2)")
    if theta1 <= 0:
        raise DomainError("theta1 must be positive")
    if k < 1 or int(k) != k:
        raise DomainError("k must be a positive integer")
    upper = TWO_PI * theta1 / math.log(1.0 / eps)
    lower = TWO_PI / (math.log(16.0) + _log_y_ratio(theta1, eps, k))
    return ModulusBracket(lower, upper)


def theorem_d_threshold(theta_hat, chi: int, nb: float, ext: float) -> float:
    """Angle threshold below which no spherical metric exists in the conformal class.

    theta1* = (1/pi) (e / (pi (1 + 4 |theta_hat|_1)))^(1 - 3 chi) with
    e = min(NB / 2, exp(-pi (1 + 2 |theta_hat|_1) / Ext)).
    """
    if not chi < -1:
        raise DomainError("need chi < -1")
    if not nb > 0:
        raise DomainError("need NB > 0")
    if not ext > 0:
        raise DomainError("need Ext > 0")
    norm = float(np.sum(np.abs(np.asarray(theta_hat, dtype=float))))
    e = min(0.5 * nb, math.exp(-math.pi * (1.0 + 2.0 * norm) / ext))
    val = (e / (math.pi * (1.0 + 4.0 * norm))) ** (1 - 3 * chi) / math.pi
    assert val < 1e-6, f"threshold {val} not below 1e-6"
    return val


def sys_ext_ratio(ext: float, sys: float, theta_norm: float, chi: int) -> float:
    """Ext log(1/sys) / (2 pi |theta|_1 (-chi)), asymptotically at most 3 - 1/chi."""
    if not chi < 0:
        raise DomainError("need chi < 0")
    if not (0.0 < sys < 1.0) or ext <= 0:
        raise DomainError("need 0 < sys < 1 and Ext > 0")
    return ext * math.log(1.0 / sys) / (TWO_PI * theta_norm * (-chi))


def sys_ext_limit(chi: int) -> float:
    return 3.0 - 1.0 / chi
