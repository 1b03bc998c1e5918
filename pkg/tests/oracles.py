"""Independent oracles used by the tests."""
import itertools
import math

import numpy as np


def nb_brute_force(theta, chi_dot):
    """NB by enumerating every proper subset I and every b in a generous window."""
    th = [float(x) for x in theta]
    n = len(th)
    bmax = int(math.ceil((abs(chi_dot) + math.fsum(th)) / 2)) + 3
    best = math.inf
    for mask in range((1 << n) - 1):
        sI = math.fsum(th[i] for i in range(n) if mask >> i & 1)
        sIc = math.fsum(th[i] for i in range(n) if not mask >> i & 1)
        for b in range(bmax + 1):
            best = min(best, abs(chi_dot - (sI - sIc + 2 * b)))
    return best


def odd_lattice_brute_force(theta):
    x = np.asarray(theta, dtype=float) - 1.0
    best = math.inf
    ranges = [range(int(math.floor(v)) - 2, int(math.floor(v)) + 3) for v in x]
    for z in itertools.product(*ranges):
        if sum(z) % 2 == 1:
            best = min(best, float(np.abs(x - np.array(z)).sum()))
    return best


def _frame(z):
    z = np.asarray(z, dtype=float)
    z = z / np.linalg.norm(z)
    a = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(z, a)
    e1 /= np.linalg.norm(e1)
    return z, e1, np.cross(z, e1)


def degree_area(vertices, z, n_phi=8192):
    """Integral of the degree function of a closed piecewise-geodesic loop.

    Meridians run from z to -z.  Along a meridian the degree jumps by the
    crossing sign at each crossing with the loop, so the meridian integral is
    sum sign * (1 - sin(latitude)); the longitudes are integrated with the
    midpoint rule.  The sign is fixed so that a counterclockwise loop around
    a small cap far from z gets positive area.
    """
    z, e1, e2 = _frame(z)
    V = np.asarray(vertices, dtype=float)
    k = len(V)
    phis = (np.arange(n_phi) + 0.5) * (2 * math.pi / n_phi)
    u = np.cos(phis)[:, None] * e1[None, :] + np.sin(phis)[:, None] * e2[None, :]
    nrm = np.cross(np.broadcast_to(z, u.shape), u)  # normal of the meridian plane
    total = np.zeros(n_phi)
    for i in range(k):
        A, B = V[i], V[(i + 1) % k]
        a, b = nrm @ A, nrm @ B
        cross = a * b < 0
        if not cross.any():
            continue
        # point of the minor arc on the plane
        c = np.abs(b)[:, None] * A + np.abs(a)[:, None] * B
        c /= np.linalg.norm(c, axis=1)[:, None]
        on_half = np.einsum("ij,ij->i", c, u) > 0
        sgn = np.sign(a - b)
        lat_sin = c @ (-z)
        contrib = np.where(cross & on_half, sgn * (1.0 - lat_sin), 0.0)
        total += contrib
    return float(total.sum() * (2 * math.pi / n_phi))
