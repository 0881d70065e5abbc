"""Independent reference solutions and brute-force checks used by the tests."""
import itertools
import math

import numpy as np
from scipy.special import erf, erfc


def slab_fourier(x, t, length=1.0, alpha=1.0, t_init=1.0, t_wall=0.0, terms=50):
    """Slab ``0 < x < length`` at ``t_init``, both faces held at ``t_wall``
    from ``t = 0``. Sum of the first ``terms`` non-zero (odd) modes."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for j in range(terms):
        n = 2 * j + 1
        out += 4.0 / (n * math.pi) * np.sin(n * math.pi * x / length) * \
            math.exp(-(n * math.pi / length) ** 2 * alpha * t)
    return t_wall + (t_init - t_wall) * out


def bisect(f, lo, hi, tol=1e-14, maxiter=200):
    flo = f(lo)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def neumann_lambda(k_s, k_l, c_s, c_l, rho, latent, t_wall, t_melt, t_init):
    """Root of the two-phase Neumann transcendental equation for
    solidification of a liquid at ``t_init`` cooled at ``x = 0``; the front
    sits at ``2 lam sqrt(alpha_s t)``."""
    a_s = k_s / (rho * c_s)
    a_l = k_l / (rho * c_l)
    nu = math.sqrt(a_s / a_l)

    def f(lam):
        solid = k_s * (t_melt - t_wall) * math.exp(-lam ** 2) / (math.sqrt(math.pi * a_s) * erf(lam))
        liquid = k_l * (t_init - t_melt) * math.exp(-(lam * nu) ** 2) / \
            (math.sqrt(math.pi * a_l) * erfc(lam * nu))
        return solid - liquid - rho * latent * lam * math.sqrt(a_s)

    return bisect(f, 1e-9, 5.0), a_s


def brute_face_adjacency(tets):
    """Set of element pairs sharing three nodes, by all-pairs comparison."""
    sets = [frozenset(t) for t in np.asarray(tets).tolist()]
    out = set()
    for i, j in itertools.combinations(range(len(sets)), 2):
        if len(sets[i] & sets[j]) == 3:
            out.add((i, j))
    return out


def brute_bandwidth(edges, new_of_old):
    return max(abs(new_of_old[a] - new_of_old[b]) for a, b in edges) if edges else 0


def min_bandwidth(n, edges):
    best = None
    for perm in itertools.permutations(range(n)):
        bw = brute_bandwidth(edges, perm)
        best = bw if best is None else min(best, bw)
    return best


def dense_system(nodes, tets, rho, c, k):
    """Consistent global matrices of linear tets, formed from scratch:
    capacitance ``M`` and conductance ``K``."""
    n = nodes.shape[0]
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    for t in np.asarray(tets):
        X = nodes[t]
        A = np.column_stack([np.ones(4), X])
        V = abs(np.linalg.det(A)) / 6.0
        G = np.linalg.inv(A)[1:, :].T  # rows: grad N_a
        K[np.ix_(t, t)] += k * V * G @ G.T
        Me = rho * c * V / 20.0 * (np.ones((4, 4)) + np.eye(4))
        M[np.ix_(t, t)] += Me
    return M, K
