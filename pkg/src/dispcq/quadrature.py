"""Quadrature on the reference triangle {0 <= x2 <= x1 <= 1} and singular pair rules.

Triangles are charted as chi(x1, x2) = P0 + x1 (P1 - P0) + x2 (P2 - P1), whose
Jacobian is twice the area.  Pair rules integrate over the product of two
reference triangles and return (x_hat, y_hat, weight) triples whose weights
sum to 1/4.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ConfigError


@lru_cache(maxsize=None)
def gauss01(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(order: int):
    """Rule on the reference triangle (area 1/2) exact for polynomials of degree ``order``.

    Symmetric rules for degrees 1, 2 and 4; collapsed Gauss beyond that.
    Returns (points (n, 2) in (x1, x2) chart coordinates, weights (n,)).
    """
    if order < 1:
        raise ConfigError("triangle quadrature order must be >= 1")
    if order == 1:
        bary = np.array([[1 / 3, 1 / 3, 1 / 3]])
        w = np.array([1.0])
    elif order == 2:
        bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 3)
    elif order in (3, 4):
        a, b = 0.445948490915965, 0.091576213509771
        wa, wb = 0.223381589678011, 0.109951743655322
        bary = np.array(
            [
                [1 - 2 * a, a, a], [a, 1 - 2 * a, a], [a, a, 1 - 2 * a],
                [1 - 2 * b, b, b], [b, 1 - 2 * b, b], [b, b, 1 - 2 * b],
            ]
        )
        w = np.array([wa] * 3 + [wb] * 3)
    else:
        n = (order + 3) // 2  # the Duffy Jacobian adds one degree in u
        g, gw = gauss01(n)
        u, v = np.meshgrid(g, g, indexing="ij")
        wu, wv = np.meshgrid(gw, gw, indexing="ij")
        # Duffy: x1 = u, x2 = u v  (Jacobian u)
        pts = np.stack([u.ravel(), (u * v).ravel()], axis=1)
        return pts, (wu * wv * u).ravel()
    # barycentric (l0, l1, l2) -> chart point P0 l0 + P1 l1 + P2 l2
    # chart: x1 = l1 + l2, x2 = l2
    pts = np.stack([bary[:, 1] + bary[:, 2], bary[:, 2]], axis=1)
    return pts, 0.5 * w


def _grid4(n):
    g, w = gauss01(n)
    mesh = np.meshgrid(g, g, g, g, indexing="ij")
    wm = np.meshgrid(w, w, w, w, indexing="ij")
    pts = [m.ravel() for m in mesh]
    wt = wm[0].ravel() * wm[1].ravel() * wm[2].ravel() * wm[3].ravel()
    return pts, wt


@lru_cache(maxsize=None)
def pair_rule(kind: str, order: int):
    """Sauter-Schwab relative-coordinate rule for a singular triangle pair.

    kind: ``"identical"``, ``"edge"`` (shared edge charted as {(t, 0)} in both
    triangles, same orientation) or ``"vertex"`` (shared vertex at the chart
    origin in both).  ``order`` Gauss points are used per cube dimension.
    """
    if order < 2:
        raise ConfigError("singular quadrature order must be >= 2")
    (xi, e1, e2, e3), w = _grid4(order)
    X, Y, W = [], [], []

    def add(x, y, weight):
        X.append(np.stack(x, axis=1))
        Y.append(np.stack(y, axis=1))
        W.append(w * weight)

    if kind == "identical":
        jac = xi**3 * e1**2 * e2
        a = (xi, xi * (1 - e1 + e1 * e2))
        b = (xi * (1 - e1 * e2 * e3), xi * (1 - e1))
        add(a, b, jac)
        add(b, a, jac)
        a = (xi, xi * e1 * (1 - e2 + e2 * e3))
        b = (xi * (1 - e1 * e2), xi * e1 * (1 - e2))
        add(a, b, jac)
        add(b, a, jac)
        a = (xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3))
        b = (xi, xi * e1 * (1 - e2))
        add(a, b, jac)
        add(b, a, jac)
    elif kind == "edge":
        j1 = xi**3 * e1**2
        j2 = j1 * e2
        add((xi, xi * e1 * e3), (xi * (1 - e1 * e2), xi * e1 * (1 - e2)), j1)
        add((xi, xi * e1), (xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), j2)
        add((xi * (1 - e1 * e2), xi * e1 * (1 - e2)), (xi, xi * e1 * e2 * e3), j2)
        add((xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), (xi, xi * e1), j2)
        add((xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)), (xi, xi * e1 * e2), j2)
    elif kind == "vertex":
        jac = xi**3 * e2
        add((xi, xi * e1), (xi * e2, xi * e2 * e3), jac)
        add((xi * e2, xi * e2 * e3), (xi, xi * e1), jac)
    else:
        raise ValueError(f"unknown pair kind {kind!r}")
    return np.concatenate(X), np.concatenate(Y), np.concatenate(W)


def chart(corners, ref):
    """Map chart points ``ref`` (n, 2) through triangles ``corners`` (..., 3, 3) -> (..., n, 3)."""
    p0, p1, p2 = corners[..., 0, :], corners[..., 1, :], corners[..., 2, :]
    return (
        p0[..., None, :]
        + ref[:, 0, None] * (p1 - p0)[..., None, :]
        + ref[:, 1, None] * (p2 - p1)[..., None, :]
    )


def edge_rule(n: int):
    """Gauss-Legendre on [0, 1] for edge moments."""
    return gauss01(n)
