"""Quadrature rules used by the assay and estimator modules.

Two engines live here:

* :func:`composite_gauss_legendre` integrates a vectorised integrand over
  many intervals at once (one row per upper limit). The assay module uses it
  on a log-duration scale, where the test-recent curve is smooth.
* :func:`adaptive_simpson` is a scalar adaptive rule with an absolute
  tolerance. It is slow but independent of the Gauss-Legendre path, which
  makes it the reference the tests check the fast path against.
"""

from functools import lru_cache

import numpy as np

DEFAULT_ORDER = 16
DEFAULT_PANELS = 16


@lru_cache(maxsize=None)
def gauss_legendre(order):
    """Nodes and weights of the ``order``-point rule on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_nodes(lo, hi, panels=DEFAULT_PANELS, order=DEFAULT_ORDER):
    """Composite Gauss-Legendre nodes for the intervals ``[lo_i, hi_i]``.

    Parameters
    ----------
    lo, hi : array_like
        Interval end points; broadcast against each other.
    panels : int
        Number of equal panels each interval is split into.
    order : int
        Gauss-Legendre points per panel.

    Returns
    -------
    nodes, weights : ndarray
        Arrays of shape ``lo.shape + (panels * order,)``. Summing
        ``weights * f(nodes)`` over the last axis integrates ``f``.
    """
    if panels < 1:
        raise ValueError("panels must be >= 1")
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    x, w = gauss_legendre(order)
    h = (hi - lo) / panels
    starts = lo[..., None] + h[..., None] * np.arange(panels)
    nodes = starts[..., None] + (h[..., None, None] / 2.0) * (x + 1.0)
    weights = np.broadcast_to((h[..., None, None] / 2.0) * w, nodes.shape)
    shape = lo.shape + (panels * order,)
    return nodes.reshape(shape), weights.reshape(shape)


def composite_gauss_legendre(func, lo, hi, panels=DEFAULT_PANELS, order=DEFAULT_ORDER):
    """Integrate a vectorised ``func`` over each ``[lo_i, hi_i]``."""
    nodes, weights = composite_nodes(lo, hi, panels, order)
    return np.sum(weights * func(nodes), axis=-1)


def adaptive_simpson(func, a, b, tol=1e-9, max_depth=50):
    """Adaptive Simpson integral of a scalar function on ``[a, b]``.

    The recursion stops on an interval once the Richardson error estimate
    ``|S_left + S_right - S_whole| / 15`` falls below the tolerance share of
    that interval.
    """
    if b == a:
        return 0.0
    if b < a:
        return -adaptive_simpson(func, b, a, tol, max_depth)

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = func(lm), func(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (recurse(a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(m, b, fm, frm, fb, right, tol / 2.0, depth - 1))

    fa, fb = func(a), func(b)
    fm = func(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)
