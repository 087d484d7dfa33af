"""Backtracking (Armijo) line search for maximization."""

import numpy as np

from .exceptions import NumericalOverflow

# relative size of the floating-point noise floor of an objective value
NOISE_REL = 1e-13


def safe(fun):
    """Wrap ``fun`` so that overflowing trial points evaluate to ``-inf``."""

    def wrapped(*args, **kwargs):
        try:
            with np.errstate(over="ignore"):
                val = fun(*args, **kwargs)
        except NumericalOverflow:
            return -np.inf
        return val if np.isfinite(val) else -np.inf

    return wrapped


def backtrack(phi, f0, slope, c=1e-4, shrink=0.5, min_step=1e-14, scale=None):
    """Largest ``alpha = shrink**j`` with ``phi(alpha) >= f0 + c alpha slope``.

    ``slope`` is the directional derivative at ``alpha = 0`` (positive for an
    ascent direction). Once the predicted gain ``alpha * slope`` drops below
    the rounding noise of ``f0`` the Armijo test is meaningless; the step is
    then accepted as long as it does not measurably decrease the objective.

    Returns
    -------
    (alpha, value) or (None, None) when ``alpha`` falls below ``min_step``.
    """
    noise = NOISE_REL * max(1.0, abs(f0) if scale is None else scale)
    alpha = 1.0
    while alpha >= min_step:
        val = phi(alpha)
        if val >= f0 + c * alpha * slope:
            return alpha, val
        if alpha * slope <= noise and val >= f0 - noise:
            return alpha, val
        alpha *= shrink
    return None, None
