"""Logistic link helpers shared by every estimator.

``g`` is the logistic function, ``g_dot`` its derivative and ``G`` the
antiderivative ``log(1 + e^a)`` that appears in the logistic loss.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

# Upper clip for exp() of a linear predictor; the lower side cannot overflow.
EXP_CLIP = 30.0


def g(x):
    return expit(x)


def g_dot(x):
    p = expit(x)
    return p * (1.0 - p)


def G(x):
    return np.logaddexp(0.0, x)


def safe_exp(x, clip: float = EXP_CLIP):
    """``exp(min(x, clip))``; used only while searching, never to certify."""
    return np.exp(np.minimum(x, clip))
