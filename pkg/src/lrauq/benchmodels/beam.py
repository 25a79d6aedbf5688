"""Simply supported beam under a midspan point load.

Inputs ``(b, h, L, E, P)`` in m, m, m, MPa, kN; the deflection
``P L^3 / (4 E b h^3)`` then comes out in millimeters.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from ..probcore import InputModel, Marginal

# (name, mean, CoV)
BEAM_INPUTS = (
    ("b", 0.15, 0.05),
    ("h", 0.3, 0.05),
    ("L", 5.0, 0.01),
    ("E", 30000.0, 0.15),
    ("P", 10.0, 0.20),
)


def beam_input_model() -> InputModel:
    return InputModel([Marginal.lognormal(m, c, name) for name, m, c in BEAM_INPUTS])


def beam_deflection(x) -> np.ndarray | float:
    """Midspan deflection in mm for rows ``x = (b, h, L, E, P)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 5:
        raise ValueError("beam model takes 5 inputs (b, h, L, E, P)")
    if np.any(x <= 0):
        raise ValueError("beam inputs must be positive")
    b, h, length, e, p = np.moveaxis(x, -1, 0)
    u = p * length**3 / (4.0 * e * b * h**3)
    return float(u) if np.ndim(u) == 0 else u


def beam_log_params() -> tuple[float, float]:
    """``(lambda_U, zeta_U)`` of the lognormal deflection."""
    par = {name: Marginal.lognormal(m, c).params for name, m, c in BEAM_INPUTS}
    lam = (-math.log(4.0) + par["P"][0] + 3 * par["L"][0] - par["E"][0]
           - par["b"][0] - 3 * par["h"][0])
    zeta = math.sqrt(par["P"][1] ** 2 + 9 * par["L"][1] ** 2 + par["E"][1] ** 2
                     + par["b"][1] ** 2 + 9 * par["h"][1] ** 2)
    return lam, zeta


def beam_analytical_pf(u_lim):
    """Exact ``P(U >= u_lim)`` for the lognormal beam deflection."""
    lam, zeta = beam_log_params()
    u_lim = np.asarray(u_lim, dtype=float)
    with np.errstate(divide="ignore"):
        t = (np.log(np.where(u_lim > 0, u_lim, 0.0)) - lam) / zeta
    pf = ndtr(-t)
    return float(pf) if pf.ndim == 0 else pf


def beam_analytical_pdf(u):
    lam, zeta = beam_log_params()
    u = np.asarray(u, dtype=float)
    us = np.where(u > 0, u, 1.0)
    t = (np.log(us) - lam) / zeta
    return np.where(u > 0, np.exp(-0.5 * t * t) / (us * zeta * math.sqrt(2 * math.pi)), 0.0)
