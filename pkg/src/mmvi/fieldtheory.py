"""Continuum field theory: densities, Sine-Gordon solitons, continuum energy.

Lagrangian densities have the form ``0.5 * phi_t**2 - R(phi_X, phi)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq


@dataclass(frozen=True)
class DensitySpec:
    """Potential part ``R(phi_X, phi)`` of the density and its partials.

    ``name`` lets the semi-discretization pick closed-form cell integrals
    when they are known (currently only for ``"sine_gordon"``).
    """

    R: Callable
    dR_dphiX: Callable
    dR_dphi: Callable
    name: str = "generic"


sine_gordon = DensitySpec(
    R=lambda px, ph: 0.5 * px**2 + 1.0 - np.cos(ph),
    dR_dphiX=lambda px, ph: px,
    dR_dphi=lambda px, ph: np.sin(ph),
    name="sine_gordon",
)


@dataclass(frozen=True)
class SolitonParams:
    X0: float
    v: float
    Xmax: float = 25.0

    def __post_init__(self):
        _check_speed(self.v)


def _check_speed(v):
    if not abs(v) < 1.0:
        raise ValueError(f"soliton speed must satisfy |v| < 1, got {v}")


def _width(v):
    _check_speed(v)
    return np.sqrt(1.0 - v * v)


def soliton(X, t, p: SolitonParams):
    """Single kink ``4 arctan(exp((X - X0 - v t) / sqrt(1 - v^2)))``."""
    xi = (np.asarray(X, dtype=float) - p.X0 - p.v * t) / _width(p.v)
    # arctan(exp(xi)) = pi/2 - arctan(exp(-xi)) keeps both tails accurate
    return np.where(
        xi <= 0,
        4.0 * np.arctan(np.exp(np.minimum(xi, 0.0))),
        2.0 * np.pi - 4.0 * np.arctan(np.exp(-np.maximum(xi, 0.0))),
    )


def soliton_dX(X, t, p: SolitonParams):
    w = _width(p.v)
    xi = (np.asarray(X, dtype=float) - p.X0 - p.v * t) / w
    return 2.0 / (w * np.cosh(xi))


def soliton_dt(X, t, p: SolitonParams):
    return -p.v * soliton_dX(X, t, p)


def _sinh_over_cosh(a, b):
    """sinh(a)/cosh(b) without overflow for large |a|, |b|."""
    a = np.asarray(a, dtype=float)
    b = np.abs(np.asarray(b, dtype=float))
    aa = np.abs(a)
    return np.sign(a) * np.exp(aa - b) * (-np.expm1(-2 * aa)) / (1.0 + np.exp(-2 * b))


def _cosh_over_cosh(a, b):
    a = np.abs(np.asarray(a, dtype=float))
    b = np.abs(np.asarray(b, dtype=float))
    return np.exp(a - b) * (1.0 + np.exp(-2 * a)) / (1.0 + np.exp(-2 * b))


def two_soliton(X, t, v):
    """Kink-antikink pair ``4 arctan(v sinh(X/w) / cosh(v t/w))``, w = sqrt(1-v^2)."""
    w = _width(v)
    F = v * _sinh_over_cosh(np.asarray(X, dtype=float) / w, v * np.asarray(t, dtype=float) / w)
    return 4.0 * np.arctan(F)


def two_soliton_dX(X, t, v):
    w = _width(v)
    X = np.asarray(X, dtype=float)
    F = v * _sinh_over_cosh(X / w, v * t / w)
    dF = v * _cosh_over_cosh(X / w, v * t / w) / w
    return 4.0 * dF / (1.0 + F * F)


def two_soliton_dt(X, t, v):
    w = _width(v)
    F = v * _sinh_over_cosh(np.asarray(X, dtype=float) / w, v * t / w)
    dF = -F * (v / w) * np.tanh(v * t / w)
    return 4.0 * dF / (1.0 + F * F)


def find_bounce_time(Xmax, v):
    """Half-bounce time T with ``two_soliton(Xmax/2, T, v) == pi``.

    Brent bracketing on (0, 10 Xmax / v) followed by Newton polishing.
    """
    _check_speed(v)
    if Xmax <= 0 or v == 0:
        raise ValueError("need Xmax > 0 and v != 0")
    v = abs(v)
    half = 0.5 * Xmax

    def resid(t):
        return float(two_soliton(half, t, v)) - np.pi

    lo, hi = 0.0, 10.0 * Xmax / v
    if resid(lo) * resid(hi) > 0:
        raise ValueError("no bounce time bracketed in (0, 10 Xmax / v)")
    T = brentq(resid, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    for _ in range(5):
        r = resid(T)
        if abs(r) < 1e-15:
            break
        T -= r / float(two_soliton_dt(half, T, v))
    if abs(resid(T)) >= 1e-12:
        raise ValueError("bounce-time root did not reach the residual target")
    return float(T)


def nearly_exact_bounce(X, t, Xmax, v, T):
    """Wall-bouncing single-kink reference on [0, Xmax] with period 4T."""
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("reference defined for t >= 0 only")
    n = np.floor(t / (4.0 * T))
    local = t - 4.0 * n * T
    first = local < 2.0 * T
    a = two_soliton(X - Xmax, t - (4 * n + 1) * T, v) + 2.0 * np.pi
    b = two_soliton(X, t - (4 * n + 3) * T, v)
    return np.where(first, a, b)


def continuum_energy(profile, profile_t, density: DensitySpec, Xmax, nquad=200, profile_x=None):
    """Energy ``int_0^Xmax 0.5 phi_t^2 + R(phi_X, phi) dX``.

    Composite 5-point Gauss-Legendre on ``nquad`` uniform panels.  Without
    ``profile_x`` the slope is taken from a 4th-order centered difference.
    """
    if nquad < 2:
        raise ValueError("nquad must be at least 2")
    nodes, weights = np.polynomial.legendre.leggauss(5)
    edges = np.linspace(0.0, Xmax, nquad + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    X = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    phi = np.asarray(profile(X), dtype=float)
    phit = np.asarray(profile_t(X), dtype=float)
    if profile_x is None:
        h = 1e-3 * max(1.0, Xmax / nquad)
        phix = (
            -profile(X + 2 * h) + 8 * profile(X + h) - 8 * profile(X - h) + profile(X - 2 * h)
        ) / (12 * h)
    else:
        phix = np.asarray(profile_x(X), dtype=float)
    density_vals = 0.5 * phit**2 + density.R(phix, phi)
    return float(np.dot(w, density_vals))
