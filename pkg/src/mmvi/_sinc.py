"""sin(x)/x and its first two derivatives without cancellation near 0."""
import numpy as np

_SERIES_CUTOFF = 1.0
_TERMS = 12


def _series(x, deriv):
    # sin(x)/x = sum_n (-1)^n x^(2n) / (2n+1)!
    x2 = x * x
    out = np.zeros_like(x)
    fact = 1.0
    for n in range(_TERMS):
        if n > 0:
            fact *= (2 * n) * (2 * n + 1)
        c = (-1.0) ** n / fact
        p = 2 * n
        if deriv == 0:
            out += c * x2**n
        elif deriv == 1 and p >= 1:
            out += c * p * x ** (p - 1)
        elif deriv == 2 and p >= 2:
            out += c * p * (p - 1) * x ** (p - 2)
    return out


def sinc_derivs(x):
    """Return (j, j', j'') for j(x) = sin(x)/x, elementwise."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    xs = np.where(small, x, 0.0)
    xl = np.where(small, 1.0, x)
    s, c = np.sin(xl), np.cos(xl)
    j = np.where(small, _series(xs, 0), s / xl)
    j1 = np.where(small, _series(xs, 1), (xl * c - s) / xl**2)
    j2 = np.where(small, _series(xs, 2), -s / xl - 2.0 * c / xl**2 + 2.0 * s / xl**3)
    return j, j1, j2
