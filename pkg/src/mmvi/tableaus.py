"""Partitioned Runge-Kutta coefficient pairs and their order conditions."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from math import sqrt

import numpy as np


@dataclass(frozen=True)
class PartitionedTableau:
    """Coefficients (a, b, c) for positions and (abar, bbar) for momenta."""

    name: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    abar: np.ndarray
    bbar: np.ndarray
    order: int
    symplectic: bool

    @property
    def s(self):
        return self.b.size


def _make(name, a, b, abar=None, bbar=None, order=2, symplectic=True):
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    abar = a.copy() if abar is None else np.array(abar, dtype=float)
    bbar = b.copy() if bbar is None else np.array(bbar, dtype=float)
    return PartitionedTableau(name, a, b, a.sum(axis=1), abar, bbar, order, symplectic)


def _gauss1():
    return _make("Gauss1", [[0.5]], [1.0], order=2)


def _gauss2():
    r = sqrt(3.0) / 6
    return _make("Gauss2", [[0.25, 0.25 - r], [0.25 + r, 0.25]], [0.5, 0.5], order=4)


def _lobatto2():
    return _make(
        "Lobatto2",
        [[0.0, 0.0], [0.5, 0.5]],
        [0.5, 0.5],
        abar=[[0.5, 0.0], [0.5, 0.0]],
        order=2,
    )


def _lobatto3():
    return _make(
        "Lobatto3",
        [[0.0, 0.0, 0.0], [5 / 24, 1 / 3, -1 / 24], [1 / 6, 2 / 3, 1 / 6]],
        [1 / 6, 2 / 3, 1 / 6],
        abar=[[1 / 6, -1 / 6, 0.0], [1 / 6, 1 / 3, 0.0], [1 / 6, 5 / 6, 0.0]],
        order=4,
    )


def _radau3():
    r = sqrt(6.0)
    a = [
        [(88 - 7 * r) / 360, (296 - 169 * r) / 1800, (-2 + 3 * r) / 225],
        [(296 + 169 * r) / 1800, (88 + 7 * r) / 360, (-2 - 3 * r) / 225],
        [(16 - r) / 36, (16 + r) / 36, 1 / 9],
    ]
    return _make("Radau3", a, a[2], order=5, symplectic=False)


_FACTORIES = {
    "Gauss1": _gauss1,
    "Gauss2": _gauss2,
    "Lobatto2": _lobatto2,
    "Lobatto3": _lobatto3,
    "Radau3": _radau3,
}
TABLEAU_NAMES = tuple(_FACTORIES)


def get_tableau(name) -> PartitionedTableau:
    try:
        return _FACTORIES[name]()
    except KeyError:
        raise ValueError(f"unknown tableau {name!r}; choose from {TABLEAU_NAMES}") from None


def symplecticity_defect(tab: PartitionedTableau) -> float:
    """max |b_i abar_ij + bbar_j a_ji - b_i bbar_j| together with max |b - bbar|."""
    b, bb = tab.b, tab.bbar
    M = b[:, None] * tab.abar + bb[None, :] * tab.a.T - np.outer(b, bb)
    return float(max(np.abs(M).max(), np.abs(b - bb).max()))


# ---------------------------------------------------------- order conditions
# A rooted tree is a sorted tuple of its child subtrees; a bicolored tree adds
# a colour bit per vertex (0: position tableau a/b, 1: momentum tableau abar/bbar).


@lru_cache(maxsize=None)
def rooted_trees(order):
    """All unlabelled rooted trees with ``order`` vertices."""
    if order == 1:
        return ((),)
    out = set()
    for children in _forests(order - 1, order - 1):
        out.add(tuple(sorted(children)))
    return tuple(sorted(out))


def _forests(n, max_size):
    if n == 0:
        yield ()
        return
    for size in range(min(n, max_size), 0, -1):
        for t in rooted_trees(size):
            for rest in _forests(n - size, size):
                yield (t,) + rest


def _size(t):
    return 1 + sum(_size(c) for c in t)


def _gamma(t):
    out = _size(t)
    for ch in t:
        out *= _gamma(ch)
    return out


def _colourings(t):
    """Yield (colour, children-colourings) pairs for every vertex colouring."""
    child_opts = [list(_colourings(ch)) for ch in t]
    for colour in (0, 1):
        for combo in product(*child_opts):
            yield (colour, combo)


def _stage_weights(ct, tab):
    _, children = ct
    phi = np.ones(tab.s)
    for ch in children:
        A = tab.a if ch[0] == 0 else tab.abar
        phi = phi * (A @ _stage_weights(ch, tab))
    return phi


def order_condition_defects(tab: PartitionedTableau, order: int):
    """Largest |Phi(t) - 1/gamma(t)| over bicoloured trees of each size."""
    out = {}
    for n in range(1, order + 1):
        worst = 0.0
        for t in rooted_trees(n):
            inv_gamma = 1.0 / _gamma(t)
            for ct in _colourings(t):
                w = tab.b if ct[0] == 0 else tab.bbar
                worst = max(worst, abs(float(w @ _stage_weights(ct, tab)) - inv_gamma))
        out[n] = worst
    return out
