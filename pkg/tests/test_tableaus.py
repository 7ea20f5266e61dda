import numpy as np
import pytest

from mmvi.tableaus import (
    TABLEAU_NAMES,
    get_tableau,
    order_condition_defects,
    rooted_trees,
    symplecticity_defect,
)

ORDERS = {"Gauss1": 2, "Gauss2": 4, "Lobatto2": 2, "Lobatto3": 4, "Radau3": 5}


def test_tree_counts():
    assert [len(rooted_trees(n)) for n in range(1, 7)] == [1, 1, 2, 4, 9, 20]


@pytest.mark.parametrize("name", TABLEAU_NAMES)
def test_order_conditions(name):
    tab = get_tableau(name)
    p = ORDERS[name]
    assert tab.order == p
    defects = order_condition_defects(tab, p + 1)
    assert max(defects[n] for n in range(1, p + 1)) <= 1e-14
    assert defects[p + 1] > 1e-6


@pytest.mark.parametrize("name", TABLEAU_NAMES)
def test_symplecticity_identity(name):
    tab = get_tableau(name)
    if name == "Radau3":
        assert not tab.symplectic
        assert symplecticity_defect(tab) > 1e-3
    else:
        assert tab.symplectic
        assert symplecticity_defect(tab) <= 1e-15


def test_gauss_nodes_are_legendre_roots():
    for name, s in (("Gauss1", 1), ("Gauss2", 2)):
        nodes, weights = np.polynomial.legendre.leggauss(s)
        tab = get_tableau(name)
        np.testing.assert_allclose(tab.c, 0.5 * (nodes + 1), atol=1e-15)
        np.testing.assert_allclose(tab.b, 0.5 * weights, atol=1e-15)


def test_lobatto_pair_structure():
    for name in ("Lobatto2", "Lobatto3"):
        tab = get_tableau(name)
        assert tab.c[0] == 0.0 and tab.c[-1] == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_array_equal(tab.a[0], 0.0)
        np.testing.assert_allclose(tab.a[-1], tab.b, atol=1e-15)
        np.testing.assert_allclose(tab.abar[:, -1], 0.0, atol=1e-15)


def test_radau_last_row_is_weights():
    tab = get_tableau("Radau3")
    np.testing.assert_allclose(tab.a[-1], tab.b, atol=1e-15)
    assert tab.c[-1] == pytest.approx(1.0, abs=1e-15)


def test_unknown_tableau():
    with pytest.raises(ValueError, match="Gauss1"):
        get_tableau("Euler")
