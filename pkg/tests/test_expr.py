import numpy as np
import pytest

from fnpotential.errors import ParseError
from fnpotential.expr import Expression


def test_arithmetic_and_functions():
    e = Expression("x1**2 + 3*x2 - exp(0)*sin(pi/2)/2", 2)
    np.testing.assert_allclose(e([[1.0, 2.0]]), [1 + 6 - 0.5])


def test_radius_alias_and_caret():
    e = Expression("|x|^2 + log(e)", 2)
    np.testing.assert_allclose(e([[3.0, 4.0]]), [26.0])
    np.testing.assert_allclose(Expression("r", 2)([[3.0, 4.0]]), [5.0])


def test_symbolic_hessian():
    H = Expression("x1**3*x2", 2).hessian()
    vals = [[h([[1.0, 2.0]])[0] for h in row] for row in H]
    np.testing.assert_allclose(vals, [[12.0, 3.0], [3.0, 0.0]])


@pytest.mark.parametrize("bad", ["__import__('os')", "x1.real", "foo(x1)", "x1 +", "lambda: 1", "x9"])
def test_rejects_unsafe_or_malformed(bad):
    with pytest.raises(ParseError):
        Expression(bad, 2)


def test_constant_broadcasts():
    np.testing.assert_array_equal(Expression(4, 2)(np.zeros((5, 2))), 4.0)
