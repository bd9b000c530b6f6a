import subprocess
import sys
import textwrap

import numpy as np
import pytest

from mspmdp import _transport
from mspmdp.metrics import ot_distance
from mspmdp.stochastic import DiscreteDistribution

compiled = pytest.mark.skipif("compiled" not in _transport.available_backends(),
                              reason="compiled kernel not built")


def _problem(rng, m, n):
    X, Y = rng.uniform(-1, 1, (m, 2)), rng.uniform(-1, 1, (n, 2))
    return rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n)), np.abs(X[:, None] - Y[None]).max(-1)


@compiled
def test_backends_agree():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a, b, C = _problem(rng, *rng.integers(1, 30, 2))
        v1, F1 = _transport.transport(a, b, C, True, backend="python")
        v2, F2 = _transport.transport(a, b, C, True, backend="compiled")
        assert v1 == pytest.approx(v2, abs=1e-12)
        for F in (F1, F2):
            np.testing.assert_allclose(F.sum(1), a, atol=1e-12)
            np.testing.assert_allclose(F.sum(0), b, atol=1e-12)
            assert F.min() >= -1e-15


def test_degenerate_and_zero_mass():
    # equal masses make north-west corner degenerate
    a = np.full(6, 1 / 6)
    C = np.add.outer(np.arange(6.0), -np.arange(6.0)) ** 2
    for be in _transport.available_backends():
        assert _transport.transport(a, a, C, backend=be) == pytest.approx(0, abs=1e-12)
        v = _transport.transport([0.5, 0.0, 0.5], [1.0], np.array([[1.0], [9.0], [3.0]]), backend=be)
        assert v == pytest.approx(2.0)


def test_set_backend_switches():
    prev = _transport.get_backend()
    try:
        _transport.set_backend("python")
        P = DiscreteDistribution([[0.0], [1.0]], [0.5, 0.5])
        Q = DiscreteDistribution([[0.0], [2.0]], [0.5, 0.5])
        assert ot_distance(P, Q) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            _transport.set_backend("fortran")
    finally:
        _transport.set_backend(prev)


def test_fallback_selected_without_extension():
    code = textwrap.dedent("""
        import sys, importlib.abc
        class Block(importlib.abc.MetaPathFinder):
            def find_spec(self, name, path, target=None):
                if name == "mspmdp._transport_ext":
                    raise ImportError("blocked")
        sys.meta_path.insert(0, Block())
        from mspmdp import _transport
        from mspmdp.metrics import ot_distance
        from mspmdp.stochastic import DiscreteDistribution
        P = DiscreteDistribution([[0.0], [1.0]], [0.5, 0.5])
        Q = DiscreteDistribution([[0.0], [2.0]], [0.5, 0.5])
        print(_transport.get_backend(), _transport.available_backends(), ot_distance(P, Q))
    """)
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
    assert out.split()[0] == "python" and out.strip().endswith("0.5")


def test_shape_checks():
    with pytest.raises(ValueError):
        _transport.transport([1.0], [0.5, 0.5], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        _transport.transport([1.5, -0.5], [1.0], np.zeros((2, 1)))
