import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physreg.operators import (BoundaryKind, DomainSpec, Lap1D, Lap2D, SL1D,
                               dump_operator, load_operator, operator_from_dict,
                               operator_to_dict, symmetrize)


def test_domain_invariants():
    with pytest.raises(ValueError):
        DomainSpec(((1.0, 0.0),))
    with pytest.raises(ValueError):
        DomainSpec(((0.0, 1.0),), time_horizon=0.0)
    with pytest.raises(ValueError):
        DomainSpec(((0, 1), (0, 1), (0, 1)))
    d = DomainSpec.square(2.0, time_horizon=5.0)
    assert d.dimension == 2 and d.volume == pytest.approx(4.0)
    assert DomainSpec.from_dict(d.to_dict()) == d


def test_operator_invariants():
    with pytest.raises(ValueError):
        Lap1D(0.0)
    with pytest.raises(ValueError):
        Lap2D(1.0, DomainSpec(((0, 1), (0, 2))))
    with pytest.raises(ValueError):
        Lap2D(1.0, DomainSpec.square(1.0), BoundaryKind.NEUMANN)


def test_symmetrizer_identity_case():
    sym = symmetrize(SL1D.from_polynomials([0.0], [0.0]))
    x = np.linspace(0, 1, 11)
    np.testing.assert_allclose(sym.weight(x), 1.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(sym.transformed_potential(x), 0.0, atol=1e-15)


def test_symmetrizer_constant_drift():
    c = 0.7
    sym = symmetrize(SL1D.from_polynomials([c], [0.0]))
    x = np.linspace(0, 1, 21)
    np.testing.assert_allclose(sym.weight(x), np.exp(c * x), rtol=1e-12)
    np.testing.assert_allclose(sym.transformed_potential(x), c * c, rtol=1e-14)


def test_symmetrizer_linear_drift():
    sym = symmetrize(SL1D.from_polynomials([0.0, 1.0], [0.0]))
    assert abs(sym.weight(1.0) - np.exp(0.5)) <= 1e-10
    x = np.linspace(0, 1, 9)
    np.testing.assert_allclose(sym.transformed_potential(x), x ** 2 - 1, atol=1e-14)


def test_norm_constant_is_weight_ratio():
    sym = symmetrize(SL1D.from_polynomials([1.0], [0.0]))
    assert sym.norm_constant(DomainSpec.interval()) == pytest.approx(np.e, rel=1e-10)


def test_nonfinite_coefficient_reports_location():
    spec = SL1D(lambda x: 1.0 / (x - 0.5), lambda x: 0 * x, lambda x: 0 * x)
    with pytest.raises(ValueError, match="x="):
        symmetrize(spec)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0.0, 1.0), f=st.floats(-1e6, 1e6, allow_subnormal=False),
       c=st.lists(st.floats(-2, 2), min_size=1, max_size=3))
def test_symmetrizer_round_trip(x, f, c):
    sym = symmetrize(SL1D.from_polynomials(c, [0.0]))
    back = sym.inverse_weight(x) * (sym.weight(x) * f)
    assert abs(back - f) <= 1e-12 * max(abs(f), 1e-300)


@pytest.mark.parametrize("spec", [
    Lap1D(2.0, DomainSpec.interval(0.0, 3.0), BoundaryKind.DIRICHLET),
    SL1D.from_polynomials([0.5, -1.0], [1.0, 0.0, 2.0]),
    Lap2D(8.9e-11, DomainSpec.square(1.945e-4)),
])
def test_operator_json_round_trip(spec, tmp_path):
    d = operator_to_dict(spec)
    again = operator_from_dict(json.loads(json.dumps(d)))
    assert operator_to_dict(again) == d
    path = tmp_path / "op.json"
    path.write_text(dump_operator(spec))
    assert operator_to_dict(load_operator(path)) == d


def test_unknown_operator_kind():
    with pytest.raises(ValueError):
        operator_from_dict({"kind": "wave"})
