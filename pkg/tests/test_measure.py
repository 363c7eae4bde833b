import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deformed_rmt.errors import InvalidInputError
from deformed_rmt.measure import (
    DiscreteMeasure,
    MatrixMeasure,
    ModelSpec,
    integrate,
    integrate_matrix,
    quantile_discretize,
)

atoms = st.lists(
    st.tuples(st.floats(0.0, 50.0), st.floats(0.01, 5.0)), min_size=1, max_size=6
)


def test_integrate_examples():
    assert integrate(DiscreteMeasure.dirac(1.0), lambda t: t**2) == 1
    assert integrate(DiscreteMeasure.from_pairs([[1, 0.5], [3, 0.5]]), lambda t: t) == 2
    assert integrate(DiscreteMeasure.from_pairs([[0.5, 0.5], [2.5, 0.5]]), lambda t: np.ones_like(t)) == 1


def test_integrate_names_bad_atom():
    with pytest.raises(InvalidInputError, match="t=0.0"):
        integrate(DiscreteMeasure.from_pairs([[0.0, 0.5], [1.0, 0.5]]), lambda t: np.where(t > 0, 1.0 / np.maximum(t, 1e-300), np.inf))


@settings(max_examples=50, deadline=None)
@given(atoms, st.floats(-3, 3), st.floats(-3, 3))
def test_integrate_linear_and_additive(pairs, a, b):
    m = DiscreteMeasure.from_pairs(pairs)
    f, g = np.sin, lambda t: t / (1 + t)
    lhs = integrate(m, lambda t: a * f(t) + b * g(t))
    rhs = a * integrate(m, f) + b * integrate(m, g)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(lhs))
    m2 = DiscreteMeasure.from_pairs(pairs + [[7.0, 1.0]])
    assert abs(integrate(m2, f) - integrate(m, f) - np.sin(7.0)) <= 1e-9 * (1 + abs(integrate(m2, f)))


def test_measure_normalisation():
    m = DiscreteMeasure.from_pairs([[3, 0.25], [1, 0.5], [3, 0.25]])
    assert m.locations.tolist() == [1.0, 3.0]
    assert m.weights.tolist() == [0.5, 0.5]
    for bad in ([[-1, 1]], [[1, 0]], [[np.inf, 1]]):
        with pytest.raises(InvalidInputError):
            DiscreteMeasure.from_pairs(bad)


def test_integrate_matrix_examples():
    single = MatrixMeasure(np.array([1.0]), np.eye(2)[None])
    assert np.allclose(integrate_matrix(single, lambda t: t), np.eye(2))
    prod = MatrixMeasure.product(DiscreteMeasure.dirac(1.0), np.diag([2.0, 1.0]))
    assert np.allclose(integrate_matrix(prod, lambda t: t), np.diag([2.0, 1.0]))
    w = np.array([[[1, 0.5j], [-0.5j, 1]], [[2, 0], [0, 0]]])
    two = MatrixMeasure(np.array([0.5, 2.0]), w)
    assert np.allclose(integrate_matrix(two, lambda t: np.ones_like(t)), two.total_mass)


def test_matrix_measure_validation():
    with pytest.raises(InvalidInputError, match="Hermitian"):
        MatrixMeasure(np.array([1.0]), np.array([[[1, 1], [0, 1]]]))
    with pytest.raises(InvalidInputError, match="PSD"):
        MatrixMeasure(np.array([1.0]), np.diag([1.0, -1.0])[None])


def test_from_factor_groups_atoms():
    d = np.array([1.0, 3.0, 1.0])
    r = np.array([[1.0, 0], [0, 2.0], [1j, 0]])
    lam = MatrixMeasure.from_factor(d, r)
    assert lam.locations.tolist() == [1.0, 3.0]
    assert np.allclose(lam.weights[0], [[2, 0], [0, 0]])
    assert np.allclose(lam.weights[1], [[0, 0], [0, 4]])


def test_quantile_examples():
    assert quantile_discretize(DiscreteMeasure.dirac(1.0), 4).tolist() == [1, 1, 1, 1]
    nu = DiscreteMeasure.from_pairs([[1, 0.5], [3, 0.5]])
    assert quantile_discretize(nu, 4).tolist() == [1, 1, 3, 3]
    assert quantile_discretize(nu, 5).tolist() == [1, 1, 1, 3, 3]


@settings(max_examples=60, deadline=None)
@given(atoms, st.integers(1, 500))
def test_quantile_counts_and_support(pairs, n):
    raw = DiscreteMeasure.from_pairs(pairs)
    nu = DiscreteMeasure(raw.locations, raw.weights / raw.mass)
    d = quantile_discretize(nu, n)
    assert set(d.tolist()) <= set(nu.locations.tolist())
    for t, w in zip(nu.locations, nu.weights):
        assert abs(np.count_nonzero(d == t) - n * w) <= 1 + 1e-9


@pytest.mark.parametrize("n", [10, 100, 1000])
def test_quantile_integral_converges(n):
    nu = DiscreteMeasure.from_pairs([[0.5, 0.3], [1.0, 0.45], [4.0, 0.25]])
    f = lambda t: np.abs(t - 0.8)
    exact = integrate(nu, f).real
    approx = np.mean(f(quantile_discretize(nu, n)))
    assert abs(approx - exact) <= 2.0 / n * max(1.0, abs(exact)) * 4.0


def test_model_spec_validation_and_json():
    spec = ModelSpec.from_json('{"c": 1, "nu": [[1, 1]], "spikes": [[3, 1], [2, 2]]}')
    assert spec.rank == 3
    assert np.allclose(np.diag(spec.omega), [3, 2, 2])
    assert ModelSpec.from_json(spec.to_json()) == spec
    assert json.loads(spec.to_json())["spikes"] == [[3.0, 1], [2.0, 2]]
    bad = [
        '{"c": 0, "nu": [[1, 1]]}',
        '{"c": 1, "nu": [[1, 0.5]]}',
        '{"c": 1, "nu": [[0, 0.5], [1, 0.5]]}',
        '{"c": 1, "nu": [[1, 1]], "spikes": [[2, 1], [3, 1]]}',
        '{"c": 1, "nu": [[1, 1]], "spikes": [[2, 0]]}',
        '{"nu": [[1, 1]]}',
        "[1, 2]",
        "{not json",
    ]
    for text in bad:
        with pytest.raises(InvalidInputError):
            ModelSpec.from_json(text)


def test_noiseless_model_allowed():
    spec = ModelSpec(2.0, DiscreteMeasure.dirac(0.0), ((3.0, 1),))
    assert spec.is_noiseless
