import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from symstab import corpus
from symstab import expr as ex
from symstab.system import (
    DefinitionError,
    ExplicitField,
    HamiltonianDynamics,
    SymplecticStructure,
    SystemDef,
    state_norm,
    wrapped_difference,
)

from strategies import points4, polynomials


def test_harmonic_oscillator_field(ho):
    assert ho.field_at([1.0, 0.0]).tolist() == [0.0, -1.0]
    assert ho.field_at([0.0, 1.0]).tolist() == [1.0, 0.0]


def test_canonical_poisson_sign():
    P = SymplecticStructure.canonical(1).poisson
    assert P.tolist() == [[0.0, 1.0], [-1.0, 0.0]]


def test_free_particle_field(fp):
    assert fp.field_at([5.0, 2.0]).tolist() == [2.0, 0.0]


def test_explicit_field(x3):
    assert x3.field_at([3.0, 1.0]).tolist() == [1.0, 9.0]


def test_pais_uhlenbeck_hamiltonian_value(pu):
    assert ex.evaluate(pu.hamiltonian, dict(zip(pu.variables, (0.0, 0.0, 2.0, 1.0)))) == 1.5


def test_parameters_are_inlined(pu):
    assert ex.variables_of(pu.hamiltonian) == set(pu.variables)
    pu3 = corpus.builtin("pais_uhlenbeck", omega1=1.0, omega2=3.0)
    assert pu3.field_at([0.0, 1.0, 0.0, 0.0]).tolist() == [0.0, 0.0, 0.0, 9.0]


@pytest.mark.parametrize(
    "kwargs, msg",
    [
        ({"variables": ()}, "at least one"),
        ({"variables": ("q", "q")}, "duplicate"),
        ({"variables": ("q", "pi")}, "reserved"),
        ({"variables": ("q",), "dynamics": ExplicitField((ex.parse("q"), ex.parse("q")))}, "components"),
        ({"variables": ("q", "v"), "dynamics": ExplicitField((ex.parse("z"), ex.parse("q")))}, "undeclared"),
        ({"variables": ("q", "v"), "periodic": (True,)}, "periodic"),
        ({"variables": ("q", "v", "w"),
          "dynamics": HamiltonianDynamics(ex.parse("q"), SymplecticStructure.canonical(1))}, "even"),
        ({"variables": ("q", "v"), "parameters": {"q": 1.0}}, "both"),
    ],
)
def test_invalid_definitions(kwargs, msg):
    base = {"name": "s", "dynamics": None}
    with pytest.raises(DefinitionError, match=msg):
        SystemDef(**{**base, **kwargs})


@pytest.mark.parametrize(
    "W, msg",
    [
        ([[0.0, 1.0], [1.0, 0.0]], "antisymmetric"),
        ([[0.0, 0.0], [0.0, 0.0]], "invertible"),
        ([[0.0]], "even"),
        ([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]], "square"),
    ],
)
def test_invalid_symplectic_matrix(W, msg):
    with pytest.raises(DefinitionError, match=msg):
        SymplecticStructure(np.array(W))


def _four_dof(H, s):
    return SystemDef("t", ("q1", "q2", "p1", "p2"), HamiltonianDynamics(H, s))


@given(polynomials, points4)
def test_canonical_equals_explicit_matrix(H, x):
    W = np.zeros((4, 4))
    W[:2, 2:] = np.eye(2)
    W[2:, :2] = -np.eye(2)
    a = _four_dof(H, SymplecticStructure.canonical(2)).field_at(x)
    b = _four_dof(H, SymplecticStructure(W)).field_at(x)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@given(polynomials, points4)
def test_hamiltonian_field_preserves_energy(H, x):
    sys = _four_dof(H, SymplecticStructure.canonical(2))
    grad = np.array([ex.evaluate(ex.diff(H, v), dict(zip(sys.variables, x))) for v in sys.variables])
    X = sys.field_at(x)
    assert abs(grad @ X) <= 1e-9 * (1 + np.abs(grad).max() * np.abs(X).max())


def test_general_symplectic_matrix():
    # omega = 2 dq ^ dp scales the field by one half
    s = SymplecticStructure(np.array([[0.0, 2.0], [-2.0, 0.0]]))
    sys = SystemDef("s", ("q", "p"), HamiltonianDynamics(ex.parse("(q^2 + p^2)/2"), s))
    assert sys.field_at([1.0, 0.0]).tolist() == [0.0, -0.5]


@pytest.mark.parametrize("cid", corpus.ids())
def test_json_round_trip(cid):
    sys = corpus.builtin(cid)
    doc = json.loads(json.dumps(sys.to_json()))
    again = SystemDef.from_json(doc)
    assert again.to_json() == sys.to_json()
    if sys.dynamics is not None:
        x = np.linspace(0.1, 0.7, sys.dim)
        assert np.array_equal(again.field_at(x), sys.field_at(x))


@pytest.mark.parametrize(
    "doc",
    [
        {"name": "x"},
        {"variables": ["q", "v"], "dynamics": {"type": "hamiltonian", "hamiltonian": "q +"}},
        {"variables": ["q", "v"], "dynamics": {"type": "warp"}},
        {"variables": ["q", "v", "w"], "dynamics": {"type": "hamiltonian", "hamiltonian": "q"}},
        {"variables": ["q"], "dynamics": {"type": "field", "components": ["q", "q"]}},
    ],
)
def test_from_json_rejects(doc):
    with pytest.raises(DefinitionError):
        SystemDef.from_json(doc)


def test_periodic_coordinates_are_reduced(kron):
    assert np.array_equal(kron.field_at([100.0, -3.0]), kron.field_at([0.0, 0.0]))
    torus = SystemDef("t", ("a",), ExplicitField((ex.parse("sin(a/2)^2"),)), periodic=(True,))
    assert torus.field_at([2 * math.pi + 1.0])[0] == pytest.approx(math.sin(0.5) ** 2, abs=1e-14)


def test_wrapped_difference_and_norm():
    d = wrapped_difference(np.array([0.1, 5.0]), np.array([2 * math.pi - 0.1, 1.0]), (True, False))
    assert d == pytest.approx([0.2, 4.0])
    assert state_norm(np.array([2 * math.pi, 3.0]), (True, False)) == pytest.approx(3.0)


def test_candidate_lookup(pu, ho):
    assert ex.variables_of(pu.candidate("Q2")) == {"q2", "p2"}
    assert ho.candidate("H") == ho.hamiltonian
    with pytest.raises(KeyError):
        ho.candidate("nope")


def test_map_only_system_has_no_dynamics(sin_r2):
    with pytest.raises(DefinitionError):
        sin_r2.field_exprs
    with pytest.raises(DefinitionError):
        sin_r2.hamiltonian


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_field_evaluation_is_deterministic(x):
    sys = corpus.builtin("quadratic_blowup")
    assert np.array_equal(sys.field_at(x), sys.field_at(list(x)))
