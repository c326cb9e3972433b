import math

import numpy as np
import pytest
from hypothesis import given

from symstab import expr as ex
from symstab.conserved import (
    bracket_expr,
    bracket_reports,
    conservation_residual,
    drift,
    independence_rank,
    independent_subset,
    poisson_bracket,
    ranks_at,
    sample_points,
)
from symstab.integrate import integrate_adaptive, integrate_symplectic
from symstab.system import ExplicitField, SymplecticStructure, SystemDef

from strategies import PVARS, points4, polynomials

CANON2 = SymplecticStructure.canonical(2)


def pts(sys, n=1000, hw=2.0):
    return sample_points([0.0] * sys.dim, [hw] * sys.dim, n, sys.periodic)


# --------------------------------------------------------------------------
# conservation residual


def test_energy_is_conserved(ho):
    rep = conservation_residual(ho, ho.hamiltonian, pts(ho), name="H")
    assert rep.passed and rep.max_residual == 0.0


def test_position_is_not_conserved(ho):
    rep = conservation_residual(ho, ex.parse("q"), pts(ho))
    assert not rep.passed
    assert rep.max_residual == pytest.approx(2.0, rel=1e-2)


def test_kronecker_admits_no_angle_invariant(kron):
    rep = conservation_residual(kron, ex.parse("sin(theta1)"), pts(kron))
    assert rep.max_residual >= 0.5
    assert not rep.passed


def test_pais_uhlenbeck_invariants(pu):
    for name, Q in pu.bound_conserved:
        assert conservation_residual(pu, Q, pts(pu), name=name).passed


def test_residual_skips_undefined_points():
    sys = SystemDef("s", ("x", "y"), ExplicitField((ex.parse("log(x)"), ex.parse("0"))))
    rep = conservation_residual(sys, ex.parse("y"), pts(sys))
    assert 0 < rep.n_skipped < rep.n_points
    assert rep.passed


def test_sample_points_are_deterministic_and_inside():
    a = sample_points([1.0, -1.0], [0.5, 2.0], 200)
    b = sample_points([1.0, -1.0], [0.5, 2.0], 200)
    assert np.array_equal(a, b)
    assert a.shape == (200, 2)
    assert np.all(np.abs(a - [1.0, -1.0]) <= [0.5, 2.0])
    per = sample_points([50.0, 0.0], [1.0, 1.0], 50, (True, False))
    assert per[:, 0].min() >= 0.0 and per[:, 0].max() < 2 * math.pi


# --------------------------------------------------------------------------
# drift along trajectories


def test_drift_examples(ho, pu):
    tr = integrate_adaptive(ho, [1.0, 0.0], 0.0, 100.0)
    assert drift(ho.hamiltonian, tr).relative <= 1e-7
    tr = integrate_symplectic(pu, [0.5, 0.25, 0.5, 0.25], 0.01, 10_000)
    for _, Q in pu.bound_conserved:
        assert drift(Q, tr).relative <= 1e-9


# --------------------------------------------------------------------------
# Poisson brackets


def test_canonical_bracket(ho):
    assert poisson_bracket(ex.parse("q"), ex.parse("v"), ho.symplectic, [0.3, 0.2], ho.variables) == 1.0
    assert poisson_bracket(ex.parse("v"), ex.parse("q"), ho.symplectic, [0.3, 0.2], ho.variables) == -1.0


def test_bracket_with_hamiltonian_is_time_derivative(pu):
    x = [0.3, -0.2, 0.7, 1.1]
    b = dict(zip(pu.variables, x))
    X = pu.field_at(x)
    for v, Xi in zip(pu.variables, X):
        assert poisson_bracket(ex.parse(v), pu.hamiltonian, pu.symplectic, x, pu.variables) == pytest.approx(Xi)
    assert ex.evaluate(bracket_expr(ex.parse("q1"), pu.hamiltonian, pu.symplectic, pu.variables), b) == X[0]


def test_pais_uhlenbeck_involution(pu):
    (rep,) = bracket_reports(pu, list(pu.bound_conserved), pts(pu))
    assert rep.max_abs <= 1e-8 and rep.passed


def test_non_commuting_pair(ho):
    (rep,) = bracket_reports(ho, [("q", ex.parse("q")), ("v", ex.parse("v"))], pts(ho, 50))
    assert rep.max_abs == 1.0 and not rep.passed


def _br(F, G):
    return bracket_expr(F, G, CANON2, PVARS)


def _at(e, x):
    return ex.evaluate(e, dict(zip(PVARS, x)))


@given(polynomials, polynomials, points4)
def test_bracket_antisymmetry(F, G, x):
    a = _at(_br(F, G), x)
    b = _at(_br(G, F), x)
    assert abs(a + b) <= 1e-10 * (1 + abs(a))


@given(polynomials, polynomials, polynomials, points4)
def test_bracket_bilinearity(F, G, K, x):
    lhs = _at(_br(F, ex.BinOp("+", G, ex.BinOp("*", ex.Const(3.0), K))), x)
    rhs = _at(_br(F, G), x) + 3.0 * _at(_br(F, K), x)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(lhs) + abs(rhs))


@given(polynomials, polynomials, polynomials, points4)
def test_bracket_leibniz(F, G, K, x):
    lhs = _at(_br(F, ex.BinOp("*", G, K)), x)
    t1 = _at(_br(F, G), x) * _at(K, x)
    t2 = _at(G, x) * _at(_br(F, K), x)
    assert abs(lhs - t1 - t2) <= 1e-9 * (1 + abs(t1) + abs(t2))


@given(polynomials, polynomials, polynomials, points4)
def test_bracket_jacobi(F, G, K, x):
    terms = [_at(_br(A, _br(B, C)), x) for A, B, C in ((F, G, K), (G, K, F), (K, F, G))]
    assert abs(sum(terms)) <= 1e-9 * (1 + max(abs(t) for t in terms))


@given(polynomials, points4)
def test_numeric_and_symbolic_brackets_agree(F, x):
    G = ex.parse("q1*p2 - q2^2")
    sym = _at(_br(F, G), x)
    num = poisson_bracket(F, G, CANON2, x, PVARS)
    assert abs(sym - num) <= 1e-10 * (1 + abs(sym))


# --------------------------------------------------------------------------
# independence


def test_independence_ranks(pu):
    Q1, Q2 = (q for _, q in pu.bound_conserved)
    assert independence_rank([Q1, Q2], [1.0, 1.0, 1.0, 1.0], pu.variables) == 2
    assert independence_rank([Q1, Q2], [1.0, 0.0, 1.0, 0.0], pu.variables) == 1
    assert independence_rank([Q1, Q2], [0.0, 0.0, 0.0, 0.0], pu.variables) == 0
    twice = ex.BinOp("*", ex.Const(2.0), Q1)
    assert independence_rank([Q1, twice], [1.0, 1.0, 1.0, 1.0], pu.variables) == 1


def test_ranks_at_marks_undefined(ho):
    r = ranks_at([ex.parse("sqrt(q)")], np.array([[1.0, 0.0], [-1.0, 0.0]]), ho.variables)
    assert r.tolist() == [1, -1]


def test_independent_subset_drops_dependent(pu):
    Q1, Q2 = (q for _, q in pu.bound_conserved)
    cands = [("Q1", Q1), ("Q2", Q2), ("H", pu.hamiltonian)]
    chosen = independent_subset(cands, pts(pu, 200), pu.variables)
    assert [n for n, _ in chosen] == ["Q1", "Q2"]


def test_independent_subset_respects_order(pu):
    Q1, _ = (q for _, q in pu.bound_conserved)
    cands = [("H", pu.hamiltonian), ("Q1", Q1)]
    chosen = independent_subset(cands, pts(pu, 200), pu.variables)
    assert [n for n, _ in chosen] == ["H", "Q1"]
