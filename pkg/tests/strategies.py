"""Hypothesis strategies for expressions and states."""

from hypothesis import strategies as st

from symstab.expr import BinOp, Call, Const, Neg, Var

VARS = ("x", "y")

consts = st.floats(min_value=-4.0, max_value=4.0, allow_nan=False, allow_infinity=False).map(
    lambda v: Const(round(v, 3))
)
leaves = st.one_of(consts, st.sampled_from(VARS).map(Var))


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/"), children, children).map(lambda t: BinOp(*t)),
        st.tuples(children, st.integers(min_value=0, max_value=3)).map(lambda t: BinOp("^", t[0], Const(float(t[1])))),
        st.tuples(st.sampled_from(("sin", "cos", "tan", "exp", "log", "sqrt", "abs")), children).map(
            lambda t: Call(*t)
        ),
    )


exprs = st.recursive(leaves, _extend, max_leaves=8)

# polynomials for the bracket identities: sums of monomials in four canonical variables
PVARS = ("q1", "q2", "p1", "p2")


def _monomial(coef, powers):
    out = Const(coef)
    for v, k in zip(PVARS, powers):
        if k:
            out = BinOp("*", out, BinOp("^", Var(v), Const(float(k))))
    return out


monomials = st.tuples(
    st.integers(min_value=-3, max_value=3).filter(bool).map(float),
    st.tuples(*[st.integers(min_value=0, max_value=2)] * 4),
).map(lambda t: _monomial(*t))


def _sum(ms):
    out = ms[0]
    for m in ms[1:]:
        out = BinOp("+", out, m)
    return out


polynomials = st.lists(monomials, min_size=1, max_size=4).map(_sum)

points4 = st.tuples(*[st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)] * 4)
