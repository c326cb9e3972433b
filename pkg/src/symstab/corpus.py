"""Built-in example systems and their expected analysis outcomes."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from .expr import parse
from .system import (
    DefinitionError,
    ExplicitField,
    HamiltonianDynamics,
    SymplecticStructure,
    SystemDef,
)

__all__ = ["CorpusEntry", "Expectation", "ENTRIES", "builtin", "entry", "ids", "RationalSlopeWarning"]

GOLDEN = (1 + math.sqrt(5)) / 2


class RationalSlopeWarning(UserWarning):
    """A Kronecker slope that is (numerically) rational gives closed orbits."""


@dataclass(frozen=True)
class Expectation:
    """One documented outcome: ``analysis`` run with ``options`` yields ``expected``."""

    analysis: str
    expected: str
    provenance: str
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    factory: Callable[..., SystemDef]
    description: str
    defaults: dict = field(default_factory=dict)
    seeds: tuple[tuple[float, ...], ...] = ()
    horizon: float = 1000.0
    maps: dict = field(default_factory=dict)
    level_qs: tuple[str, ...] = ()
    expectations: tuple[Expectation, ...] = ()

    def build(self, **params) -> SystemDef:
        return self.factory(**{**self.defaults, **params})


def _canonical(n: int) -> SymplecticStructure:
    return SymplecticStructure.canonical(n)


def harmonic_oscillator() -> SystemDef:
    return SystemDef(
        name="harmonic_oscillator",
        variables=("q", "v"),
        dynamics=HamiltonianDynamics(parse("(q^2 + v^2)/2"), _canonical(1)),
    )


def free_particle() -> SystemDef:
    return SystemDef(
        name="free_particle",
        variables=("q", "v"),
        dynamics=HamiltonianDynamics(parse("v^2/2"), _canonical(1)),
    )


def quadratic_blowup(hamiltonian: bool = False) -> SystemDef:
    """Field ``(v, q^2)``; optionally in its Hamiltonian form ``v^2/2 - q^3/3``."""
    if hamiltonian:
        dyn = HamiltonianDynamics(parse("v^2/2 - q^3/3"), _canonical(1))
    else:
        dyn = ExplicitField((parse("v"), parse("q^2")))
    return SystemDef(name="quadratic_blowup", variables=("q", "v"), dynamics=dyn)


def sin_r2() -> SystemDef:
    return SystemDef(
        name="sin_r2",
        variables=("x", "y"),
        dynamics=None,
        conserved=(("f", parse("sin(x^2 + y^2)")),),
    )


def kronecker(alpha: float = math.sqrt(2)) -> SystemDef:
    frac = Fraction(alpha).limit_denominator(1000)
    if abs(float(frac) - alpha) < 1e-12:
        warnings.warn(f"slope {alpha} is rational ({frac}); orbits are closed", RationalSlopeWarning)
    return SystemDef(
        name="kronecker",
        variables=("theta1", "theta2"),
        dynamics=ExplicitField((parse("1"), parse("alpha"))),
        periodic=(True, True),
        parameters={"alpha": float(alpha)},
    )


def pais_uhlenbeck(omega1: float = 1.0, omega2: float = 2.0) -> SystemDef:
    """Diagonalised two-frequency oscillator with the indefinite ``H = Q1 - Q2``."""
    if omega1 <= 0 or omega2 <= 0:
        raise DefinitionError("frequencies must be positive")
    if omega1 == omega2:
        raise DefinitionError("equal frequencies are not diagonalisable; use omega1 != omega2")
    return SystemDef(
        name="pais_uhlenbeck",
        variables=("q1", "q2", "p1", "p2"),
        dynamics=HamiltonianDynamics(
            parse("(p1^2 + w1^2*q1^2)/2 - (p2^2 + w2^2*q2^2)/2"), _canonical(2)
        ),
        conserved=(
            ("Q1", parse("(p1^2 + w1^2*q1^2)/2")),
            ("Q2", parse("(p2^2 + w2^2*q2^2)/2")),
        ),
        parameters={"w1": float(omega1), "w2": float(omega2)},
    )


def oscillator_pair(dynamics: str = "H1+H2") -> SystemDef:
    """Two uncoupled unit oscillators; ``dynamics="H1"`` freezes the second one."""
    H = {"H1+H2": "(p1^2 + q1^2)/2 + (p2^2 + q2^2)/2", "H1": "(p1^2 + q1^2)/2"}[dynamics]
    return SystemDef(
        name="oscillator_pair",
        variables=("q1", "q2", "p1", "p2"),
        dynamics=HamiltonianDynamics(parse(H), _canonical(2)),
        conserved=(("H1", parse("(p1^2 + q1^2)/2")), ("H2", parse("(p2^2 + q2^2)/2"))),
    )


def particle_oscillator() -> SystemDef:
    return SystemDef(
        name="particle_oscillator",
        variables=("q1", "q2", "p1", "p2"),
        dynamics=HamiltonianDynamics(parse("p1^2/2 + (p2^2 + q2^2)/2"), _canonical(2)),
        conserved=(("K1", parse("p1^2/2")), ("H2", parse("(p2^2 + q2^2)/2"))),
    )


def particle_pair() -> SystemDef:
    return SystemDef(
        name="particle_pair",
        variables=("q1", "q2", "p1", "p2"),
        dynamics=HamiltonianDynamics(parse("(p1^2 + p2^2)/2"), _canonical(2)),
        conserved=(("P1", parse("p1")), ("P2", parse("p2"))),
    )


E = Expectation

ENTRIES: dict[str, CorpusEntry] = {
    e.id: e
    for e in [
        CorpusEntry(
            "harmonic_oscillator",
            harmonic_oscillator,
            "unit harmonic oscillator, field (v, -q)",
            seeds=((1.0, 0.0), (0.3, -0.4)),
            horizon=1000.0,
            expectations=(
                E("certify", "G1Certified:H", "worked-example: harmonic oscillator is G1 stable"),
                E("classify", "Bounded", "worked-example: harmonic oscillator is G1 stable"),
                E("ghost", "BoundedBelowEvidence", "trivial: H >= 0"),
                E("confining:H", "ConfiningEvidence", "trivial: circles"),
                E("properness:H:0,1", "ProperEvidence", "trivial: closed disk"),
            ),
        ),
        CorpusEntry(
            "free_particle",
            free_particle,
            "free particle, field (v, 0)",
            seeds=((0.0, 1.0),),
            horizon=1e5,
            expectations=(
                E("certify", "Inconclusive+futility", "worked-example: G2 but not G1; no composition repairs it"),
                E("classify", "EscapeNoBlowup", "worked-example: G2 stable but not G1"),
                E("ghost", "BoundedBelowEvidence", "trivial: H >= 0"),
                E("confining:H", "NotConfiningAtScale", "worked-example: line v = const escapes"),
                E("properness:H:0,1", "NotProperEvidence", "derived: strip |v| <= sqrt(2)"),
            ),
        ),
        CorpusEntry(
            "quadratic_blowup",
            quadratic_blowup,
            "field (v, q^2) with the analytic solution 6/(t+1)^2 through (6, -12)",
            seeds=((6.0, -12.0),),
            horizon=2.0,
            expectations=(
                E("classify:verdict", "BlowupWitness", "worked-example: curve cannot be defined for all times",
                  {"backward": True}),
                E("classify", "Blowup", "derived: analytic solution 6/(t+1)^2 blows up at t = -1",
                  {"backward": True}),
            ),
        ),
        CorpusEntry(
            "sin_r2",
            sin_r2,
            "map-only entry f = sin(x^2 + y^2)",
            seeds=((math.sqrt(math.pi), 0.0), (math.sqrt(math.pi / 6), 0.0), (math.sqrt(math.pi / 2), 0.0)),
            expectations=(
                E("confining:f", "ConfiningEvidence", "worked-example: confining but not proper"),
                E("properness:f:-1,1", "NotProperEvidence", "worked-example: confining but not proper"),
            ),
        ),
        CorpusEntry(
            "kronecker",
            kronecker,
            "linear flow (1, alpha) on the 2-torus",
            defaults={"alpha": math.sqrt(2)},
            seeds=((0.0, 0.0), (1.0, 2.0)),
            horizon=1000.0,
            expectations=(
                E("classify", "Bounded", "worked-example: torus is compact"),
                E("residual:sin(theta1)", ">=0.5", "worked-example: only constants are conserved"),
            ),
        ),
        CorpusEntry(
            "pais_uhlenbeck",
            pais_uhlenbeck,
            "two-frequency ghost oscillator, H = Q1 - Q2",
            defaults={"omega1": 1.0, "omega2": 2.0},
            seeds=((0.5, 0.25, 0.5, 0.25), (0.0, 0.0, 1.0, 0.5)),
            horizon=200.0,
            level_qs=("Q1", "Q2"),
            expectations=(
                E("certify", "G1Certified:Q1,Q2", "derived: level sets of (Q1, Q2) are tori"),
                E("ghost", "GhostEvidence", "derived: H unbounded both ways"),
                E("brackets", "involution", "derived: decoupled oscillators commute"),
                E("classify", "Bounded", "derived: exact solution is quasi-periodic"),
                E("sos", "agree:ProperEvidence", "derived: coercive sum of squares"),
            ),
        ),
        CorpusEntry(
            "oscillator_pair",
            oscillator_pair,
            "two uncoupled unit oscillators",
            seeds=((0.5, 0.3, 0.2, -0.4),),
            horizon=100.0,
            level_qs=("H1", "H2"),
            expectations=(
                E("arnold", "TorusEvidence", "derived: level sets are 2-tori"),
                E("iff", "g1_positive", "derived: product of circles is compact"),
                E("certify", "G1Certified:H", "derived: H is a positive quadratic"),
            ),
        ),
        CorpusEntry(
            "particle_oscillator",
            particle_oscillator,
            "free particle times an oscillator",
            seeds=((0.0, 0.5, 0.7, 0.0),),
            horizon=100.0,
            level_qs=("K1", "H2"),
            expectations=(
                E("arnold", "CylinderEvidence:k=1", "derived: level sets are circle x line"),
                E("iff", "not_g1_cylinder_drift", "derived: drift along the line"),
            ),
        ),
        CorpusEntry(
            "particle_pair",
            particle_pair,
            "two free particles",
            seeds=((0.0, 0.0, 1.0, 0.5),),
            horizon=100.0,
            level_qs=("P1", "P2"),
            expectations=(
                E("arnold", "CylinderEvidence:k=0", "derived: level sets are planes"),
                E("iff", "not_g1_cylinder_drift", "derived: drift along both lines"),
            ),
        ),
    ]
}


def ids() -> list[str]:
    return list(ENTRIES)


def entry(id: str) -> CorpusEntry:
    try:
        return ENTRIES[id]
    except KeyError:
        raise KeyError(f"unknown corpus id {id!r}") from None


def builtin(id: str, **params) -> SystemDef:
    """Build the corpus system ``id`` with optional parameter overrides."""
    return entry(id).build(**params)
