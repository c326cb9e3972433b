"""Dynamical systems on a global chart, and Hamiltonian vector fields.

A phase space is ``R^d`` in which some coordinates may be flagged periodic
(angles on a circle of circumference 2*pi). Dynamics is either an explicit
vector field or a Hamiltonian together with a constant symplectic form.

Sign convention: the symplectic matrix ``W`` is the one for which
``omega(X, Y) = X^T W Y``; the canonical form on ``(q_1..q_n, p_1..p_n)`` is
``[[0, I], [-I, 0]]``. Solving ``i_X omega = dH`` gives ``X = P grad H`` with
the Poisson tensor ``P = (W^T)^{-1}``, so canonical coordinates yield the
familiar ``(dH/dp, -dH/dq)`` and ``{q, p} = +1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr

__all__ = [
    "DefinitionError",
    "SymplecticStructure",
    "HamiltonianDynamics",
    "ExplicitField",
    "SystemDef",
    "hamiltonian_field",
    "wrapped_difference",
    "state_norm",
]

TWO_PI = 2.0 * math.pi


class DefinitionError(ValueError):
    """Invalid system definition."""


@dataclass(frozen=True, eq=False)
class SymplecticStructure:
    """Constant symplectic matrix in the declared variable order."""

    W: np.ndarray
    kind: str = "matrix"  # "canonical" or "matrix"

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DefinitionError("symplectic matrix must be square")
        if W.shape[0] % 2:
            raise DefinitionError("symplectic matrix must have even dimension")
        if not np.array_equal(W, -W.T):
            raise DefinitionError("symplectic matrix is not antisymmetric")
        if abs(np.linalg.det(W)) <= 1e-12:
            raise DefinitionError("symplectic matrix is not invertible")
        object.__setattr__(self, "W", W)

    @classmethod
    def canonical(cls, n: int) -> "SymplecticStructure":
        W = np.zeros((2 * n, 2 * n))
        W[:n, n:] = np.eye(n)
        W[n:, :n] = -np.eye(n)
        return cls(W, kind="canonical")

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    @cached_property
    def poisson(self) -> np.ndarray:
        """Poisson tensor ``(W^T)^{-1}``; fields are ``poisson @ grad H``."""
        return np.linalg.inv(self.W.T)

    def to_json(self) -> dict:
        if self.kind == "canonical":
            return {"type": "canonical"}
        return {"type": "matrix", "W": self.W.tolist()}


@dataclass(frozen=True)
class HamiltonianDynamics:
    H: Expr
    symplectic: SymplecticStructure


@dataclass(frozen=True)
class ExplicitField:
    components: tuple[Expr, ...]


def linear_combination(coeffs: Sequence[float], terms: Sequence[Expr]) -> Expr:
    out: Expr = ex.ZERO
    for c, t in zip(coeffs, terms):
        if c == 0.0 or (isinstance(t, ex.Const) and t.value == 0.0):
            continue
        if c == 1.0:
            out = ex._add(out, t)
        elif c == -1.0:
            out = ex._sub(out, t)
        else:
            out = ex._add(out, ex._mul(ex.Const(float(c)), t))
    return out


def hamiltonian_field(
    H: Expr, s: SymplecticStructure, variables: Sequence[str]
) -> tuple[Expr, ...]:
    """Components of the vector field X with ``i_X omega = dH``."""
    if len(variables) != s.dim:
        raise DefinitionError("variable count does not match symplectic dimension")
    grad = ex.gradient(H, variables)
    P = s.poisson
    return tuple(linear_combination(P[i], grad) for i in range(s.dim))


def wrapped_difference(a: np.ndarray, b: np.ndarray, periodic: Sequence[bool]) -> np.ndarray:
    """Componentwise ``a - b``; periodic entries use min(|d|, 2*pi - |d|)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    mask = np.asarray(periodic, dtype=bool)
    if mask.any():
        w = np.mod(np.abs(d[..., mask]), TWO_PI)
        d = d.copy()
        d[..., mask] = np.minimum(w, TWO_PI - w)
    return d


def state_norm(x: np.ndarray, periodic: Sequence[bool]) -> np.ndarray:
    """Euclidean norm with periodic coordinates measured from the origin of the circle."""
    return np.linalg.norm(wrapped_difference(x, np.zeros_like(np.asarray(x, dtype=float)), periodic), axis=-1)


@dataclass(frozen=True, eq=False)
class SystemDef:
    name: str
    variables: tuple[str, ...]
    dynamics: HamiltonianDynamics | ExplicitField | None
    periodic: tuple[bool, ...] = ()
    conserved: tuple[tuple[str, Expr], ...] = ()
    parameters: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        d = len(self.variables)
        if d == 0:
            raise DefinitionError("system needs at least one variable")
        if len(set(self.variables)) != d:
            raise DefinitionError("duplicate variable names")
        if "pi" in self.variables:
            raise DefinitionError("'pi' is reserved")
        periodic = tuple(bool(p) for p in self.periodic) or (False,) * d
        if len(periodic) != d:
            raise DefinitionError("periodic flags must match variable count")
        object.__setattr__(self, "periodic", periodic)
        object.__setattr__(self, "conserved", tuple((n, e) for n, e in self.conserved))
        object.__setattr__(self, "parameters", dict(self.parameters))
        overlap = set(self.parameters) & set(self.variables)
        if overlap:
            raise DefinitionError(f"names used as both variable and parameter: {sorted(overlap)}")
        dyn = self.dynamics
        if isinstance(dyn, HamiltonianDynamics):
            if d % 2:
                raise DefinitionError("Hamiltonian dynamics requires an even dimension")
            if dyn.symplectic.dim != d:
                raise DefinitionError("symplectic dimension does not match variables")
            self._check_names(dyn.H, "hamiltonian")
        elif isinstance(dyn, ExplicitField):
            if len(dyn.components) != d:
                raise DefinitionError(f"field has {len(dyn.components)} components, expected {d}")
            for i, c in enumerate(dyn.components):
                self._check_names(c, f"component {i}")
        for name, q in self.conserved:
            self._check_names(q, f"conserved quantity {name!r}")

    def _check_names(self, e: Expr, what: str) -> None:
        unknown = ex.variables_of(e) - set(self.variables) - set(self.parameters)
        if unknown:
            raise DefinitionError(f"{what} references undeclared names {sorted(unknown)}")

    # -- basic properties ---------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.variables)

    @property
    def is_hamiltonian(self) -> bool:
        return isinstance(self.dynamics, HamiltonianDynamics)

    @property
    def hamiltonian(self) -> Expr:
        if not self.is_hamiltonian:
            raise DefinitionError(f"{self.name} has no Hamiltonian")
        return self.bind(self.dynamics.H)

    @property
    def symplectic(self) -> SymplecticStructure:
        if not self.is_hamiltonian:
            raise DefinitionError(f"{self.name} has no symplectic structure")
        return self.dynamics.symplectic

    def bind(self, e: Expr) -> Expr:
        """Inline parameter values into ``e``."""
        return ex.substitute(e, self.parameters) if self.parameters else e

    def parse(self, text: str) -> Expr:
        """Parse an expression in this system's namespace, parameters inlined."""
        e = ex.parse(text)
        self._check_names(e, repr(text))
        return self.bind(e)

    def candidate(self, name: str) -> Expr:
        """Look up a conserved candidate by name; ``H`` names the Hamiltonian."""
        for n, e in self.conserved:
            if n == name:
                return self.bind(e)
        if name == "H" and self.is_hamiltonian:
            return self.hamiltonian
        raise KeyError(name)

    @property
    def bound_conserved(self) -> tuple[tuple[str, Expr], ...]:
        """Declared conserved candidates with parameters inlined."""
        return tuple((n, self.bind(e)) for n, e in self.conserved)

    # -- vector field -------------------------------------------------------

    @cached_property
    def field_exprs(self) -> tuple[Expr, ...]:
        dyn = self.dynamics
        if isinstance(dyn, HamiltonianDynamics):
            return hamiltonian_field(self.hamiltonian, dyn.symplectic, self.variables)
        if isinstance(dyn, ExplicitField):
            return tuple(self.bind(c) for c in dyn.components)
        raise DefinitionError(f"{self.name} defines no dynamics")

    @cached_property
    def field_fn(self):
        """Fast scalar field ``f(x) -> tuple``; raises located ExprDomainError."""
        return ex.checked(self.field_exprs, self.variables, self.periodic)

    @cached_property
    def field_vec(self):
        return ex.compile_vector(self.field_exprs, self.variables, self.periodic)

    def field_at(self, x: Sequence[float]) -> np.ndarray:
        if len(x) != self.dim:
            raise ValueError(f"state has {len(x)} components, expected {self.dim}")
        try:
            return np.array(self.field_fn(x), dtype=float)
        except ex.ExprDomainError as exc:
            exc.state = tuple(float(v) for v in x)
            raise

    def hamiltonian_field_of(self, Q: Expr) -> tuple[Expr, ...]:
        """Field generated by ``Q`` through this system's symplectic form."""
        return hamiltonian_field(Q, self.symplectic, self.variables)

    def with_dynamics(self, dynamics, name: str | None = None) -> "SystemDef":
        return SystemDef(
            name=name or self.name,
            variables=self.variables,
            dynamics=dynamics,
            periodic=self.periodic,
            conserved=self.conserved,
            parameters=self.parameters,
        )

    # -- serialisation ------------------------------------------------------

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "variables": list(self.variables),
            "periodic": list(self.periodic),
            "conserved": [{"name": n, "expr": ex.render(e)} for n, e in self.conserved],
            "parameters": {k: float(v) for k, v in sorted(self.parameters.items())},
        }
        dyn = self.dynamics
        if isinstance(dyn, HamiltonianDynamics):
            out["dynamics"] = {
                "type": "hamiltonian",
                "hamiltonian": ex.render(dyn.H),
                "symplectic": dyn.symplectic.to_json(),
            }
        elif isinstance(dyn, ExplicitField):
            out["dynamics"] = {"type": "field", "components": [ex.render(c) for c in dyn.components]}
        else:
            out["dynamics"] = {"type": "none"}
        return out

    @classmethod
    def from_json(cls, doc: Mapping) -> "SystemDef":
        """Build a system from the JSON definition-file document."""
        try:
            variables = list(doc["variables"])
            name = str(doc.get("name", "unnamed"))
            dyn_doc = doc.get("dynamics", {"type": "none"})
            kind = dyn_doc.get("type")
            if kind == "hamiltonian":
                sym = dyn_doc.get("symplectic", {"type": "canonical"})
                if sym.get("type") == "canonical":
                    if len(variables) % 2:
                        raise DefinitionError("canonical structure needs an even number of variables")
                    s = SymplecticStructure.canonical(len(variables) // 2)
                elif sym.get("type") == "matrix":
                    s = SymplecticStructure(np.array(sym["W"], dtype=float))
                else:
                    raise DefinitionError(f"unknown symplectic type {sym.get('type')!r}")
                dynamics = HamiltonianDynamics(ex.parse(dyn_doc["hamiltonian"]), s)
            elif kind == "field":
                dynamics = ExplicitField(tuple(ex.parse(c) for c in dyn_doc["components"]))
            elif kind in (None, "none"):
                dynamics = None
            else:
                raise DefinitionError(f"unknown dynamics type {kind!r}")
            conserved = tuple((c["name"], ex.parse(c["expr"])) for c in doc.get("conserved", []))
            return cls(
                name=name,
                variables=tuple(variables),
                dynamics=dynamics,
                periodic=tuple(doc.get("periodic", [])),
                conserved=conserved,
                parameters={k: float(v) for k, v in doc.get("parameters", {}).items()},
            )
        except ex.ExprSyntaxError as exc:
            raise DefinitionError(f"expression error: {exc}") from exc
        except (KeyError, TypeError) as exc:
            raise DefinitionError(f"malformed system definition: {exc!r}") from exc
