"""Conservation residuals, Poisson brackets, involution and independence checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from . import expr as ex
from .expr import Expr
from .integrate import Trajectory
from .system import SymplecticStructure, SystemDef, linear_combination

__all__ = [
    "sample_points",
    "ResidualReport",
    "conservation_residual",
    "DriftReport",
    "drift",
    "poisson_bracket",
    "bracket_expr",
    "BracketReport",
    "bracket_reports",
    "independence_rank",
    "independent_subset",
    "CONSERVATION_TOL",
    "INVOLUTION_TOL",
]

CONSERVATION_TOL = 1e-10
INVOLUTION_TOL = 1e-8
RANK_RTOL = 1e-8
RANK_ATOL = 1e-12


def sample_points(
    center: Sequence[float],
    half_widths: Sequence[float],
    n: int = 1000,
    periodic: Sequence[bool] | None = None,
) -> np.ndarray:
    """Deterministic Halton points in a box, shape ``(n, d)``.

    Periodic coordinates are sampled over the whole circle ``[0, 2*pi)``.
    The first Halton point (the box corner) is skipped.
    """
    center = np.asarray(center, dtype=float)
    hw = np.asarray(half_widths, dtype=float)
    d = len(center)
    u = qmc.Halton(d=d, scramble=False).random(n + 1)[1:]
    lo, hi = center - hw, center + hw
    if periodic is not None:
        per = np.asarray(periodic, dtype=bool)
        lo = np.where(per, 0.0, lo)
        hi = np.where(per, 2 * np.pi, hi)
    return lo + u * (hi - lo)


def _grad_vec(Q: Expr, variables, periodic):
    return ex.compile_vector(ex.gradient(Q, variables), variables, periodic)


@dataclass(frozen=True)
class ResidualReport:
    candidate: str
    max_residual: float
    max_normalized: float
    worst_point: tuple[float, ...] | None
    n_points: int
    n_skipped: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.n_points > self.n_skipped and self.max_normalized <= self.tolerance

    def to_json(self) -> dict:
        return {
            "candidate": self.candidate,
            "max_residual": self.max_residual,
            "max_normalized": self.max_normalized,
            "worst_point": list(self.worst_point) if self.worst_point is not None else None,
            "n_points": self.n_points,
            "n_skipped": self.n_skipped,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def conservation_residual(
    sys: SystemDef,
    Q: Expr,
    points: np.ndarray,
    tolerance: float = CONSERVATION_TOL,
    name: str = "Q",
) -> ResidualReport:
    """Max of ``|grad Q . X|`` over ``points`` using symbolic derivatives.

    Each point's residual is also normalised by ``1 + |grad Q||X|``; the
    candidate passes when the normalised maximum is within ``tolerance``.
    Points where either side is undefined are skipped and counted.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    X = sys.field_vec(pts.T)
    G = _grad_vec(Q, sys.variables, sys.periodic)(pts.T)
    ok = np.all(np.isfinite(X), axis=0) & np.all(np.isfinite(G), axis=0)
    with np.errstate(invalid="ignore", over="ignore"):
        res = np.abs(np.sum(G * X, axis=0))
        norm = res / (1.0 + np.linalg.norm(G, axis=0) * np.linalg.norm(X, axis=0))
    n_skipped = int(np.count_nonzero(~ok))
    if not ok.any():
        return ResidualReport(name, float("nan"), float("nan"), None, len(pts), n_skipped, tolerance)
    res_ok = np.where(ok, res, -1.0)
    k = int(np.argmax(res_ok))
    return ResidualReport(
        candidate=name,
        max_residual=float(res[k]),
        max_normalized=float(np.max(norm[ok])),
        worst_point=tuple(float(v) for v in pts[k]),
        n_points=len(pts),
        n_skipped=n_skipped,
        tolerance=tolerance,
    )


@dataclass(frozen=True)
class DriftReport:
    max_abs: float
    relative: float
    q0: float

    def to_json(self) -> dict:
        return {"max_abs_drift": self.max_abs, "relative_drift": self.relative, "q0": self.q0}


def drift(Q: Expr, traj: Trajectory) -> DriftReport:
    """``max |Q(x(t)) - Q(x0)|`` along a trajectory; relative to ``1 + |Q(x0)|``."""
    f = ex.compile_vector([Q], traj.variables, traj.periodic)
    vals = f(traj.states.T)[0]
    if not np.all(np.isfinite(vals)):
        bad = int(np.argmin(np.isfinite(vals)))
        b = dict(zip(traj.variables, traj.states[bad]))
        ex.evaluate(Q, b)  # raises the located domain error
        raise ex.ExprDomainError("overflow", Q, "non-finite value along trajectory")
    q0 = float(vals[0])
    m = float(np.max(np.abs(vals - q0)))
    return DriftReport(m, m / (1.0 + abs(q0)), q0)


def bracket_expr(F: Expr, G: Expr, s: SymplecticStructure, variables: Sequence[str]) -> Expr:
    """Symbolic ``{F, G} = grad F^T P grad G`` with ``P`` the Poisson tensor."""
    gF = ex.gradient(F, variables)
    gG = ex.gradient(G, variables)
    P = s.poisson
    out: Expr = ex.ZERO
    for i, dFi in enumerate(gF):
        if isinstance(dFi, ex.Const) and dFi.value == 0.0:
            continue
        row = linear_combination(P[i], gG)
        out = ex._add(out, ex._mul(dFi, row))
    return out


def poisson_bracket(
    F: Expr, G: Expr, s: SymplecticStructure, x: Sequence[float], variables: Sequence[str]
) -> float:
    """``{F, G}(x)``; ``{q, p} = +1`` in canonical coordinates."""
    b = dict(zip(variables, (float(v) for v in x)))
    gF = np.array([ex.evaluate(e, b) for e in ex.gradient(F, variables)])
    gG = np.array([ex.evaluate(e, b) for e in ex.gradient(G, variables)])
    return float(gF @ s.poisson @ gG)


@dataclass(frozen=True)
class BracketReport:
    pair: tuple[str, str]
    max_abs: float
    gradient_scale: float
    sample_count: int
    tolerance: float

    @property
    def threshold(self) -> float:
        return self.tolerance * (1.0 + self.gradient_scale)

    @property
    def passed(self) -> bool:
        return self.max_abs <= self.threshold

    def to_json(self) -> dict:
        return {
            "pair": list(self.pair),
            "max_abs": self.max_abs,
            "gradient_scale": self.gradient_scale,
            "threshold": self.threshold,
            "sample_count": self.sample_count,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def bracket_reports(
    sys: SystemDef,
    Qs: Sequence[tuple[str, Expr]],
    points: np.ndarray,
    tolerance: float = INVOLUTION_TOL,
) -> list[BracketReport]:
    """Pairwise involution check ``{Qi, Qj} = 0`` over sample points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grads = [_grad_vec(Q, sys.variables, sys.periodic)(pts.T) for _, Q in Qs]
    P = sys.symplectic.poisson
    out = []
    for i in range(len(Qs)):
        for j in range(i + 1, len(Qs)):
            gi, gj = grads[i], grads[j]
            vals = np.einsum("an,ab,bn->n", gi, P, gj)
            scale = np.linalg.norm(gi, axis=0) * np.linalg.norm(gj, axis=0)
            ok = np.isfinite(vals) & np.isfinite(scale)
            out.append(
                BracketReport(
                    pair=(Qs[i][0], Qs[j][0]),
                    max_abs=float(np.max(np.abs(vals[ok]))) if ok.any() else float("nan"),
                    gradient_scale=float(np.max(scale[ok])) if ok.any() else float("nan"),
                    sample_count=int(np.count_nonzero(ok)),
                    tolerance=tolerance,
                )
            )
    return out


def jacobian(Qs: Sequence[Expr], variables: Sequence[str], x: Sequence[float], periodic=None) -> np.ndarray:
    rows = [ex.gradient(Q, variables) for Q in Qs]
    f = ex.compile_vector([g for row in rows for g in row], variables, periodic)
    vals = f(np.asarray(x, dtype=float).reshape(-1, 1))[:, 0]
    return vals.reshape(len(Qs), len(variables))


def _rank(J: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if not np.all(np.isfinite(J)):
        raise ex.ExprDomainError("domain", None, "gradient undefined at point")
    sv = np.linalg.svd(J, compute_uv=False)
    if sv.size == 0 or sv[0] < RANK_ATOL:
        return 0
    return int(np.count_nonzero(sv >= rtol * sv[0]))


def independence_rank(
    Qs: Sequence[Expr], x: Sequence[float], variables: Sequence[str], periodic=None, rtol: float = RANK_RTOL
) -> int:
    """Numerical rank of the Jacobian ``[dQi/dxj]`` at ``x``."""
    if not Qs:
        raise ValueError("need at least one function")
    return _rank(jacobian(Qs, variables, x, periodic), rtol)


def ranks_at(Qs: Sequence[Expr], points: np.ndarray, variables, periodic=None, rtol: float = RANK_RTOL) -> np.ndarray:
    rows = [ex.gradient(Q, variables) for Q in Qs]
    f = ex.compile_vector([g for row in rows for g in row], variables, periodic)
    vals = f(np.asarray(points, dtype=float).T)
    out = []
    for k in range(vals.shape[1]):
        J = vals[:, k].reshape(len(Qs), len(variables))
        out.append(_rank(J, rtol) if np.all(np.isfinite(J)) else -1)
    return np.array(out)


def independent_subset(
    Qs: Sequence[tuple[str, Expr]], points: np.ndarray, variables, periodic=None, rtol: float = RANK_RTOL
) -> list[tuple[str, Expr]]:
    """Greedy maximal subset whose generic rank grows with every member.

    Generic rank is the maximum rank over ``points``; a candidate that does
    not raise it is functionally dependent on those already chosen.
    """
    chosen: list[tuple[str, Expr]] = []
    rank = 0
    for name, Q in Qs:
        trial = [q for _, q in chosen] + [Q]
        r = ranks_at(trial, points, variables, periodic, rtol)
        r = int(r.max()) if r.size else 0
        if r > rank:
            chosen.append((name, Q))
            rank = r
    return chosen
