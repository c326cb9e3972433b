"""Level-set topology of integrable systems: torus versus cylinder, drift rates.

For involutive conserved quantities ``Q_1..Q_n`` the Hamiltonian flows of the
``Q_i`` sweep out the common level set through a seed. A flow that keeps
returning near its start spans a compact (circle) direction; a flow that moves
off at a steady rate spans a line. A flow that blows up means the standard
action-angle picture does not apply.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import expr as ex
from .config import AnalysisConfig
from .conserved import (
    bracket_reports,
    conservation_residual,
    drift,
    independence_rank,
    ranks_at,
    sample_points,
)
from .integrate import Trajectory, integrate_adaptive
from .levelset import confining_probe
from .system import DefinitionError, SystemDef, wrapped_difference

__all__ = [
    "FlowStats",
    "LevelTopologyReport",
    "IffReport",
    "symmetry_flows",
    "recurrence_statistic",
    "drift_rate",
    "classify_level_set",
    "iff_assessment",
]

RECURRENCE_REL = 1e-2  # recurrent: min return <= this * extent
NONRECURRENT_REL = 5e-2  # clearly not recurrent; a line returns no closer than transient * extent
DRIFT_FRACTION = 0.5  # drifting: speed * window >= this * extent
STILL_FRACTION = 0.25  # not drifting: speed * window <= this * extent
DRIFT_TOL = 1e-6


def _distance(states: np.ndarray, x0: np.ndarray, periodic) -> np.ndarray:
    return np.linalg.norm(wrapped_difference(states, x0, periodic), axis=-1)


def recurrence_statistic(traj: Trajectory, transient: float = 0.1, samples: int = 4000) -> float:
    """Smallest wrapped distance to the initial state after the transient.

    The trajectory is resampled on a uniform grid through its dense output
    and each local minimum is refined on the interpolant.
    """
    if len(traj) < 3:
        raise ValueError("too few samples for a recurrence statistic")
    t0, t1 = float(traj.t[0]), float(traj.t[-1])
    ta = t0 + transient * (t1 - t0)
    ts = np.linspace(ta, t1, samples)
    x0 = traj.states[0]
    dist = _distance(traj.sample(ts), x0, traj.periodic)
    if not np.all(np.isfinite(dist)):
        raise ValueError("trajectory is not finite after the transient")
    best = float(np.min(dist))
    interior = np.flatnonzero((dist[1:-1] <= dist[:-2]) & (dist[1:-1] <= dist[2:])) + 1
    # refine the deepest few minima on the Hermite interpolant
    for i in interior[np.argsort(dist[interior])][:20]:

        def d(s):
            return float(_distance(traj.sample([s]), x0, traj.periodic)[0])

        r = minimize_scalar(d, bounds=(ts[i - 1], ts[i + 1]), method="bounded", options={"xatol": 1e-12})
        best = min(best, float(r.fun))
    return best


def _extent(traj: Trajectory, samples: int = 4000) -> float:
    ts = np.linspace(traj.t[0], traj.t[-1], samples)
    return float(np.max(_distance(traj.sample(ts), traj.states[0], traj.periodic)))


def drift_rate(traj: Trajectory, transient: float = 0.1, samples: int = 4000) -> np.ndarray:
    """Least-squares slope of every coordinate against time after the transient.

    Periodic coordinates are stored as continuous lifts by the integrators,
    so their slopes are winding rates of the unwrapped angle.
    """
    t0, t1 = float(traj.t[0]), float(traj.t[-1])
    if t1 == t0:
        return np.zeros(traj.states.shape[1])
    ts = np.linspace(t0 + transient * (t1 - t0), t1, samples)
    xs = traj.sample(ts)
    tc = ts - ts.mean()
    return (tc @ (xs - xs.mean(axis=0))) / (tc @ tc)


@dataclass(frozen=True)
class FlowStats:
    name: str
    min_return: float | None
    extent: float | None
    drift_rates: tuple[float, ...] | None
    drift_speed: float | None
    window: float
    recurrent: bool | None
    drifting: bool | None
    conserved_drift: dict
    flagged: bool
    blowup: dict | None = None
    trajectory: Trajectory | None = field(default=None, compare=False, repr=False)

    @property
    def direction(self) -> str:
        if self.blowup is not None:
            return "incomplete"
        if self.recurrent and not self.drifting:
            return "compact"
        if self.recurrent is False and self.drifting:
            return "noncompact"
        return "mixed"

    def to_json(self) -> dict:
        return {
            "flow": self.name,
            "direction": self.direction,
            "min_return": self.min_return,
            "extent": self.extent,
            "drift_rates": list(self.drift_rates) if self.drift_rates is not None else None,
            "drift_speed": self.drift_speed,
            "window": self.window,
            "recurrent": self.recurrent,
            "drifting": self.drifting,
            "conserved_drift": self.conserved_drift,
            "drift_flagged": self.flagged,
            "blowup": self.blowup,
        }


def _flow_stats(name: str, traj: Trajectory, sys: SystemDef, Qs, transient: float, drift_tol: float) -> FlowStats:
    cons = {}
    flagged = False
    blown = traj.blew_up
    for qn, Q in Qs:
        try:
            rep = drift(Q, traj)
            cons[qn] = rep.to_json()
            flagged |= (not blown) and rep.relative > drift_tol
        except ex.ExprDomainError as exc:
            cons[qn] = {"error": str(exc)}
            flagged = True
    T = float(traj.t[-1] - traj.t[0])
    window = (1.0 - transient) * T
    if blown:
        return FlowStats(name, None, None, None, None, window, None, None, cons, flagged,
                         traj.termination.to_json(), traj)
    rec = recurrence_statistic(traj, transient)
    ext = _extent(traj)
    rates = drift_rate(traj, transient)
    free = ~np.array(sys.periodic)
    speed = float(np.linalg.norm(rates[free])) if free.any() else 0.0
    if ext == 0.0:
        recurrent, drifting = True, False
    else:
        recurrent = True if rec <= RECURRENCE_REL * ext else (False if rec >= NONRECURRENT_REL * ext else None)
        frac = speed * window / ext
        drifting = True if frac >= DRIFT_FRACTION else (False if frac <= STILL_FRACTION else None)
    return FlowStats(name, rec, ext, tuple(float(r) for r in rates), speed, window, recurrent, drifting,
                     cons, flagged, None, traj)


def symmetry_flows(
    sys: SystemDef,
    Qs: Sequence[tuple[str, ex.Expr]],
    x0: Sequence[float],
    T: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> list[Trajectory]:
    """Integrate the Hamiltonian field of every ``Q_i`` from ``x0`` over ``[0, T]``."""
    if not sys.is_hamiltonian:
        raise DefinitionError(f"{sys.name} has no symplectic structure")
    out = []
    for name, Q in Qs:
        traj = integrate_adaptive(sys, x0, 0.0, T, rtol=rtol, atol=atol, field_exprs=sys.hamiltonian_field_of(Q))
        traj.system = f"{sys.name}:flow[{name}]"
        out.append(traj)
    return out


@dataclass(frozen=True)
class LevelTopologyReport:
    seed: tuple[float, ...]
    level: dict
    classification: str  # TorusEvidence | CylinderEvidence | IncompleteFlow | Inconclusive
    k_compact: int | None
    flows: tuple[FlowStats, ...]
    dynamics: FlowStats | None
    coefficients: dict | None
    zero_frequency: tuple[str, ...]
    horizon: float
    transient: float
    reason: str = ""

    @property
    def label(self) -> str:
        if self.classification == "CylinderEvidence":
            return f"CylinderEvidence:k={self.k_compact}"
        return self.classification

    @property
    def drift_rates(self) -> dict:
        return {f.name: list(f.drift_rates) for f in self.flows
                if f.direction == "noncompact" and f.drift_rates is not None}

    def to_json(self) -> dict:
        return {
            "seed": list(self.seed),
            "level": self.level,
            "classification": self.classification,
            "label": self.label,
            "k_compact": self.k_compact,
            "drift_rates": self.drift_rates,
            "flows": [f.to_json() for f in self.flows],
            "dynamics": self.dynamics.to_json() if self.dynamics is not None else None,
            "dynamics_coefficients": self.coefficients,
            "zero_frequency": list(self.zero_frequency),
            "horizon": self.horizon,
            "transient": self.transient,
            "thresholds": {
                "recurrent_below": RECURRENCE_REL,
                "nonrecurrent_above": NONRECURRENT_REL,
                "drifting_above": DRIFT_FRACTION,
                "still_below": STILL_FRACTION,
                "relative_to": "flow extent",
            },
            "reason": self.reason,
        }


def _coefficients(sys: SystemDef, Qs, x0) -> tuple[dict | None, tuple[str, ...]]:
    """Write ``X_H(x0)`` in the basis ``X_{Q_i}(x0)``; zero coefficients mark frozen directions."""
    cols = []
    for _, Q in Qs:
        f = ex.compile_scalar(sys.hamiltonian_field_of(Q), sys.variables, sys.periodic)
        cols.append(np.array(f(x0), dtype=float))
    A = np.stack(cols, axis=1)
    b = sys.field_at(x0)
    c, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = float(np.linalg.norm(A @ c - b))
    scale = max(float(np.max(np.abs(c))), 1e-300)
    zero = tuple(n for (n, _), ci in zip(Qs, c) if abs(ci) <= 1e-9 * scale)
    return {"values": {n: float(ci) for (n, _), ci in zip(Qs, c)}, "residual": resid}, zero


def classify_level_set(
    sys: SystemDef,
    Qs: Sequence[tuple[str, ex.Expr]],
    x0: Sequence[float],
    T: float = 100.0,
    transient: float = 0.1,
    drift_tol: float = DRIFT_TOL,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> LevelTopologyReport:
    """Torus or cylinder evidence for the common level set through ``x0``.

    Each ``X_{Q_i}`` flow is compact when it is recurrent and not drifting,
    non-compact when it drifts without returning; ``k`` counts compact flows.
    Any blow-up gives IncompleteFlow; a flow between the thresholds gives
    Inconclusive.
    """
    x0 = tuple(float(v) for v in x0)
    level = {}
    for n, Q in Qs:
        level[n] = ex.evaluate(Q, dict(zip(sys.variables, x0)))
    trajs = symmetry_flows(sys, Qs, x0, T, rtol, atol)
    flows = tuple(_flow_stats(n, tr, sys, Qs, transient, drift_tol) for (n, _), tr in zip(Qs, trajs))
    coeffs, zero = _coefficients(sys, Qs, x0)
    dyn = None
    if not any(f.blowup for f in flows):
        dyn_traj = integrate_adaptive(sys, x0, 0.0, T, rtol=rtol, atol=atol)
        dyn = _flow_stats("H", dyn_traj, sys, Qs, transient, drift_tol)
    dirs = [f.direction for f in flows]
    if "incomplete" in dirs:
        cls, k = "IncompleteFlow", None
        reason = "a symmetry flow blows up in finite time; the action-angle description does not apply"
    elif "mixed" in dirs:
        cls, k = "Inconclusive", None
        reason = "a flow sits between the recurrence and drift thresholds"
    else:
        k = dirs.count("compact")
        if k == len(flows):
            cls = "TorusEvidence"
            reason = "every symmetry flow returns near its start without drift"
            if zero:
                reason += f"; dynamics has zero frequency along {','.join(zero)} and stays on a sub-torus"
        else:
            cls = "CylinderEvidence"
            reason = f"{k} compact and {len(flows) - k} drifting directions"
    if any(f.flagged for f in flows):
        reason += "; conserved-quantity drift along a flow exceeds tolerance"
    return LevelTopologyReport(x0, level, cls, k, flows, dyn, coeffs, zero, float(T), transient, reason)


# --------------------------------------------------------------------------
# integrability assessment


@dataclass(frozen=True)
class IffReport:
    outcome: str  # g1_positive | not_g1_cylinder_drift | not_g1 | inapplicable_incomplete_flows | hypotheses_fail | inconclusive
    statement: str
    hypotheses: dict
    failures: tuple[str, ...]
    levels: tuple[LevelTopologyReport, ...]
    confining: dict | None

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome,
            "statement": self.statement,
            "hypotheses": self.hypotheses,
            "failures": list(self.failures),
            "levels": [lv.to_json() for lv in self.levels],
            "confining": self.confining,
        }


def iff_assessment(
    sys: SystemDef,
    Qs: Sequence[tuple[str, ex.Expr]],
    seeds: Sequence[Sequence[float]],
    T: float = 100.0,
    config: AnalysisConfig | None = None,
) -> IffReport:
    """Check the integrability hypotheses, then relate G1 to confinement of ``(Q_1..Q_n)``.

    With ``n = d/2`` conserved quantities in involution, independent on the
    sampled region and with complete flows, the system is G1 stable exactly
    when the map ``(Q_1..Q_n)`` is confining.
    """
    cfg = config or AnalysisConfig()
    Qs = list(Qs)
    failures: list[str] = []
    hyp: dict = {}
    n = sys.dim // 2
    if len(Qs) != n:
        failures.append(f"need {n} conserved quantities, got {len(Qs)}")
    pts = sample_points([0.0] * sys.dim, [cfg.sample_half_width] * sys.dim, cfg.sample_count, sys.periodic)
    cons = [conservation_residual(sys, Q, pts, cfg.conservation_tol, name) for name, Q in Qs]
    hyp["conservation"] = [c.to_json() for c in cons]
    failures += [f"{c.candidate} is not conserved (normalised residual {c.max_normalized:.3g})" for c in cons if not c.passed]
    brs = bracket_reports(sys, Qs, pts, cfg.bracket_tol)
    hyp["involution"] = [b.to_json() for b in brs]
    failures += [f"{{{b.pair[0]},{b.pair[1]}}} = {b.max_abs:.3g} exceeds {b.threshold:.3g}" for b in brs if not b.passed]
    ranks = ranks_at([q for _, q in Qs], pts, sys.variables, sys.periodic, cfg.rank_rtol)
    deficient = np.flatnonzero(ranks < len(Qs))
    hyp["independence"] = {
        "sample_count": int(len(ranks)),
        "min_rank": int(ranks.min()) if len(ranks) else None,
        "deficient_points": int(len(deficient)),
        "first_deficient": [float(v) for v in pts[deficient[0]]] if len(deficient) else None,
        "rank_rtol": cfg.rank_rtol,
    }
    if len(deficient):
        failures.append(f"rank deficient at {len(deficient)} sampled points, e.g. {pts[deficient[0]].tolist()}")
    seed_ranks = [independence_rank([q for _, q in Qs], s, sys.variables, sys.periodic, cfg.rank_rtol) for s in seeds]
    hyp["seed_ranks"] = seed_ranks
    failures += [f"rank {r} < {len(Qs)} at seed {list(s)}" for r, s in zip(seed_ranks, seeds) if r < len(Qs)]
    if failures:
        return IffReport("hypotheses_fail", "integrability hypotheses fail: " + "; ".join(failures),
                         hyp, tuple(failures), (), None)
    levels = tuple(classify_level_set(sys, Qs, s, T, cfg.transient) for s in seeds)
    hyp["complete_flows"] = all(lv.classification != "IncompleteFlow" for lv in levels)
    if not hyp["complete_flows"]:
        return IffReport(
            "inapplicable_incomplete_flows",
            "a symmetry flow is incomplete, so the torus/cylinder dichotomy and the G1 criterion do not apply",
            hyp, (), levels, None,
        )
    conf = confining_probe(sys, [q for _, q in Qs], seeds, scales=cfg.scales, resolution=cfg.resolution,
                           map_name=",".join(n for n, _ in Qs), budget=cfg.budget)
    base = "integrability hypotheses hold at the probed scale, so G1 holds iff the invariant map is confining"
    if conf.verdict == "ConfiningEvidence":
        outcome, tail = "g1_positive", "confining evidence: yes"
    elif conf.verdict == "NotConfiningAtScale":
        cyl = any(lv.classification == "CylinderEvidence" for lv in levels)
        outcome = "not_g1_cylinder_drift" if cyl else "not_g1"
        tail = "confining evidence: no" + (" (orbits drift along cylinder directions)" if cyl else "")
    else:
        outcome, tail = "inconclusive", f"confining probe inconclusive: {conf.reason}"
    return IffReport(outcome, f"{base}; {tail}", hyp, (), levels, conf.to_json())
