"""Stability verdicts: G1 certificates, trajectory classification and the ghost probe.

Every verdict is backed by an evidence chain. Each entry names the operation
that produced it and its exact inputs, so the chain can be re-executed
(:func:`replay`) and tampering is caught by the stored digests
(:meth:`Certificate.verdict`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import expr as ex
from .config import AnalysisConfig
from .conserved import conservation_residual, independent_subset, sample_points
from .integrate import Blowup, DomainFailure, Trajectory, integrate_adaptive
from .levelset import composition_futility, confining_probe
from .report import clean, now, sha256_of
from .system import DefinitionError, SystemDef

__all__ = [
    "Evidence",
    "Certificate",
    "TrajectoryClass",
    "GhostReport",
    "VERDICTS",
    "classify_trajectory",
    "classify_system",
    "certify_g1",
    "ghost_probe",
    "ghost_certificate",
    "default_seeds",
    "replay",
    "GHOST_CAVEAT",
]

VERDICTS = ("G1Certified", "G2EvidenceNotG1", "BlowupWitness", "GhostEvidence", "Inconclusive")

GHOST_CAVEAT = (
    "only the supplied Hamiltonian and symplectic structure were probed; a vector field is ghost-ridden "
    "only if every compatible Hamiltonian formulation is unbounded in both directions, which sampling "
    "one formulation cannot establish"
)


# --------------------------------------------------------------------------
# evidence and certificates


@dataclass(frozen=True)
class Evidence:
    claim: str
    operation: str
    inputs: dict
    outcome: dict
    passed: bool
    tolerance: float | None = None
    scale: float | None = None
    inputs_digest: str = ""
    digest: str = ""

    def _body(self) -> dict:
        return {
            "claim": self.claim,
            "operation": self.operation,
            "inputs_digest": self.inputs_digest,
            "outcome": self.outcome,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "scale": self.scale,
        }

    def sealed(self) -> "Evidence":
        e = replace(self, inputs=clean(self.inputs), outcome=clean(self.outcome), inputs_digest=sha256_of(self.inputs))
        return replace(e, digest=sha256_of(e._body()))

    def intact(self) -> bool:
        return self.inputs_digest == sha256_of(self.inputs) and self.digest == sha256_of(self._body())

    def to_json(self) -> dict:
        return {**self._body(), "inputs": self.inputs, "digest": self.digest}

    @classmethod
    def from_json(cls, doc: dict) -> "Evidence":
        return cls(doc["claim"], doc["operation"], doc["inputs"], doc["outcome"], bool(doc["passed"]),
                   doc.get("tolerance"), doc.get("scale"), doc["inputs_digest"], doc["digest"])


@dataclass
class Certificate:
    system: str
    claimed_verdict: str
    evidence: list[Evidence]
    via: tuple[str, ...] = ()
    reason: str = ""
    attempts: list[dict] = field(default_factory=list)
    advisories: list[dict] = field(default_factory=list)
    timestamp: str = field(default_factory=now)
    tool_version: str = __version__

    @property
    def verdict(self) -> str:
        """The claimed verdict if its evidence chain is intact and supports it, else Inconclusive."""
        if self.claimed_verdict == "Inconclusive":
            return "Inconclusive"
        if not self.evidence or not all(e.intact() and e.passed for e in self.evidence):
            return "Inconclusive"
        check = _SUPPORT.get(self.claimed_verdict)
        if check is None or not check(self):
            return "Inconclusive"
        return self.claimed_verdict

    def to_json(self) -> dict:
        return {
            "system": self.system,
            "verdict": self.verdict,
            "claimed_verdict": self.claimed_verdict,
            "via": list(self.via),
            "reason": self.reason,
            "evidence": [e.to_json() for e in self.evidence],
            "attempts": self.attempts,
            "advisories": self.advisories,
            "timestamp": self.timestamp,
            "tool_version": self.tool_version,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Certificate":
        return cls(
            system=doc["system"],
            claimed_verdict=doc["claimed_verdict"],
            evidence=[Evidence.from_json(e) for e in doc["evidence"]],
            via=tuple(doc.get("via", ())),
            reason=doc.get("reason", ""),
            attempts=list(doc.get("attempts", [])),
            advisories=list(doc.get("advisories", [])),
            timestamp=doc.get("timestamp", ""),
            tool_version=doc.get("tool_version", ""),
        )


def _supports_g1(cert: Certificate) -> bool:
    conserved = {e.inputs.get("candidate") for e in cert.evidence if e.operation == "conservation_residual"}
    confined = [
        e for e in cert.evidence
        if e.operation == "confining_probe" and e.outcome.get("verdict") == "ConfiningEvidence"
        and tuple(e.inputs.get("names", ())) == tuple(cert.via)
    ]
    return bool(cert.via) and set(cert.via) <= conserved and bool(confined)


def _supports_blowup(cert: Certificate) -> bool:
    return any(e.operation == "trajectory" and e.outcome.get("class") == "Blowup" for e in cert.evidence)


def _supports_escape(cert: Certificate) -> bool:
    return any(e.operation == "trajectory" and e.outcome.get("class") == "EscapeNoBlowup" for e in cert.evidence)


def _supports_ghost(cert: Certificate) -> bool:
    return any(e.operation == "ghost_search" and e.outcome.get("verdict") == "GhostEvidence" for e in cert.evidence)


_SUPPORT: dict[str, Callable[[Certificate], bool]] = {
    "G1Certified": _supports_g1,
    "BlowupWitness": _supports_blowup,
    "G2EvidenceNotG1": _supports_escape,
    "GhostEvidence": _supports_ghost,
}


# --------------------------------------------------------------------------
# operations: each maps (system, inputs) to (outcome, passed, raw result), so
# the same code produces an evidence entry and replays it


def _op_conservation(sys: SystemDef, inp: dict):
    Q = ex.parse(inp["expr"])
    pts = sample_points(inp["center"], [inp["half_width"]] * sys.dim, inp["n_points"], sys.periodic)
    rep = conservation_residual(sys, Q, pts, inp["tolerance"], inp["candidate"])
    return rep.to_json(), rep.passed, rep


def _op_independence(sys: SystemDef, inp: dict):
    cands = [(n, ex.parse(s)) for n, s in inp["candidates"]]
    pts = sample_points(inp["center"], [inp["half_width"]] * sys.dim, inp["n_points"], sys.periodic)
    chosen = independent_subset(cands, pts, sys.variables, sys.periodic, rtol=inp["rank_rtol"])
    names = [n for n, _ in chosen]
    return {"chosen": names, "rank": len(names)}, bool(names), chosen


def _op_confining(sys: SystemDef, inp: dict):
    F = [ex.parse(s) for s in inp["exprs"]]
    v = confining_probe(sys, F, inp["seeds"], scales=inp["scales"], resolution=inp["resolution"],
                        map_name=",".join(inp["names"]), budget=inp["budget"])
    return v.to_json(), v.verdict == "ConfiningEvidence", v


def _op_trajectory(sys: SystemDef, inp: dict):
    traj = integrate_adaptive(sys, inp["x0"], inp["t0"], inp["t1"], rtol=inp["rtol"], atol=inp["atol"])
    tc = classify_trajectory(traj, inp["escape_radii"])
    return tc.to_json(), tc.verdict != "Undefined", (traj, tc)


def _op_ghost(sys: SystemDef, inp: dict):
    g = ghost_probe(sys, inp["scales"], inp["samples"], inp["steps"], inp["threshold"])
    return g.to_json(), True, g


OPERATIONS = {
    "conservation_residual": _op_conservation,
    "independent_subset": _op_independence,
    "confining_probe": _op_confining,
    "trajectory": _op_trajectory,
    "ghost_search": _op_ghost,
}


def _run(sys: SystemDef, claim: str, operation: str, inputs: dict, tolerance=None, scale=None):
    inputs = clean(inputs)
    outcome, passed, raw = OPERATIONS[operation](sys, inputs)
    ev = Evidence(claim, operation, inputs, outcome, bool(passed), tolerance, scale).sealed()
    return ev, raw


def replay(cert: Certificate, sys: SystemDef) -> list[bool]:
    """Re-execute every evidence entry; True where the recorded outcome is reproduced."""
    out = []
    for e in cert.evidence:
        op = OPERATIONS.get(e.operation)
        if op is None:
            out.append(False)
            continue
        outcome, passed, _ = op(sys, e.inputs)
        out.append(sha256_of(outcome) == sha256_of(e.outcome) and bool(passed) == e.passed)
    return out


# --------------------------------------------------------------------------
# trajectory classification


@dataclass(frozen=True)
class TrajectoryClass:
    verdict: str  # Bounded | EscapeNoBlowup | Blowup | Undefined
    radius_reached: float | None
    max_norm: float
    horizon: float
    t_final: float
    termination: dict

    def to_json(self) -> dict:
        return {
            "class": self.verdict,
            "radius_reached": self.radius_reached,
            "max_norm": self.max_norm,
            "horizon": self.horizon,
            "t_final": self.t_final,
            "termination": self.termination,
        }


def classify_trajectory(traj: Trajectory, escape_radii: Sequence[float] = (1e2, 1e3, 1e4)) -> TrajectoryClass:
    """Blowup, EscapeNoBlowup (norm beyond the last radius) or Bounded up to the horizon.

    A trajectory stopped by an undefined field value is reported as Undefined.
    """
    radii = sorted(float(r) for r in escape_radii)
    norms = traj.norms()
    m = float(np.max(norms))
    reached = [r for r in radii if m > r]
    horizon = float(abs(traj.t[-1] - traj.t[0]))
    if isinstance(traj.termination, Blowup):
        verdict = "Blowup"
    elif isinstance(traj.termination, DomainFailure):
        verdict = "Undefined"
    elif m > radii[-1]:
        verdict = "EscapeNoBlowup"
    else:
        verdict = "Bounded"
    return TrajectoryClass(verdict, reached[-1] if reached else None, m, horizon,
                           float(traj.t[-1]), traj.termination.to_json())


@dataclass
class ClassifyResult:
    certificate: Certificate
    classification: str
    trajectories: list[Trajectory]
    classes: list[TrajectoryClass]

    def sub_report(self) -> dict:
        return {
            "kind": "trajectory_classification",
            "classification": self.classification,
            "runs": [c.to_json() for c in self.classes],
        }


def default_seeds(sys: SystemDef, n: int = 3) -> list[tuple[float, ...]]:
    pts = sample_points([0.0] * sys.dim, [1.0] * sys.dim, n, sys.periodic)
    return [tuple(float(v) for v in p) for p in pts]


def classify_system(
    sys: SystemDef,
    seeds: Sequence[Sequence[float]],
    horizon: float,
    backward: bool = False,
    config: AnalysisConfig | None = None,
) -> ClassifyResult:
    """Integrate every seed over ``[0, +-horizon]`` and aggregate the classes."""
    cfg = config or AnalysisConfig()
    if sys.dynamics is None:
        raise DefinitionError(f"{sys.name} defines no dynamics")
    t1 = -horizon if backward else horizon
    evidence, trajs, classes = [], [], []
    for x0 in seeds:
        ev, (traj, tc) = _run(
            sys, f"trajectory from {list(x0)}", "trajectory",
            {"x0": list(x0), "t0": 0.0, "t1": t1, "rtol": cfg.rtol, "atol": cfg.atol,
             "escape_radii": list(cfg.escape_radii)},
            tolerance=cfg.rtol, scale=cfg.escape_radii[-1],
        )
        evidence.append(ev)
        trajs.append(traj)
        classes.append(tc)
    kinds = {c.verdict for c in classes}
    if "Blowup" in kinds:
        cls, verdict = "Blowup", "BlowupWitness"
        reason = "finite-time blow-up detected; the flow is not complete"
    elif "EscapeNoBlowup" in kinds:
        cls, verdict = "EscapeNoBlowup", "G2EvidenceNotG1"
        reason = f"an orbit passes radius {cfg.escape_radii[-1]:g} without blow-up within the horizon {horizon:g}"
    elif "Undefined" in kinds:
        cls, verdict = "Undefined", "Inconclusive"
        reason = "a trajectory left the domain of the field"
    else:
        cls, verdict = "Bounded", "Inconclusive"
        reason = f"all orbits bounded up to horizon {horizon:g}; a finite horizon does not certify G1"
    if verdict != "Inconclusive":
        # keep only the entries that carry the verdict
        evidence = [e for e, c in zip(evidence, classes) if c.verdict == cls]
    cert = Certificate(sys.name, verdict, evidence, reason=reason)
    return ClassifyResult(cert, cls, trajs, classes)


# --------------------------------------------------------------------------
# G1 certification


def _candidates(sys: SystemDef) -> list[tuple[str, ex.Expr]]:
    cands = list(sys.bound_conserved)
    if sys.is_hamiltonian and "H" not in {n for n, _ in cands}:
        cands.append(("H", sys.hamiltonian))
    return cands


def certify_g1(
    sys: SystemDef,
    seeds: Sequence[Sequence[float]] | None = None,
    config: AnalysisConfig | None = None,
) -> Certificate:
    """Look for a confining conserved quantity, alone or as a tuple.

    Candidates failing the conservation test are dropped. Single candidates
    are probed first (``H`` leading); if none is confining, the independent
    tuple of surviving candidates is probed. A non-confining result for the
    last map tried carries the composition advisory.
    """
    cfg = config or AnalysisConfig()
    if sys.dynamics is None:
        return Certificate(sys.name, "Inconclusive", [], reason="no dynamics defined")
    cands = _candidates(sys)
    if not cands:
        return Certificate(sys.name, "Inconclusive", [], reason="no conserved candidates")
    seeds = [tuple(map(float, s)) for s in (seeds or default_seeds(sys))]
    center = [0.0] * sys.dim
    passing: list[tuple[str, ex.Expr]] = []
    cons_ev: dict[str, Evidence] = {}
    attempts: list[dict] = []
    chain: list[Evidence] = []
    for name, Q in cands:
        ev, rep = _run(sys, f"{name} is conserved", "conservation_residual",
                       {"candidate": name, "expr": ex.render(Q), "center": center,
                        "half_width": cfg.sample_half_width, "n_points": cfg.sample_count,
                        "tolerance": cfg.conservation_tol},
                       tolerance=cfg.conservation_tol, scale=cfg.sample_half_width)
        chain.append(ev)
        if rep.passed:
            passing.append((name, Q))
            cons_ev[name] = ev
        else:
            attempts.append({"candidate": name, "stage": "conservation", "max_normalized": rep.max_normalized})
    if not passing:
        return Certificate(sys.name, "Inconclusive", chain, reason="no candidate passed the conservation test",
                           attempts=attempts)

    def probe(group: list[tuple[str, ex.Expr]]):
        names = [n for n, _ in group]
        return _run(sys, f"({','.join(names)}) is confining at the seed levels", "confining_probe",
                    {"names": names, "exprs": [ex.render(q) for _, q in group], "seeds": [list(s) for s in seeds],
                     "scales": list(cfg.scales), "resolution": cfg.resolution, "budget": cfg.budget},
                    scale=cfg.scales[-1])

    singles = sorted(passing, key=lambda c: c[0] != "H")
    last_verdict = None
    for name, Q in singles:
        ev, v = probe([(name, Q)])
        chain.append(ev)
        last_verdict = v
        if ev.passed:
            return Certificate(sys.name, "G1Certified", [cons_ev[name], ev], via=(name,),
                               reason=f"{name} is conserved and confining at the probed scales",
                               attempts=attempts)
        attempts.append({"candidate": name, "stage": "confining", "verdict": v.verdict})
    advisories = []
    if len(passing) > 1:
        ev_ind, chosen = _run(sys, "independent tuple of conserved candidates", "independent_subset",
                              {"candidates": [[n, ex.render(q)] for n, q in passing], "center": center,
                               "half_width": cfg.sample_half_width, "n_points": cfg.sample_count,
                               "rank_rtol": cfg.rank_rtol},
                              tolerance=cfg.rank_rtol, scale=cfg.sample_half_width)
        chain.append(ev_ind)
        if len(chosen) > 1:
            ev, v = probe(chosen)
            chain.append(ev)
            last_verdict = v
            names = tuple(n for n, _ in chosen)
            if ev.passed:
                support = [cons_ev[n] for n in names] + [ev_ind, ev]
                return Certificate(sys.name, "G1Certified", support, via=names,
                                   reason=f"the tuple ({','.join(names)}) is conserved and confining at the probed scales",
                                   attempts=attempts)
            attempts.append({"candidate": ",".join(names), "stage": "confining", "verdict": v.verdict})
    adv = composition_futility(last_verdict) if last_verdict is not None else None
    if adv is not None:
        advisories.append(adv.to_json())
    return Certificate(sys.name, "Inconclusive", chain, reason="no conserved candidate or tuple is confining at the probed scales",
                       attempts=attempts, advisories=advisories)


# --------------------------------------------------------------------------
# ghost probe


@dataclass(frozen=True)
class GhostReport:
    verdict: str  # GhostEvidence | BoundedBelowEvidence | BoundedAboveEvidence | Inconclusive
    witness_high: dict | None
    witness_low: dict | None
    highest: float
    lowest: float
    threshold: float
    scales: tuple[float, ...]
    skipped: int
    caveat: str = GHOST_CAVEAT

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "witness_high": self.witness_high,
            "witness_low": self.witness_low,
            "highest_value": self.highest,
            "lowest_value": self.lowest,
            "threshold": self.threshold,
            "scales": list(self.scales),
            "skipped_samples": self.skipped,
            "caveat": self.caveat,
        }


def _safe(f, x) -> float:
    try:
        v = f(x)[0]
    except (ValueError, ZeroDivisionError, OverflowError):
        return math.nan
    return float(v)


def _climb(f, g, x, sign: float, steps: int, threshold: float, step0: float):
    """Backtracking line search along ``sign * grad``; stops past the threshold."""
    fx = _safe(f, x)
    t = step0
    for _ in range(steps):
        if sign * fx > threshold:
            break
        try:
            gr = np.array(g(x), dtype=float)
        except (ValueError, ZeroDivisionError, OverflowError):
            break
        n = np.linalg.norm(gr)
        if not np.isfinite(n) or n == 0.0:
            break
        d = sign * gr / n
        moved = False
        while t > 1e-12 * (1.0 + np.linalg.norm(x)):
            y = x + t * d
            fy = _safe(f, y)
            if math.isfinite(fy) and sign * fy > sign * fx:
                x, fx, moved = y, fy, True
                t *= 2.0
                break
            t *= 0.5
        if not moved:
            break
    return x, fx


def ghost_probe(
    sys: SystemDef,
    scales: Sequence[float] = (1.0, 10.0, 100.0, 1000.0),
    n_samples: int = 512,
    steps: int = 200,
    threshold: float = 1e6,
    n_starts: int = 4,
) -> GhostReport:
    """Search for states with ``H > threshold`` and ``H < -threshold``.

    Halton samples in boxes of growing half-width seed a gradient ascent and
    a descent. The search is unconstrained once started; witnesses record the
    state, the value and the box the search started from.
    """
    H = sys.hamiltonian
    hv = ex.compile_vector([H], sys.variables, sys.periodic)
    f = ex.compile_scalar([H], sys.variables, sys.periodic)
    g = ex.compile_scalar(ex.gradient(H, sys.variables), sys.variables, sys.periodic)
    high = low = None
    hi_val, lo_val = -math.inf, math.inf
    skipped = 0
    probed = []
    for L in scales:
        probed.append(float(L))
        pts = sample_points([0.0] * sys.dim, [L] * sys.dim, n_samples, sys.periodic)
        vals = hv(pts.T)[0]
        ok = np.isfinite(vals)
        skipped += int(np.count_nonzero(~ok))
        if not ok.any():
            continue
        good, gv = pts[ok], vals[ok]
        order = np.argsort(gv, kind="stable")
        hi_val, lo_val = max(hi_val, float(gv[order[-1]])), min(lo_val, float(gv[order[0]]))
        for sign, starts in ((1.0, order[::-1][:n_starts]), (-1.0, order[:n_starts])):
            if (high if sign > 0 else low) is not None:
                continue
            for k in starts:
                x, fx = _climb(f, g, good[k].copy(), sign, steps, threshold, float(L))
                if not math.isfinite(fx):
                    continue
                if sign > 0:
                    hi_val = max(hi_val, fx)
                else:
                    lo_val = min(lo_val, fx)
                if sign * fx > threshold:
                    w = {"state": [float(v) for v in x], "value": float(fx), "scale": float(L)}
                    if sign > 0:
                        high = w
                    else:
                        low = w
                    break
        if high is not None and low is not None:
            break
    if high is not None and low is not None:
        verdict = "GhostEvidence"
    elif high is not None:
        verdict = "BoundedBelowEvidence"
    elif low is not None:
        verdict = "BoundedAboveEvidence"
    else:
        verdict = "Inconclusive"
    return GhostReport(verdict, high, low, hi_val, lo_val, float(threshold), tuple(probed), skipped)


def ghost_certificate(sys: SystemDef, config: AnalysisConfig | None = None) -> tuple[Certificate, GhostReport]:
    cfg = config or AnalysisConfig()
    if not sys.is_hamiltonian:
        raise DefinitionError(f"{sys.name} has no Hamiltonian")
    ev, rep = _run(sys, "H is unbounded above and below", "ghost_search",
                   {"scales": list(cfg.ghost_scales), "samples": cfg.ghost_samples, "steps": cfg.ghost_steps,
                    "threshold": cfg.ghost_threshold},
                   tolerance=cfg.ghost_threshold, scale=cfg.ghost_scales[-1])
    verdict = "GhostEvidence" if rep.verdict == "GhostEvidence" else "Inconclusive"
    reason = {
        "GhostEvidence": "H exceeds the threshold in both directions",
        "BoundedBelowEvidence": "no state with H below -threshold was found",
        "BoundedAboveEvidence": "no state with H above +threshold was found",
        "Inconclusive": "H stays within the threshold at every probed scale",
    }[rep.verdict]
    return Certificate(sys.name, verdict, [ev], reason=f"{reason}; {GHOST_CAVEAT}"), rep
