"""Evaluate the expectation tables shipped with the corpus."""

from __future__ import annotations

from dataclasses import dataclass

from .arnold import classify_level_set, iff_assessment
from .classify import certify_g1, classify_system, ghost_certificate
from .config import AnalysisConfig
from .conserved import bracket_reports, conservation_residual, sample_points
from .corpus import CorpusEntry, Expectation
from .levelset import confining_probe, properness_probe, sum_of_squares_equivalence
from .system import SystemDef

__all__ = ["ExpectationResult", "observe", "check_entry"]


@dataclass(frozen=True)
class ExpectationResult:
    entry: str
    analysis: str
    expected: str
    observed: str
    provenance: str

    @property
    def passed(self) -> bool:
        return self.observed == self.expected

    def to_json(self) -> dict:
        return {
            "kind": "expectation",
            "entry": self.entry,
            "analysis": self.analysis,
            "expected": self.expected,
            "observed": self.observed,
            "provenance": self.provenance,
            "passed": self.passed,
        }


def _level_qs(sys: SystemDef, entry: CorpusEntry):
    names = entry.level_qs or tuple(n for n, _ in sys.conserved)
    return [(n, sys.candidate(n)) for n in names]


def observe(sys: SystemDef, entry: CorpusEntry, exp: Expectation, config: AnalysisConfig | None = None) -> str:
    """Run one analysis and render its outcome in the expectation vocabulary."""
    cfg = config or AnalysisConfig()
    seeds = list(cfg.seeds or entry.seeds)
    horizon = cfg.horizon or entry.horizon
    kind, _, arg = exp.analysis.partition(":")
    if kind == "certify":
        cert = certify_g1(sys, seeds, cfg)
        if cert.verdict == "G1Certified":
            return f"G1Certified:{','.join(cert.via)}"
        return cert.verdict + ("+futility" if cert.advisories else "")
    if kind == "classify":
        res = classify_system(sys, seeds, horizon, bool(exp.options.get("backward")), cfg)
        return res.certificate.verdict if arg == "verdict" else res.classification
    if kind == "ghost":
        return ghost_certificate(sys, cfg)[1].verdict
    if kind == "confining":
        v = confining_probe(sys, [sys.candidate(arg)], seeds, scales=cfg.scales, resolution=cfg.resolution,
                            map_name=arg, budget=cfg.budget)
        return v.verdict
    if kind == "properness":
        name, _, k = arg.partition(":")
        a, b = (float(v) for v in k.split(","))
        return properness_probe(sys, [sys.candidate(name)], [(a, b)], cfg.scales, cfg.resolution,
                                map_name=name, budget=cfg.budget).verdict
    if kind == "residual":
        pts = sample_points([0.0] * sys.dim, [cfg.sample_half_width] * sys.dim, cfg.sample_count, sys.periodic)
        rep = conservation_residual(sys, sys.parse(arg), pts, cfg.conservation_tol, arg)
        return ">=0.5" if rep.max_residual >= 0.5 else f"{rep.max_residual:.3g}"
    if kind == "brackets":
        pts = sample_points([0.0] * sys.dim, [cfg.sample_half_width] * sys.dim, cfg.sample_count, sys.periodic)
        reps = bracket_reports(sys, list(sys.bound_conserved), pts, cfg.bracket_tol)
        return "involution" if all(r.passed for r in reps) else "not_involution"
    if kind == "sos":
        rep = sum_of_squares_equivalence(sys, _level_qs(sys, entry), scales=cfg.scales, resolution=cfg.resolution)
        verdicts = {r["J"]["verdict"] for r in rep.rows}
        return ("agree:" if rep.agree else "disagree:") + ",".join(sorted(verdicts))
    if kind == "arnold":
        return classify_level_set(sys, _level_qs(sys, entry), seeds[0], horizon, cfg.transient).label
    if kind == "iff":
        return iff_assessment(sys, _level_qs(sys, entry), seeds, horizon, cfg).outcome
    raise ValueError(f"unknown analysis {exp.analysis!r}")


def check_entry(entry: CorpusEntry, config: AnalysisConfig | None = None) -> list[ExpectationResult]:
    sys = entry.build()
    return [
        ExpectationResult(entry.id, e.analysis, e.expected, observe(sys, entry, e, config), e.provenance)
        for e in entry.expectations
    ]
