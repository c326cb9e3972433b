"""The eight acceptance criteria, one test each, with a pass/fail line per criterion."""

import copy
import json
import math
from dataclasses import replace

import numpy as np

from symstab import corpus
from symstab import expr as ex
from symstab.arnold import classify_level_set, drift_rate, iff_assessment
from symstab.classify import certify_g1, classify_system, ghost_certificate, replay
from symstab.cli import run
from symstab.conserved import bracket_expr, bracket_reports, conservation_residual, sample_points
from symstab.integrate import integrate_symplectic
from symstab.levelset import (
    ProbeBox,
    component_flood_fill,
    composition_futility,
    confining_probe,
    properness_probe,
    sum_of_squares_equivalence,
)
from symstab.system import SymplecticStructure

import oracles


def verdict_line(capsys, n, title, checks):
    failed = [name for name, ok in checks if not ok]
    status = "PASS" if not failed else "FAIL"
    with capsys.disabled():
        print(f"\n[{status}] criterion {n}: {title}" + (f" (failed: {', '.join(failed)})" if failed else ""))
    assert not failed, failed


def seeds_of(cid):
    return list(corpus.entry(cid).seeds)


def test_criterion_1_harmonic_oscillator(capsys):
    ho = corpus.builtin("harmonic_oscillator")
    cert = certify_g1(ho, seeds_of("harmonic_oscillator"))
    traj = integrate_symplectic(ho, [1.0, 0.0], 0.01, 10**6, store_every=1000)
    E = 0.5 * (traj.states**2).sum(axis=1)
    rel_drift = float(np.abs(E - E[0]).max() / E[0])
    res = classify_system(ho, seeds_of("harmonic_oscillator"), 1000.0)
    verdict_line(capsys, 1, "harmonic oscillator certified, energy drift bounded, classified Bounded", [
        ("certify G1Certified via H", cert.verdict == "G1Certified" and cert.via == ("H",)),
        ("1e6-step relative energy drift <= 1e-4", rel_drift <= 1e-4 and traj.t[-1] == 1e4),
        ("classify Bounded", res.classification == "Bounded"),
    ])


def test_criterion_2_free_particle(capsys):
    fp = corpus.builtin("free_particle")
    res = classify_system(fp, seeds_of("free_particle"), 1e5)
    v = confining_probe(fp, [fp.hamiltonian], seeds_of("free_particle"), map_name="H")
    reports = v.outcomes[0].reports
    adv = composition_futility(v)
    verdict_line(capsys, 2, "free particle escapes, level line touches every box, futility advisory", [
        ("classify EscapeNoBlowup", res.classification == "EscapeNoBlowup"),
        ("touches_boundary at every scale",
         len(reports) == len(v.scales) and all(r.touches_boundary for r in reports)),
        ("composition-futility advisory", adv is not None and adv.kind == "confining"),
    ])


def test_criterion_3_quadratic_blowup(capsys):
    x3 = corpus.builtin("quadratic_blowup")
    res = classify_system(x3, [(6.0, -12.0)], 2.0, backward=True)
    term = res.classes[0].termination
    traj = res.trajectories[0]
    q, v = oracles.quadratic_blowup(traj.t)
    exact = np.stack([q, v], axis=1)
    rel_err = float((np.abs(traj.states - exact) / (1 + np.abs(exact))).max())
    verdict_line(capsys, 3, "backward blow-up of (v, q^2) matches 6/(t+1)^2", [
        ("BlowupWitness", res.certificate.verdict == "BlowupWitness"),
        ("t_est = -1 +- 0.05", abs(term["t_est"] - oracles.QUADRATIC_BLOWUP_TIME) <= 0.05),
        ("alpha_q = 2 +- 0.3", abs(term["component_alpha"]["q"] - oracles.QUADRATIC_BLOWUP_EXPONENT_Q) <= 0.3),
        ("trajectory agrees with the analytic oracle", rel_err <= 1e-6),
    ])


def test_criterion_4_sin_r2(capsys):
    s = corpus.builtin("sin_r2")
    f = s.candidate("f")
    seeds = [(r, 0.0) for r in oracles.SIN_R2_RADII.values()]
    v = confining_probe(s, [f], seeds, map_name="f")
    mus = sorted(round(o.mu[0], 9) for o in v.outcomes)
    p = properness_probe(s, [f], [(-1.0, 1.0)], map_name="f")
    verdict_line(capsys, 4, "sin(x^2 + y^2) is confining but not proper", [
        ("ConfiningEvidence at mu in {0, 0.5, 1}", v.verdict == "ConfiningEvidence" and mus == [0.0, 0.5, 1.0]),
        ("NotProperEvidence for K = [-1, 1]", p.verdict == "NotProperEvidence"),
    ])


def test_criterion_5_kronecker(capsys):
    k = corpus.builtin("kronecker")
    res = classify_system(k, seeds_of("kronecker"), 1000.0)
    slopes = [drift_rate(tr) for tr in res.trajectories]
    slope_err = max(float(np.abs(s - [1.0, math.sqrt(2)]).max()) for s in slopes)
    pts = sample_points([0.0, 0.0], [1.0, 1.0], 1000, k.periodic)
    r = conservation_residual(k, ex.parse("sin(theta1)"), pts)
    verdict_line(capsys, 5, "Kronecker flow bounded with slopes (1, sqrt 2), no angle invariant", [
        ("Bounded", res.classification == "Bounded"),
        ("slopes within 1e-6", slope_err <= 1e-6),
        ("sin(theta1) residual >= 0.5 somewhere", r.max_residual >= 0.5 and not r.passed),
    ])


def test_criterion_6_pais_uhlenbeck(capsys):
    pu = corpus.builtin("pais_uhlenbeck")
    gcert, g = ghost_certificate(pu)
    cert = certify_g1(pu, seeds_of("pais_uhlenbeck"))
    h_attempt = [a for a in cert.attempts if a["candidate"] == "H"]
    pts = sample_points([0.0] * 4, [2.0] * 4, 1000)
    (br,) = bracket_reports(pu, list(pu.bound_conserved), pts)
    sos = sum_of_squares_equivalence(pu, list(pu.bound_conserved))
    verdict_line(capsys, 6, "ghost oscillator: ghost H, certified by (Q1, Q2) and not by H", [
        ("GhostEvidence with witnesses beyond +-1e6",
         gcert.verdict == "GhostEvidence" and g.witness_high["value"] >= 1e6 and g.witness_low["value"] <= -1e6),
        ("G1Certified via (Q1, Q2)", cert.verdict == "G1Certified" and cert.via == ("Q1", "Q2")),
        ("H alone not confining", bool(h_attempt) and h_attempt[0]["verdict"] == "NotConfiningAtScale"),
        ("max |{Q1, Q2}| <= 1e-8", br.max_abs <= 1e-8),
        ("sum of squares agrees, both proper",
         sos.agree and all(r["J"]["verdict"] == "ProperEvidence" for r in sos.rows)),
    ])


def test_criterion_7_arnold_suite(capsys):
    def qs(cid, sys):
        return [(n, sys.candidate(n)) for n in corpus.entry(cid).level_qs]

    op = corpus.builtin("oscillator_pair")
    torus = classify_level_set(op, qs("oscillator_pair", op), seeds_of("oscillator_pair")[0])
    iff_torus = iff_assessment(op, qs("oscillator_pair", op), seeds_of("oscillator_pair"))
    po = corpus.builtin("particle_oscillator")
    x0 = seeds_of("particle_oscillator")[0]
    cyl = classify_level_set(po, qs("particle_oscillator", po), x0)
    rates = cyl.drift_rates.get("K1", [math.nan])
    iff_cyl = iff_assessment(po, qs("particle_oscillator", po), [x0])
    xb = corpus.builtin("quadratic_blowup", hamiltonian=True)
    inc = classify_level_set(xb, [("H", xb.hamiltonian)], (6.0, 12.0), T=5.0)
    iff_inc = iff_assessment(xb, [("H", xb.hamiltonian)], [(6.0, 12.0)], T=5.0)
    verdict_line(capsys, 7, "torus, cylinder and incomplete-flow cases", [
        ("oscillator_pair TorusEvidence", torus.label == "TorusEvidence"),
        ("particle_oscillator CylinderEvidence k=1", cyl.label == "CylinderEvidence:k=1"),
        ("drift rate = p1 +- 1e-6", abs(rates[0] - x0[2]) <= 1e-6),
        ("iff torus case g1_positive", iff_torus.outcome == "g1_positive"),
        ("iff cylinder case not G1", iff_cyl.outcome == "not_g1_cylinder_drift"),
        ("blow-up symmetry IncompleteFlow",
         inc.classification == "IncompleteFlow" and iff_inc.outcome == "inapplicable_incomplete_flows"),
    ])


def _bracket_identities(rng, n=200):
    v = ("q1", "q2", "p1", "p2")
    s = SymplecticStructure.canonical(2)
    F = ex.parse("q1^2*p2 + 3*q2*p1 - p1^2")
    G = ex.parse("q1*q2 - 2*p2^2 + p1*q2^2")
    K = ex.parse("p1*p2 + q1^2 - q2")

    def br(a, b):
        return bracket_expr(a, b, s, v)

    def at(e, x):
        return ex.evaluate(e, dict(zip(v, x)))

    ok_anti = ok_leib = ok_jac = True
    for x in rng.uniform(-2, 2, size=(n, 4)):
        a, b = at(br(F, G), x), at(br(G, F), x)
        ok_anti &= abs(a + b) <= 1e-10 * (1 + abs(a))
        lhs = at(br(F, ex.BinOp("*", G, K)), x)
        t1, t2 = at(br(F, G), x) * at(K, x), at(G, x) * at(br(F, K), x)
        ok_leib &= abs(lhs - t1 - t2) <= 1e-9 * (1 + abs(t1) + abs(t2))
        terms = [at(br(A, br(B, C)), x) for A, B, C in ((F, G, K), (G, K, F), (K, F, G))]
        ok_jac &= abs(sum(terms)) <= 1e-9 * (1 + max(abs(t) for t in terms))
    return ok_anti, ok_leib, ok_jac


def _derivatives_agree(rng, n=200):
    e = ex.parse("sin(x*y) + exp(-x^2)*log(2 + y^2) - sqrt(1 + x^4)/(3 + cos(y))")
    dx = ex.diff(e, "x")
    for x, y in rng.uniform(-3, 3, size=(n, 2)):
        h = 1e-6 * (1 + abs(x))
        fd = oracles.central_difference(lambda s: ex.evaluate(e, {"x": s, "y": y}), x, h)
        val = ex.evaluate(dx, {"x": x, "y": y})
        if abs(val - fd) > 1e-6 * (1 + abs(val)):
            return False
    return True


def _fill(sys, name, seed, L, res):
    F = [sys.candidate(name)]
    mu = [ex.evaluate(F[0], dict(zip(sys.variables, seed)))]
    return component_flood_fill(sys, F, mu, seed, ProbeBox.around([0.0] * sys.dim, L, res, sys.periodic))


def _flood_fill_properties():
    cases = [("harmonic_oscillator", "H", (1.0, 0.0)), ("free_particle", "H", (0.0, 1.0)),
             ("sin_r2", "f", (math.sqrt(math.pi / 2), 0.0))]
    monotone = stable = True
    for cid, name, seed in cases:
        sys = corpus.builtin(cid)
        counts = [_fill(sys, name, seed, L, r).cell_count for L, r in ((2.0, 256), (4.0, 512), (8.0, 1024))]
        monotone &= counts == sorted(counts)
        reps = [_fill(sys, name, seed, 4.0, r) for r in (256, 512, 1024)]
        if not reps[0].touches_boundary:
            # the band is up to two cells wide at a critical level such as sin = 1
            errs = [abs(rp.bounding_radius - math.hypot(*seed)) for rp in reps]
            stable &= all(e <= 2 * rp.cell_diagonal for e, rp in zip(errs, reps))
            stable &= errs == sorted(errs, reverse=True)
            stable &= len({rp.touches_boundary for rp in reps}) == 1
        else:
            stable &= all(rp.touches_boundary for rp in reps)
    return monotone, stable


def _fault_injection():
    ho = corpus.builtin("harmonic_oscillator")
    cert = certify_g1(ho, [(1.0, 0.0)])
    flips = []
    for k in range(len(cert.evidence)):
        for change in ({"passed": False}, {"outcome": {**cert.evidence[k].outcome, "tampered": True}}):
            c = copy.deepcopy(cert)
            c.evidence[k] = replace(c.evidence[k], **change)
            flips.append(c.verdict == "Inconclusive")
    forged = copy.deepcopy(cert)
    forged.evidence[0] = replace(forged.evidence[0], inputs={**forged.evidence[0].inputs, "expr": "q^2"}).sealed()
    return cert.verdict == "G1Certified" and all(flips) and not all(replay(forged, ho))


def _deterministic():
    import io

    outs = []
    for _ in range(2):
        buf = io.StringIO()
        run(["classify", "free_particle"], stdout=buf)
        doc = json.loads(buf.getvalue())
        doc["certificate"]["timestamp"] = ""
        outs.append(json.dumps(doc, sort_keys=True))
    return outs[0] == outs[1]


def test_criterion_8_property_suites(capsys):
    rng = np.random.default_rng(20240601)
    anti, leib, jac = _bracket_identities(rng)
    monotone, stable = _flood_fill_properties()
    verdict_line(capsys, 8, "bracket identities, derivatives, flood fill, fault injection, determinism", [
        ("bracket antisymmetry", anti),
        ("bracket Leibniz rule", leib),
        ("bracket Jacobi identity", jac),
        ("symbolic vs finite-difference derivatives", _derivatives_agree(rng)),
        ("flood-fill monotonicity", monotone),
        ("flood-fill refinement stability", stable),
        ("fault injection flips G1Certified to Inconclusive", _fault_injection()),
        ("reports deterministic", _deterministic()),
    ])
