import math
import warnings

import pytest

from symstab import corpus
from symstab.config import AnalysisConfig
from symstab.runner import check_entry, observe
from symstab.system import DefinitionError

CASES = [(e.id, k) for e in corpus.ENTRIES.values() for k in range(len(e.expectations))]


@pytest.mark.parametrize("cid, k", CASES, ids=[f"{c}-{corpus.entry(c).expectations[k].analysis}" for c, k in CASES])
def test_documented_outcome(cid, k):
    entry = corpus.entry(cid)
    exp = entry.expectations[k]
    assert exp.provenance.split(":")[0] in ("worked-example", "derived", "trivial")
    assert observe(entry.build(), entry, exp) == exp.expected


def test_every_entry_has_expectations_and_seeds():
    for e in corpus.ENTRIES.values():
        assert e.expectations
        assert e.seeds
        sys = e.build()
        assert all(len(s) == sys.dim for s in e.seeds)


def test_builtin_examples():
    assert corpus.builtin("harmonic_oscillator").dim == 2
    assert corpus.builtin("pais_uhlenbeck").parameters == {"w1": 1.0, "w2": 2.0}
    assert corpus.builtin("kronecker").parameters["alpha"] == math.sqrt(2)
    assert corpus.builtin("kronecker").periodic == (True, True)


@pytest.mark.parametrize("kw", [{"omega1": 1.0, "omega2": 1.0}, {"omega1": 0.0, "omega2": 2.0},
                                {"omega1": -1.0, "omega2": 2.0}])
def test_pais_uhlenbeck_rejects_bad_frequencies(kw):
    with pytest.raises(DefinitionError):
        corpus.builtin("pais_uhlenbeck", **kw)


def test_rational_kronecker_slope_warns():
    with pytest.warns(corpus.RationalSlopeWarning):
        corpus.builtin("kronecker", alpha=1.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        corpus.builtin("kronecker", alpha=(1 + math.sqrt(5)) / 2)


def test_unknown_id():
    with pytest.raises(KeyError, match="unknown corpus id"):
        corpus.builtin("nope")


def test_unknown_analysis_key():
    e = corpus.entry("harmonic_oscillator")
    with pytest.raises(ValueError):
        observe(e.build(), e, corpus.Expectation("teleport", "x", "trivial"))


def test_check_entry_reports():
    results = check_entry(corpus.entry("harmonic_oscillator"), AnalysisConfig())
    assert all(r.passed for r in results)
    doc = results[0].to_json()
    assert doc["kind"] == "expectation" and doc["passed"] is True
