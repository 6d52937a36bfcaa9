import functools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnseq.metrics import EvalReport, corpus_error_rate, edit_distance


def lev(a, b):
    """Textbook recursive definition, memoised."""

    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def sid(r):
    return r.substitutions, r.insertions, r.deletions


def test_examples():
    r = edit_distance(list("abc"), list("abc"))
    assert (*sid(r), r.errors) == (0, 0, 0, 0)
    r = edit_distance(list("abc"), [])
    assert sid(r) == (0, 0, 3) and r.error_rate == 1.0
    r = edit_distance([], list("ab"))
    assert sid(r) == (0, 2, 0)
    assert edit_distance(list("kitten"), list("sitting")).errors == 3


def test_tie_break_prefers_substitution():
    r = edit_distance(["a"], ["b"])
    assert sid(r) == (1, 0, 0)
    r = edit_distance(list("ab"), list("ba"))
    assert sid(r) == (2, 0, 0)


words = st.lists(st.sampled_from("abc"), max_size=7)


@settings(max_examples=300, deadline=None)
@given(words, words)
def test_matches_recursive_oracle(a, b):
    r = edit_distance(a, b)
    assert r.errors == lev(tuple(a), tuple(b))
    assert r.ref_token_count == len(a)
    assert r.substitutions + r.deletions <= len(a)
    assert r.substitutions + r.insertions <= len(b)
    assert len(a) - r.deletions + r.insertions == len(b)
    assert r.errors <= max(len(a), len(b))


@settings(max_examples=200, deadline=None)
@given(words, words, words)
def test_metric_axioms(a, b, c):
    ab = edit_distance(a, b).errors
    assert ab == edit_distance(b, a).errors
    assert (ab == 0) == (a == b)
    assert edit_distance(a, c).errors <= ab + edit_distance(b, c).errors


def test_corpus_rate_is_pooled():
    refs = {"u1": list("abcde"), "u2": list("abcde")}
    assert corpus_error_rate(refs, dict(refs)).error_rate == 0.0
    hyps = {"u1": list("abcdx"), "u2": list("abcde")}
    assert corpus_error_rate(refs, hyps).error_rate == pytest.approx(0.1)

    refs = {"long": list("abcdefghij"), "short": ["a"]}
    hyps = {"long": list("abcdefghij"), "short": ["b"]}
    pooled = corpus_error_rate(refs, hyps).error_rate
    mean = (0 / 10 + 1 / 1) / 2
    assert pooled == pytest.approx(1 / 11)
    assert pooled != pytest.approx(mean)


def test_corpus_id_mismatch():
    with pytest.raises(ValueError):
        corpus_error_rate({"a": ["x"]}, {"b": ["x"]})


def test_report_addition():
    tot = EvalReport(1, 2, 3, 10) + EvalReport(0, 1, 0, 5)
    assert tot.as_dict()["errors"] == 7
    assert tot.error_rate == pytest.approx(7 / 15)
    assert EvalReport(0, 0, 0, 0).error_rate == 0.0
    assert EvalReport(0, 2, 0, 0).error_rate == float("inf")
