"""Levenshtein alignment and pooled symbol error rates."""
from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass
class EvalReport:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_token_count: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def error_rate(self) -> float:
        if self.ref_token_count == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.ref_token_count

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.substitutions + other.substitutions,
                          self.insertions + other.insertions,
                          self.deletions + other.deletions,
                          self.ref_token_count + other.ref_token_count)

    def as_dict(self) -> dict:
        return {**asdict(self), "errors": self.errors, "error_rate": self.error_rate}


def edit_distance(ref, hyp) -> EvalReport:
    """Unit-cost edit alignment of ``hyp`` against ``ref``.

    Among equal-cost alignments the backtrace prefers a substitution, then an
    insertion, then a deletion, which fixes the S/I/D split.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    D = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        D[i][0] = i
    for j in range(1, m + 1):
        D[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i][j] = min(D[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]),
                          D[i][j - 1] + 1, D[i - 1][j] + 1)
    S = I = Dl = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i][j] == D[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            S += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and D[i][j] == D[i][j - 1] + 1:
            I += 1
            j -= 1
        else:
            Dl += 1
            i -= 1
    return EvalReport(S, I, Dl, n)


def corpus_error_rate(refs: dict, hyps: dict) -> EvalReport:
    """Pool S, I, D and reference counts over utterances keyed by id."""
    if set(refs) != set(hyps):
        missing = sorted(set(refs) ^ set(hyps))
        raise ValueError(f"reference and hypothesis ids differ: {missing[:5]}")
    total = EvalReport()
    for uid in refs:
        total = total + edit_distance(refs[uid], hyps[uid])
    return total
