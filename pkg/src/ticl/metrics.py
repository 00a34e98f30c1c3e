"""Word error rate and related scoring arithmetic.

WER counts the minimal substitutions, deletions and insertions turning the
reference into the hypothesis, divided by the reference length. The minimal
edit count does not by itself pin down the (S, D, I) split: ref "a b" against
hyp "b a" costs 2 either as two substitutions or as one deletion plus one
insertion. We canonicalize the split by maximizing the number of exactly
matching words among minimal-cost alignments (the convention of the standard
scoring tools); given cost and match count the triple is unique, so any two
correct implementations agree on it.

WER may exceed 100% for insertion-heavy hypotheses; clamping it would corrupt
relative-reduction arithmetic downstream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ConfigError, EmptyReference, NoValidPairs, ZeroBaseline

TEXT_NORM_POLICIES = ("default", "none")

_PUNCT_RE = re.compile(r"[^\w'\s]", flags=re.UNICODE)
_LONE_APOSTROPHE_RE = re.compile(r"(?<!\w)'|'(?!\w)", flags=re.UNICODE)


def normalize_text(s: str, policy: str = "default") -> list[str]:
    """Turn raw text into the word tokens WER is computed over.

    default: Unicode-lowercase, strip punctuation except intra-word
    apostrophes, collapse whitespace, split on spaces.
    none: split on whitespace only.
    """
    if policy == "none":
        return s.split()
    if policy != "default":
        raise ConfigError(f"unknown text normalization policy {policy!r}")
    s = s.lower()
    s = _PUNCT_RE.sub(" ", s)
    s = _LONE_APOSTROPHE_RE.sub(" ", s)
    return s.split()


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int
    wer: float

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def word_error_rate(
    reference: Sequence[str], hypothesis: Sequence[str]
) -> EditCounts:
    """Minimal-edit alignment counts and the WER fraction.

    Dynamic program over (cost, -matches) pairs, compared lexicographically;
    both components are additive along an alignment, so the usual recurrence
    applies. S, D, I are recovered in closed form from the optimal cost and
    match count. Raises EmptyReference for an empty reference (the division
    is undefined; callers exclude the pair and account for it as a failure).
    """
    n, m = len(reference), len(hypothesis)
    if n == 0:
        raise EmptyReference()
    # row[j] = (cost, -matches) for ref[:i] vs hyp[:j]
    row = [(j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        prev = row
        row = [(i, 0)] + [(0, 0)] * m
        ref_word = reference[i - 1]
        for j in range(1, m + 1):
            if ref_word == hypothesis[j - 1]:
                diag = (prev[j - 1][0], prev[j - 1][1] - 1)
            else:
                diag = (prev[j - 1][0] + 1, prev[j - 1][1])
            up = (prev[j][0] + 1, prev[j][1])  # deletion
            left = (row[j - 1][0] + 1, row[j - 1][1])  # insertion
            row[j] = min(diag, up, left)
    cost, neg_matches = row[m]
    matches = -neg_matches
    substitutions = n + m - 2 * matches - cost
    deletions = n - matches - substitutions
    insertions = m - matches - substitutions
    return EditCounts(
        substitutions=substitutions,
        deletions=deletions,
        insertions=insertions,
        wer=cost / n,
    )


def corpus_wer(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> float:
    """Pooled corpus WER percent: total errors over total reference words.

    Pairs with empty references are skipped (they are accounted for upstream
    as failures); with no valid pair at all, NoValidPairs is raised.
    """
    total_errors = 0
    total_words = 0
    for reference, hypothesis in pairs:
        if len(reference) == 0:
            continue
        counts = word_error_rate(reference, hypothesis)
        total_errors += counts.errors
        total_words += len(reference)
    if total_words == 0:
        raise NoValidPairs("corpus WER needs at least one non-empty reference")
    return 100.0 * total_errors / total_words


def mean_utterance_wer(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> float:
    """Alternative aggregation: unweighted mean of per-utterance WER, percent."""
    wers = []
    for reference, hypothesis in pairs:
        if len(reference) == 0:
            continue
        wers.append(word_error_rate(reference, hypothesis).wer)
    if not wers:
        raise NoValidPairs("corpus WER needs at least one non-empty reference")
    return 100.0 * sum(wers) / len(wers)


def relative_reduction(baseline_wer: float, method_wer: float) -> float:
    """Percent WER reduction of a method against a baseline.

    Positive when the method improves on the baseline, negative when it is
    worse, zero at parity. Undefined (ZeroBaseline) for a zero baseline.
    """
    if baseline_wer <= 0:
        raise ZeroBaseline(f"baseline WER must be positive, got {baseline_wer}")
    return 100.0 * (baseline_wer - method_wer) / baseline_wer
