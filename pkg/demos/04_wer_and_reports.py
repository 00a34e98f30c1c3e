"""
Scoring transcriptions and rendering reports
============================================

Word error rate counts the minimal substitutions, deletions and insertions
against the reference, pooled over a corpus as total errors / total words.
Relative reduction compares a method's best WER across context sizes to the
zero-shot baseline. The report renderer lays the numbers out one dataset
per column with the reduction row at the bottom of each method block.
"""

from ticl import EvalReport, compute_delta_rel, corpus_wer, normalize_text, word_error_rate
from ticl import relative_reduction, render_report

# Text normalization: lowercase, punctuation stripped except intra-word
# apostrophes, whitespace collapsed.
print(normalize_text("The cat, sat."), normalize_text("don't  stop"))

# Per-utterance counts: the hypothesis dropped one word and substituted one.
ref = normalize_text("the little dog ran far away")
hyp = normalize_text("the little dog runs far")
counts = word_error_rate(ref, hyp)
print(f"S={counts.substitutions} D={counts.deletions} I={counts.insertions} wer={counts.wer:.3f}")

# Corpus WER pools errors over reference words, so long utterances weigh more.
pairs = [
    (normalize_text("one two three four"), normalize_text("one two three four")),
    (normalize_text("five six seven"), normalize_text("five six")),
]
print(f"corpus WER: {corpus_wer(pairs):.2f}%")

# A method that takes WER from 16.17 down to 7.55 cut errors by more than half.
print(f"relative reduction: {relative_reduction(16.17, 7.55):.1f}%")

# A sweep report is a cell table (dataset, method, k) -> WER percent; the
# "best" rows carry each method's best-over-k reduction vs zero-shot.
cells = {
    ("demo", "zero_shot", 0): 18.40,
    ("demo", "ticl", 1): 15.10,
    ("demo", "ticl", 2): 14.20,
    ("demo", "ticl_plus", 1): 12.75,
    ("demo", "ticl_plus", 2): 11.90,
}
report = EvalReport(cells=cells, delta_rel=compute_delta_rel(cells))
print()
print(render_report(report, "aligned_text"))
print(render_report(report, "csv"))
