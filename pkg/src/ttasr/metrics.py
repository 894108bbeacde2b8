"""WER/CER scoring over modeling-unit tokens.

Word units are syllable-granular for every modeling unit: raw tokens for
the syllable and character inventories, and #-regrouped syllables for the
initial/final inventory (so all three systems are compared at the same
granularity). Character units are the per-character renderings of the two
syllable inventories; character-unit systems report no CER. Corpus rates
aggregate summed edit counts over summed reference lengths, never the
mean of per-utterance rates.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DegenerateInputError
from .tokenizer import SEPARATOR, Lexicon, ModelingUnit, to_units


@dataclass
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_len: int = 0

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def error_rate(self) -> float:
        if self.ref_len == 0:
            raise DegenerateInputError("error rate undefined for empty reference")
        return self.total / self.ref_len

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_len + other.ref_len,
        )


def edit_distance(ref, hyp) -> EditCounts:
    """Minimal substitutions+deletions+insertions aligning hyp to ref.

    Among minimal alignments the one with the most substitutions is
    chosen (substitutions preferred over insert+delete pairs), which
    makes the decomposition symmetric: swapping arguments exchanges
    deletions and insertions and preserves substitutions.
    """
    ref, hyp = list(ref), list(hyp)
    m, n = len(ref), len(hyp)
    # DP over (cost, -substitutions), lexicographic
    cost = [[0] * (n + 1) for _ in range(m + 1)]
    subs = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        cost[i][0] = i
    for j in range(1, n + 1):
        cost[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            mismatch = ref[i - 1] != hyp[j - 1]
            best = (cost[i - 1][j - 1] + mismatch, -(subs[i - 1][j - 1] + mismatch))
            for c, s in (
                (cost[i - 1][j] + 1, -subs[i - 1][j]),
                (cost[i][j - 1] + 1, -subs[i][j - 1]),
            ):
                if (c, s) < best:
                    best = (c, s)
            cost[i][j], subs[i][j] = best[0], -best[1]
    total, s = cost[m][n], subs[m][n]
    deletions = (total - s + m - n) // 2
    insertions = (total - s - m + n) // 2
    return EditCounts(
        substitutions=s, deletions=deletions, insertions=insertions, ref_len=m
    )


def regroup_syllables(tokens) -> list[str] | None:
    """Join initial/final runs at # boundaries into syllable strings.

    Returns None when the structure is malformed: a dangling run after
    the last separator, an empty run, or a run longer than two tokens.
    """
    syllables = []
    run: list[str] = []
    for token in tokens:
        if token == SEPARATOR:
            if not 1 <= len(run) <= 2:
                return None
            syllables.append("".join(run))
            run = []
        else:
            run.append(token)
    if run:
        return None
    return syllables


@dataclass
class PairScore:
    wer: EditCounts
    cer: EditCounts | None
    malformed_hyp: bool = False


def score_pair(
    ref_text: str,
    hyp_tokens,
    unit: ModelingUnit,
    lexicon: Lexicon | None = None,
) -> PairScore:
    """Score one hypothesis token sequence against a reference transcript."""
    ref_tokens = to_units(ref_text, unit, lexicon)
    hyp_tokens = list(hyp_tokens)

    if unit is ModelingUnit.CHARACTER:
        return PairScore(wer=edit_distance(ref_tokens, hyp_tokens), cer=None)

    if unit is ModelingUnit.SYLLABLE_TONE:
        wer = edit_distance(ref_tokens, hyp_tokens)
        # one syllable token per character, so character units coincide
        return PairScore(wer=wer, cer=edit_distance(ref_tokens, hyp_tokens))

    ref_syllables = regroup_syllables(ref_tokens)
    hyp_syllables = regroup_syllables(hyp_tokens)
    if hyp_syllables is None:
        # malformed separator structure: score raw tokens, flag it
        wer = edit_distance(ref_tokens, hyp_tokens)
        return PairScore(wer=wer, cer=edit_distance(ref_tokens, hyp_tokens),
                         malformed_hyp=True)
    wer = edit_distance(ref_syllables, hyp_syllables)
    return PairScore(wer=wer, cer=edit_distance(ref_syllables, hyp_syllables))


def aggregate(counts) -> EditCounts:
    """Sum edit counts; the rate of the sum is the corpus error rate."""
    total = EditCounts()
    for c in counts:
        total = total + c
    return total


def format_rate(counts: EditCounts | None) -> str:
    if counts is None:
        return "NA"
    return f"{100.0 * counts.error_rate:.2f}"


def format_report(rows) -> str:
    """Tabulate (dataset, wer_counts, cer_counts_or_None) rows plus a
    pooled Average row, percentages with two decimals, NA where CER is
    not defined."""
    rows = list(rows)
    lines = [f"{'Dataset':<20} {'WER(%)':>8} {'CER(%)':>8}"]
    for name, wer, cer in rows:
        lines.append(f"{name:<20} {format_rate(wer):>8} {format_rate(cer):>8}")
    if len(rows) > 1:
        avg_wer = aggregate(w for _, w, _ in rows)
        cers = [c for _, _, c in rows if c is not None]
        avg_cer = aggregate(cers) if cers else None
        lines.append(
            f"{'Average':<20} {format_rate(avg_wer):>8} {format_rate(avg_cer):>8}"
        )
    return "\n".join(lines)
