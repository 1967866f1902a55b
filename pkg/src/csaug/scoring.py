"""Word error rate and embedded-language word accuracy.

Both metrics share one minimum-edit alignment with unit costs. Where several
alignments are optimal the backtrace prefers, in order: match, substitution,
deletion, insertion.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

MATCH, SUB, DEL, INS = "=", "S", "D", "I"
TAG_SEP = "|"


@dataclass(frozen=True)
class WerReport:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    hits: int = 0

    @property
    def ref_words(self) -> int:
        return self.substitutions + self.deletions + self.hits

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer_percent(self) -> float:
        if self.ref_words == 0:
            raise ValueError("WER is undefined for an empty reference")
        return 100.0 * self.errors / self.ref_words

    def __add__(self, other: WerReport) -> WerReport:
        return WerReport(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.hits + other.hits,
        )

    def to_dict(self) -> dict:
        return {
            "substitutions": self.substitutions,
            "insertions": self.insertions,
            "deletions": self.deletions,
            "hits": self.hits,
            "ref_words": self.ref_words,
            "wer_percent": round(self.wer_percent, 2) if self.ref_words else None,
        }


def tokenize(text: str | Sequence[str]) -> list[str]:
    return text.split() if isinstance(text, str) else list(text)


def align(ref: Sequence[str], hyp: Sequence[str]) -> list[tuple[str, int | None, int | None]]:
    """Optimal alignment as ``(op, ref_index, hyp_index)`` triples in order."""
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev, r = dist[i], dist[i - 1], ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (r != hyp[j - 1])
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        d = dist[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and d == dist[i - 1][j - 1]:
            ops.append((MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d == dist[i - 1][j - 1] + 1:
            ops.append((SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and d == dist[i - 1][j] + 1:
            ops.append((DEL, i - 1, None))
            i -= 1
        else:
            ops.append((INS, None, j - 1))
            j -= 1
    ops.reverse()
    return ops


def counts(ref: Sequence[str], hyp: Sequence[str]) -> WerReport:
    tally = {MATCH: 0, SUB: 0, DEL: 0, INS: 0}
    for op, _, _ in align(ref, hyp):
        tally[op] += 1
    return WerReport(tally[SUB], tally[INS], tally[DEL], tally[MATCH])


def wer(ref: str | Sequence[str], hyp: str | Sequence[str]) -> WerReport:
    ref_w, hyp_w = tokenize(ref), tokenize(hyp)
    if not ref_w:
        raise ValueError("WER is undefined for an empty reference")
    return counts(ref_w, hyp_w)


@dataclass(frozen=True)
class TaggedReference:
    words: tuple[tuple[str, str | None], ...]

    @classmethod
    def parse(cls, text: str, default_lang: str | None = None) -> TaggedReference:
        """Parse ``word|lang`` tokens; untagged words get ``default_lang``."""
        words = []
        for tok in text.split():
            word, sep, lang = tok.rpartition(TAG_SEP)
            if sep and word and lang:
                words.append((word, lang))
            else:
                words.append((tok, default_lang))
        return cls(tuple(words))

    @property
    def plain(self) -> list[str]:
        return [w for w, _ in self.words]


def embedded_accuracy(ref: TaggedReference, hyp: str | Sequence[str], target_lang: str) -> float:
    """Percentage of ``target_lang`` reference words aligned to an identical hyp word.

    Only surface forms are compared, whatever language the hypothesis word
    might belong to.
    """
    tagged = [i for i, (_, lang) in enumerate(ref.words) if lang == target_lang]
    if not tagged:
        raise ValueError(f"reference has no words tagged {target_lang!r}")
    matched = {ri for op, ri, _ in align(ref.plain, tokenize(hyp)) if op == MATCH}
    return 100.0 * sum(i in matched for i in tagged) / len(tagged)


def embedded_counts(ref: TaggedReference, hyp: str | Sequence[str], target_lang: str) -> tuple[int, int]:
    """``(correct, total)`` target-language words; total may be zero."""
    tagged = [i for i, (_, lang) in enumerate(ref.words) if lang == target_lang]
    matched = {ri for op, ri, _ in align(ref.plain, tokenize(hyp)) if op == MATCH}
    return sum(i in matched for i in tagged), len(tagged)


def read_transcripts(path: str | Path) -> dict[str, str]:
    """Read ``utterance-id<TAB>text`` lines."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            utt_id, sep, text = line.partition("\t")
            if not sep:
                utt_id, _, text = line.partition(" ")
            if utt_id in out:
                raise ValueError(f"{path}: line {lineno}: duplicate id {utt_id!r}")
            out[utt_id] = text
    return out


def dataset_report(
    refs: Mapping[str, str],
    hyps: Mapping[str, str],
    sets: Mapping[str, str] | None = None,
    languages: Mapping[str, str] | None = None,
    embedded_lang: str | None = None,
    normalize: Callable[[str], str] | None = None,
) -> dict:
    """Pooled WER over a dataset, with optional per-set and per-language breakdowns.

    ``refs`` may carry ``word|lang`` tags; they are stripped for WER. ``sets``
    maps utterance ids to a test-set name, ``languages`` to a language
    code. Aggregates sum the integer counts before dividing.
    """
    missing = sorted(set(refs) - set(hyps))
    extra = sorted(set(hyps) - set(refs))
    if missing or extra:
        offending = (missing or extra)[0]
        raise KeyError(
            f"reference/hypothesis ids differ: {len(missing)} without hypothesis, "
            f"{len(extra)} without reference (e.g. {offending!r})"
        )
    norm = normalize or (lambda s: s)
    total = WerReport()
    per_set: dict[str, WerReport] = {}
    comp: dict[str, int] = {}
    emb_ok = emb_n = 0
    for utt_id in sorted(refs):
        tagged = TaggedReference.parse(norm(refs[utt_id]))
        hyp = tokenize(norm(hyps[utt_id]))
        rep = counts(tagged.plain, hyp)
        total += rep
        if sets is not None:
            name = sets.get(utt_id, "")
            per_set[name] = per_set.get(name, WerReport()) + rep
        if languages is not None and utt_id in languages:
            comp[languages[utt_id]] = comp.get(languages[utt_id], 0) + rep.ref_words
        else:
            for _, lang in tagged.words:
                if lang is not None:
                    comp[lang] = comp.get(lang, 0) + 1
        if embedded_lang is not None:
            ok, n = embedded_counts(tagged, hyp, embedded_lang)
            emb_ok, emb_n = emb_ok + ok, emb_n + n
    if total.ref_words == 0:
        raise ValueError("WER is undefined: references contain no words")
    report = {"utterances": len(refs), "overall": total.to_dict()}
    if sets is not None:
        report["per_set"] = {k: v.to_dict() for k, v in sorted(per_set.items())}
    if comp:
        n = sum(comp.values())
        report["language_composition"] = {k: v / n for k, v in sorted(comp.items())}
    if embedded_lang is not None:
        if emb_n == 0:
            raise ValueError(f"no reference words tagged {embedded_lang!r}")
        report["embedded_accuracy"] = {
            "lang": embedded_lang,
            "correct": emb_ok,
            "total": emb_n,
            "percent": round(100.0 * emb_ok / emb_n, 2),
        }
    return report


def pooled(reports: Iterable[WerReport]) -> WerReport:
    total = WerReport()
    for r in reports:
        total += r
    return total
