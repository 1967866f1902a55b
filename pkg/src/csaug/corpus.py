"""Per-language corpus manifests.

A manifest file is UTF-8 JSON lines. The first line is a header object
``{"languages": [...], "source_name": "..."}``; every following line is one
utterance with exactly the fields ``id, lang, audio, duration_s, text``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

UTTERANCE_FIELDS = ("id", "lang", "audio", "duration_s", "text")
HEADER_FIELDS = ("languages", "source_name")


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest content."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Utterance:
    id: str
    lang: str
    audio: str
    duration_s: float
    text: str

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "lang": self.lang,
            "audio": self.audio,
            "duration_s": self.duration_s,
            "text": self.text,
        }


@dataclass(frozen=True)
class CorpusManifest:
    languages: frozenset[str]
    utterances: tuple[Utterance, ...]
    source_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "languages", frozenset(self.languages))
        object.__setattr__(self, "utterances", tuple(self.utterances))
        index: dict[str, int] = {}
        for i, utt in enumerate(self.utterances):
            if utt.id in index:
                raise ManifestError(f"duplicate utterance id {utt.id!r}")
            if utt.lang not in self.languages:
                raise ManifestError(
                    f"utterance {utt.id!r} has undeclared language {utt.lang!r}"
                )
            if not utt.duration_s > 0:
                raise ManifestError(
                    f"utterance {utt.id!r} has non-positive duration {utt.duration_s!r}"
                )
            index[utt.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, utt_id: str) -> Utterance:
        return self.utterances[self._index[utt_id]]

    def __contains__(self, utt_id: object) -> bool:
        return utt_id in self._index

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.utterances]

    @property
    def total_duration_s(self) -> float:
        return math.fsum(u.duration_s for u in self.utterances)

    def by_language(self) -> dict[str, list[Utterance]]:
        """Utterances grouped per language, in manifest order."""
        pools: dict[str, list[Utterance]] = {lang: [] for lang in sorted(self.languages)}
        for utt in self.utterances:
            pools[utt.lang].append(utt)
        return pools

    def map_text(self, fn: Callable[[str], str]) -> CorpusManifest:
        """Return a copy with every transcript passed through ``fn``.

        Transcripts are otherwise kept verbatim; this is the hook for casing
        or punctuation normalization before tokenization and scoring.
        """
        utts = [
            Utterance(u.id, u.lang, u.audio, u.duration_s, fn(u.text))
            for u in self.utterances
        ]
        return CorpusManifest(self.languages, utts, self.source_name)


def _parse_utterance(record: object, lineno: int, languages: frozenset[str]) -> Utterance:
    if not isinstance(record, dict):
        raise ManifestError("record is not an object", lineno)
    keys = set(record)
    missing = [f for f in UTTERANCE_FIELDS if f not in keys]
    unknown = sorted(keys - set(UTTERANCE_FIELDS))
    if missing:
        raise ManifestError(f"missing fields {missing}", lineno)
    if unknown:
        raise ManifestError(f"unknown fields {unknown}", lineno)
    for name in ("id", "lang", "audio", "text"):
        if not isinstance(record[name], str):
            raise ManifestError(f"field {name!r} must be a string", lineno)
    if not record["id"]:
        raise ManifestError("empty utterance id", lineno)
    duration = record["duration_s"]
    if isinstance(duration, bool) or not isinstance(duration, (int, float)):
        raise ManifestError("field 'duration_s' must be a number", lineno)
    if not math.isfinite(duration) or duration <= 0:
        raise ManifestError(f"non-positive duration {duration!r}", lineno)
    if record["lang"] not in languages:
        raise ManifestError(f"unknown language code {record['lang']!r}", lineno)
    return Utterance(
        record["id"], record["lang"], record["audio"], float(duration), record["text"]
    )


def parse_header(record: object, lineno: int = 1) -> tuple[frozenset[str], str]:
    if not isinstance(record, dict):
        raise ManifestError("header is not an object", lineno)
    missing = [f for f in HEADER_FIELDS if f not in record]
    if missing:
        raise ManifestError(f"header missing fields {missing}", lineno)
    langs = record["languages"]
    if not isinstance(langs, list) or not all(isinstance(l, str) and l for l in langs):
        raise ManifestError("header 'languages' must be a list of codes", lineno)
    if not isinstance(record["source_name"], str):
        raise ManifestError("header 'source_name' must be a string", lineno)
    return frozenset(langs), record["source_name"]


def iter_records(path: str | Path) -> Iterable[tuple[int, object]]:
    """Yield ``(line_number, decoded_json)`` for each non-blank line."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"malformed record ({e.msg})", lineno) from None


def load_manifest(path: str | Path) -> CorpusManifest:
    """Load and validate a manifest file.

    An empty file yields an empty manifest with no languages.
    """
    records = iter(iter_records(path))
    first = next(records, None)
    if first is None:
        return CorpusManifest(frozenset(), (), Path(path).stem)
    languages, source_name = parse_header(first[1], first[0])
    extra = set(first[1]) - set(HEADER_FIELDS)  # type: ignore[arg-type]
    if extra:
        raise ManifestError(f"unknown header fields {sorted(extra)}", first[0])

    utts: list[Utterance] = []
    seen: dict[str, int] = {}
    for lineno, record in records:
        utt = _parse_utterance(record, lineno, languages)
        if utt.id in seen:
            raise ManifestError(
                f"duplicate utterance id {utt.id!r} (first seen on line {seen[utt.id]})",
                lineno,
            )
        seen[utt.id] = lineno
        utts.append(utt)
    return CorpusManifest(languages, utts, source_name)


def dumps_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(", ", ": "))


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        header = {"languages": sorted(manifest.languages), "source_name": manifest.source_name}
        f.write(dumps_record(header) + "\n")
        for utt in manifest.utterances:
            f.write(dumps_record(utt.to_record()) + "\n")


def merge_manifests(manifests: Sequence[CorpusManifest]) -> CorpusManifest:
    """Union several manifests, prefixing every id with ``source_name/``.

    The merged manifest is named after its sources joined by ``+``.
    """
    utts: list[Utterance] = []
    origin: dict[str, str] = {}
    languages: set[str] = set()
    for m in manifests:
        languages |= m.languages
        for u in m.utterances:
            new_id = f"{m.source_name}/{u.id}" if m.source_name else u.id
            if new_id in origin:
                raise ManifestError(
                    f"id collision on merge: {new_id!r} "
                    f"(from {origin[new_id]!r} and {m.source_name!r})"
                )
            origin[new_id] = m.source_name
            utts.append(Utterance(new_id, u.lang, u.audio, u.duration_s, u.text))
    name = "+".join(m.source_name for m in manifests)
    return CorpusManifest(frozenset(languages), utts, name)


@dataclass(frozen=True)
class LanguageStats:
    count: int
    duration_s: float
    fraction: float


def composition_stats(manifest: CorpusManifest) -> dict[str, LanguageStats]:
    """Per-language utterance count, total duration and share of duration."""
    counts: dict[str, int] = {}
    durations: dict[str, list[float]] = {}
    for u in manifest.utterances:
        counts[u.lang] = counts.get(u.lang, 0) + 1
        durations.setdefault(u.lang, []).append(u.duration_s)
    totals = {lang: math.fsum(ds) for lang, ds in durations.items()}
    grand = math.fsum(totals.values())
    return {
        lang: LanguageStats(counts[lang], totals[lang], totals[lang] / grand)
        for lang in sorted(counts)
    }
