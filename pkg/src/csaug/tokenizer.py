"""Joint byte-pair encoding over several languages.

Words are split on whitespace and each word is prefixed with the marker
``WORD_MARK`` so spaces can be restored on decode. Ids 0..2 are reserved for
``<unk>``, ``<s>`` and ``</s>``; base symbols follow in sorted order, then one
id per merge in the order the merges were learned.

Model file::

    #csaug-bpe v1
    vocab_size <n>
    specials <unk> <s> </s>
    base <json list of base symbols>
    provenance <json>       (optional)
    merges <k>
    <left>\\t<right>        (k lines, application order)
"""

from __future__ import annotations

import heapq
import json
import warnings
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

WORD_MARK = "▁"
UNK, SOS, EOS = "<unk>", "<s>", "</s>"
SPECIALS = (UNK, SOS, EOS)
FORMAT_HEADER = "#csaug-bpe v1"


class BpeError(ValueError):
    pass


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    base: tuple[str, ...]
    target_size: int
    vocab: dict[str, int] = field(init=False, compare=False, repr=False)
    ranks: dict[tuple[str, str], int] = field(init=False, compare=False, repr=False)
    id_to_token: tuple[str, ...] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        vocab: dict[str, int] = {}
        for tok in list(SPECIALS) + list(self.base):
            if tok in vocab:
                raise BpeError(f"token {tok!r} defined twice")
            vocab[tok] = len(vocab)
        tokens = list(vocab)
        for a, b in self.merges:
            # two merge paths may spell the same token; it keeps its first id
            if a + b not in vocab:
                vocab[a + b] = len(vocab)
                tokens.append(a + b)
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "id_to_token", tuple(tokens))
        object.__setattr__(self, "ranks", {m: i for i, m in enumerate(self.merges)})

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK]

    @property
    def sos_id(self) -> int:
        return self.vocab[SOS]

    @property
    def eos_id(self) -> int:
        return self.vocab[EOS]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.vocab[s] for s in SPECIALS)


def _words(text: str) -> list[str]:
    return text.split()


def balance_corpora(texts_per_language: Mapping[str, str | Iterable[str]]) -> dict[str, str]:
    """Truncate every language's text to the shortest corpus' character count."""
    joined = {}
    for lang, text in texts_per_language.items():
        joined[lang] = text if isinstance(text, str) else "\n".join(text)
    empty = sorted(lang for lang, t in joined.items() if not t.strip())
    if empty:
        raise BpeError(f"empty corpus for language(s) {empty}")
    budget = min(len(t) for t in joined.values())
    return {lang: t[:budget] for lang, t in sorted(joined.items())}


def word_counts(text: str) -> Counter:
    counts: Counter = Counter()
    for w in _words(text):
        counts[WORD_MARK + w.replace(WORD_MARK, "")] += 1
    return counts


def _base_inventory(counts: Mapping[str, int]) -> list[str]:
    chars = {WORD_MARK}
    for w in counts:
        chars.update(w)
    return sorted(chars)


def learn_merges(counts: Mapping[str, int], num_tokens: int) -> list[tuple[str, str]]:
    """Greedy most-frequent-pair merging over a word-frequency table.

    Runs until ``num_tokens`` distinct new tokens exist. Ties on pair
    frequency go to the lexicographically smallest pair. Stops early when no
    pair occurs any more.
    """
    words = [list(w) for w in sorted(counts)]
    freqs = [counts[w] for w in sorted(counts)]
    pair_counts: defaultdict[tuple[str, str], int] = defaultdict(int)
    where: defaultdict[tuple[str, str], set[int]] = defaultdict(set)
    for i, syms in enumerate(words):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freqs[i]
            where[pair].add(i)

    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)
    merges: list[tuple[str, str]] = []
    created: set[str] = set()
    while len(created) < num_tokens:
        best = None
        while heap:
            neg, pair = heapq.heappop(heap)
            if pair_counts.get(pair, 0) == -neg and -neg > 0:
                best = pair
                break
        if best is None:
            break
        merges.append(best)
        a, b = best
        merged = a + b
        created.add(merged)
        touched: dict[tuple[str, str], None] = {}
        for i in sorted(where.pop(best, ())):
            syms = words[i]
            f = freqs[i]
            for pair in zip(syms, syms[1:]):
                pair_counts[pair] -= f
                touched[pair] = None
            out: list[str] = []
            j = 0
            while j < len(syms):
                if j + 1 < len(syms) and syms[j] == a and syms[j + 1] == b:
                    out.append(merged)
                    j += 2
                else:
                    out.append(syms[j])
                    j += 1
            words[i] = out
            for pair in zip(out, out[1:]):
                pair_counts[pair] += f
                where[pair].add(i)
                touched[pair] = None
        for pair in touched:
            c = pair_counts[pair]
            if c > 0:
                heapq.heappush(heap, (-c, pair))
            else:
                del pair_counts[pair]
                where.pop(pair, None)
    return merges


def train_bpe(
    texts_per_language: Mapping[str, str | Iterable[str]], vocab_size: int
) -> BpeModel:
    """Train one BPE model on equal amounts of text from each language.

    ``vocab_size`` counts the three special tokens and all base symbols. If
    the balanced corpus runs out of pairs first, a warning is issued and the
    model is smaller than requested.
    """
    balanced = balance_corpora(texts_per_language)
    counts: Counter = Counter()
    for text in balanced.values():
        counts.update(word_counts(text))
    base = _base_inventory(counts)
    floor = len(base) + len(SPECIALS)
    if vocab_size <= floor:
        raise BpeError(
            f"vocab_size {vocab_size} too small: base inventory has {len(base)} symbols "
            f"plus {len(SPECIALS)} specials"
        )
    model = BpeModel(tuple(learn_merges(counts, vocab_size - floor)), tuple(base), vocab_size)
    if len(model) < vocab_size:
        warnings.warn(
            f"corpus exhausted after {len(model.merges)} merges; vocabulary has "
            f"{len(model)} of {vocab_size} entries",
            stacklevel=2,
        )
    return model


def _apply_merges(model: BpeModel, syms: list[str]) -> list[str]:
    ranks = model.ranks
    while len(syms) > 1:
        best_rank = None
        for i in range(len(syms) - 1):
            r = ranks.get((syms[i], syms[i + 1]))
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
        if best_rank is None:
            break
        a, b = model.merges[best_rank]
        out, i = [], 0
        while i < len(syms):
            if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                out.append(a + b)
                i += 2
            else:
                out.append(syms[i])
                i += 1
        syms = out
    return syms


def encode(model: BpeModel, text: str) -> list[int]:
    """Token ids for ``text``; unseen characters become ``<unk>``.

    Words are delimited by single spaces, so runs of spaces survive a
    round trip as empty words.
    """
    if text == "":
        return []
    vocab = model.vocab
    ids: list[int] = []
    cache: dict[str, list[int]] = {}
    for word in text.split(" "):
        if word in cache:
            ids.extend(cache[word])
            continue
        syms = [WORD_MARK] + [c if c in vocab and c != WORD_MARK else UNK for c in word]
        out: list[int] = []
        chunk: list[str] = []
        for s in syms + [UNK]:
            if s == UNK:
                out.extend(vocab[t] for t in _apply_merges(model, chunk))
                chunk = []
                out.append(model.unk_id)
            else:
                chunk.append(s)
        out.pop()
        cache[word] = out
        ids.extend(out)
    return ids


def decode(model: BpeModel, ids: Sequence[int]) -> str:
    n = len(model.id_to_token)
    pieces = []
    for i in ids:
        if not 0 <= i < n:
            raise BpeError(f"token id {i} out of range for vocabulary of {n}")
        pieces.append(model.id_to_token[i])
    text = "".join(pieces).replace(WORD_MARK, " ")
    return text[1:] if text.startswith(" ") else text


def concat_labels(parts: Iterable[Sequence[int]]) -> list[int]:
    """Plain concatenation; no language tags or separators are inserted."""
    out: list[int] = []
    for p in parts:
        out.extend(p)
    return out


def token_language_attribution(
    model: BpeModel, texts_per_language: Mapping[str, str | Iterable[str]], threshold: float = 0.5
) -> dict[str, int]:
    """Count learned tokens by the language they predominantly occur in.

    A token is attributed to a language when more than ``threshold`` of its
    occurrences in the balanced training text come from it; otherwise it is
    ``"shared"``. Tokens never produced by encoding are ``"unused"``.
    Diagnostic only.
    """
    balanced = balance_corpora(texts_per_language)
    per_token: defaultdict[int, Counter] = defaultdict(Counter)
    for lang, text in balanced.items():
        for word, c in word_counts(text).items():
            for i in encode(model, word[1:]):
                per_token[i][lang] += c
    result: Counter = Counter()
    for tok_id in range(len(SPECIALS), len(model)):
        occ = per_token.get(tok_id)
        if not occ:
            result["unused"] += 1
            continue
        lang, top = occ.most_common(1)[0]
        result[lang if top > threshold * sum(occ.values()) else "shared"] += 1
    return dict(sorted(result.items()))


def save_model(model: BpeModel, path: str | Path, provenance: Mapping | None = None) -> None:
    lines = [
        FORMAT_HEADER,
        f"vocab_size {model.target_size}",
        "specials " + " ".join(SPECIALS),
        "base " + json.dumps(list(model.base), ensure_ascii=False),
    ]
    if provenance is not None:
        lines.append("provenance " + json.dumps(dict(provenance), sort_keys=True, ensure_ascii=False))
    lines.append(f"merges {len(model.merges)}")
    lines += [f"{a}\t{b}" for a, b in model.merges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_model_header(path: str | Path) -> dict:
    """Header fields of a model file, without parsing the merge list."""
    header: dict = {}
    with open(path, encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
        if first != FORMAT_HEADER:
            raise BpeError(f"{path}: not a csaug BPE model (header {first!r})")
        for line in f:
            key, _, value = line.rstrip("\n").partition(" ")
            header[key] = value
            if key == "merges":
                break
    return header


def load_model(path: str | Path) -> BpeModel:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines[0] != FORMAT_HEADER:
        raise BpeError(f"{path}: not a csaug BPE model (header {lines[0]!r})")
    header: dict[str, str] = {}
    pos = 1
    try:
        while "merges" not in header:
            key, _, value = lines[pos].partition(" ")
            header[key] = value
            pos += 1
        target = int(header["vocab_size"])
        specials = tuple(header["specials"].split(" "))
        base = tuple(json.loads(header["base"]))
        k = int(header["merges"])
        merges = tuple(tuple(l.split("\t")) for l in lines[pos : pos + k])
    except (IndexError, KeyError, ValueError) as e:
        raise BpeError(f"{path}: malformed model file ({e!r})") from None
    if specials != SPECIALS:
        raise BpeError(f"{path}: unexpected special tokens {specials}")
    if len(merges) != k or any(len(m) != 2 for m in merges):
        raise BpeError(f"{path}: expected {k} merge rules")
    return BpeModel(merges, base, target)  # type: ignore[arg-type]
