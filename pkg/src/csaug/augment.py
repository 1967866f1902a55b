"""Synthesis of code-switched utterances from monolingual pools.

A CS utterance is a chain of monolingual utterances in which consecutive
segments always come from different languages and every switch is allowed
by a :class:`TransitionPolicy`. Its total length falls inside a window
``[target - slack, target]`` for one of the duration buckets.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence(seed, spawn_key=(stream, index))``: CS utterance ``i`` uses
stream 0 / index ``i``, the monolingual top-up uses stream 1 / index 0. Each
utterance is therefore independent of how generation is scheduled.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import CorpusManifest, ManifestError, Utterance, dumps_record, merge_manifests

DEFAULT_BUCKETS = ((5.0, 0.25), (10.0, 0.25), (15.0, 0.25), (20.0, 0.125), (25.0, 0.125))
RNG_ALGORITHM = "numpy.random.PCG64 seeded by SeedSequence(seed, spawn_key=(stream, index))"
CS_STREAM, MONO_STREAM = 0, 1
CS_LANG = "cs"


class InfeasibleError(RuntimeError):
    """No CS utterance satisfying the constraints could be drawn."""


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    """Apportion ``total`` proportionally to ``weights`` (Hamilton's method).

    Every share gets the floor of its exact quota; leftover units go to the
    largest fractional remainders, earlier entries winning ties.
    """
    exact = [Fraction(repr(float(w))) for w in weights]
    norm = sum(exact)
    quotas = [w / norm * total for w in exact]
    counts = [math.floor(q) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


@dataclass(frozen=True)
class BucketPlan:
    buckets: tuple[tuple[float, float], ...] = DEFAULT_BUCKETS
    slack_s: float = 2.0

    def __post_init__(self):
        buckets = tuple((float(t), float(f)) for t, f in self.buckets)
        object.__setattr__(self, "buckets", buckets)
        if not buckets:
            raise ValueError("bucket plan needs at least one bucket")
        targets = [t for t, _ in buckets]
        if any(b <= a for a, b in zip(targets, targets[1:])):
            raise ValueError(f"bucket targets must be strictly increasing: {targets}")
        if any(f < 0 for _, f in buckets) or abs(math.fsum(f for _, f in buckets) - 1.0) > 1e-9:
            raise ValueError("bucket fractions must be non-negative and sum to 1")
        if not 0 <= self.slack_s < targets[0]:
            raise ValueError(f"slack {self.slack_s} must be below the smallest target {targets[0]}")

    @property
    def targets(self) -> list[float]:
        return [t for t, _ in self.buckets]

    def to_dict(self) -> dict:
        return {"buckets": [list(b) for b in self.buckets], "slack_s": self.slack_s}


def plan_buckets(num_cs: int, plan: BucketPlan | None = None) -> list[int]:
    """Number of CS utterances to generate per bucket."""
    plan = plan or BucketPlan()
    if num_cs < 0:
        raise ValueError("num_cs must be non-negative")
    return largest_remainder([f for _, f in plan.buckets], num_cs)


@dataclass(frozen=True)
class TransitionPolicy:
    languages: frozenset[str]
    forbidden_pairs: frozenset[tuple[str, str]] = frozenset()
    excluded: frozenset[str] = frozenset()
    hub: str | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "languages", frozenset(self.languages))
        object.__setattr__(self, "forbidden_pairs", frozenset(map(tuple, self.forbidden_pairs)))
        object.__setattr__(self, "excluded", frozenset(self.excluded))
        unknown = ({a for p in self.forbidden_pairs for a in p} | self.excluded) - self.languages
        if self.hub is not None:
            if self.hub in self.excluded:
                raise ValueError(f"hub language {self.hub!r} is also excluded")
            unknown |= {self.hub} - self.languages
        if unknown:
            raise ValueError(f"policy refers to languages outside the inventory: {sorted(unknown)}")

    def allows(self, src: str, dst: str) -> bool:
        return (
            src != dst
            and src in self.languages
            and dst in self.languages
            and src not in self.excluded
            and dst not in self.excluded
            and (src, dst) not in self.forbidden_pairs
            and (self.hub is None or self.hub in (src, dst))
        )

    def allowed_pairs(self) -> list[tuple[str, str]]:
        langs = sorted(self.languages)
        return [(a, b) for a in langs for b in langs if self.allows(a, b)]

    def successors(self, src: str) -> list[str]:
        return [b for b in sorted(self.languages) if self.allows(src, b)]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "languages": sorted(self.languages),
            "forbidden_pairs": sorted(list(p) for p in self.forbidden_pairs),
            "excluded": sorted(self.excluded),
            "hub": self.hub,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> TransitionPolicy:
        return cls(
            frozenset(d["languages"]),
            frozenset(tuple(p) for p in d.get("forbidden_pairs", ())),
            frozenset(d.get("excluded", ())),
            d.get("hub"),
            d.get("name", ""),
        )


_POLICY_NAME = re.compile(
    r"^(?:(?P<all>all)|no(?P<src>[a-z]{2})(?P<dst>[a-z]{2})|no(?P<exc>[a-z]{2})x|o(?P<hub>[a-z]{2})x)$"
)


def policy_from_name(name: str, languages) -> TransitionPolicy:
    """Build a policy from an ablation name.

    ``all`` allows every switch, ``no<a><b>`` forbids switching from ``a``
    to ``b``, ``no<a>x`` keeps ``a`` out of augmentation and ``o<a>x``
    only allows switches into or out of ``a``.
    """
    languages = frozenset(languages)
    m = _POLICY_NAME.match(name)
    if m is None:
        raise ValueError(f"unparseable policy name {name!r}")
    codes = [c for c in (m["src"], m["dst"], m["exc"], m["hub"]) if c]
    missing = sorted(set(codes) - languages)
    if missing:
        raise ValueError(f"policy {name!r} names language(s) {missing} not in {sorted(languages)}")
    if m["src"] and m["src"] == m["dst"]:
        raise ValueError(f"policy {name!r} forbids a self-transition, which never occurs")
    if m["src"]:
        return TransitionPolicy(languages, frozenset({(m["src"], m["dst"])}), name=name)
    if m["exc"]:
        return TransitionPolicy(languages, excluded=frozenset({m["exc"]}), name=name)
    if m["hub"]:
        return TransitionPolicy(languages, hub=m["hub"], name=name)
    return TransitionPolicy(languages, name=name)


@dataclass(frozen=True)
class AugmentedUtterance:
    segment_ids: tuple[str, ...]
    segment_langs: tuple[str, ...]
    segment_durations_s: tuple[float, ...]
    total_duration_s: float
    text: str
    bucket_target_s: float
    audio: str = ""
    id: str = ""


@dataclass(frozen=True)
class AugmentationConfig:
    policy: TransitionPolicy
    cs_fraction: float = 0.5
    bucket_plan: BucketPlan = field(default_factory=BucketPlan)
    seed: int = 0
    max_retries: int = 100

    def __post_init__(self):
        if not 0 < self.cs_fraction <= 1:
            raise ValueError(f"cs_fraction must be in (0, 1], got {self.cs_fraction}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")

    def to_dict(self) -> dict:
        return {
            "cs_fraction": self.cs_fraction,
            "bucket_plan": self.bucket_plan.to_dict(),
            "policy": self.policy.to_dict(),
            "seed": self.seed,
            "max_retries": self.max_retries,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> AugmentationConfig:
        bp = d.get("bucket_plan", {})
        return cls(
            policy=TransitionPolicy.from_dict(d["policy"]),
            cs_fraction=d.get("cs_fraction", 0.5),
            bucket_plan=BucketPlan(
                tuple(tuple(b) for b in bp.get("buckets", DEFAULT_BUCKETS)), bp.get("slack_s", 2.0)
            ),
            seed=d.get("seed", 0),
            max_retries=d.get("max_retries", 100),
        )


def config_hash(cfg: AugmentationConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def make_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, index))))


class _Sampler:
    """Pools and transition tables prepared once for many draws."""

    def __init__(self, pools: Mapping[str, Sequence[Utterance]], policy: TransitionPolicy, max_retries: int):
        self.pools = {
            lang: list(utts)
            for lang, utts in sorted(pools.items())
            if utts and lang in policy.languages and lang not in policy.excluded
        }
        self.policy = policy
        self.max_retries = max_retries
        self.successors = {
            lang: [b for b in policy.successors(lang) if b in self.pools] for lang in self.pools
        }
        self.starters = [lang for lang, succ in self.successors.items() if succ]
        if not self.starters:
            raise InfeasibleError(
                f"policy {policy.name or policy.to_dict()} allows no transition between "
                f"non-empty pools {sorted(self.pools)}"
            )
        self.min_dur = {lang: min(u.duration_s for u in utts) for lang, utts in self.pools.items()}

    def check_target(self, target: float) -> None:
        if not any(
            self.min_dur[a] + self.min_dur[b] <= target for a in self.starters for b in self.successors[a]
        ):
            raise InfeasibleError(
                f"no pair of allowed segments fits a {target:g} s target under policy "
                f"{self.policy.name or self.policy.to_dict()}"
            )

    def draw(self, target: float, slack: float, rng: np.random.Generator) -> AugmentedUtterance:
        lo = target - slack
        retries = self.max_retries
        for _ in range(retries):
            lang = self.starters[int(rng.integers(len(self.starters)))]
            segs: list[Utterance] = []
            total = 0.0
            while True:
                pool = self.pools[lang]
                pick = None
                for _ in range(retries):
                    cand = pool[int(rng.integers(len(pool)))]
                    if total + cand.duration_s <= target:
                        pick = cand
                        break
                if pick is None:
                    break
                segs.append(pick)
                total += pick.duration_s
                if len(segs) >= 2 and total >= lo:
                    return AugmentedUtterance(
                        segment_ids=tuple(u.id for u in segs),
                        segment_langs=tuple(u.lang for u in segs),
                        segment_durations_s=tuple(u.duration_s for u in segs),
                        total_duration_s=total,
                        text=" ".join(u.text for u in segs),
                        bucket_target_s=target,
                        audio="|".join(u.audio for u in segs),
                    )
                succ = self.successors[lang]
                if not succ:
                    break
                lang = succ[int(rng.integers(len(succ)))]
        raise InfeasibleError(
            f"gave up after {retries} restarts: target {target:g} s (window [{lo:g}, {target:g}]), "
            f"policy {self.policy.name or self.policy.to_dict()}"
        )


def generate_cs_utterance(
    pools: Mapping[str, Sequence[Utterance]],
    policy: TransitionPolicy,
    target_s: float,
    slack_s: float,
    rng: np.random.Generator,
    max_retries: int = 100,
) -> AugmentedUtterance:
    """Draw one code-switched utterance whose length lies in ``[target_s - slack_s, target_s]``.

    The opening language is uniform over languages that can switch
    somewhere; each later language is uniform over the allowed successors of
    the previous one, and the utterance within a language is uniform over its
    pool. A candidate that would overshoot the target is redrawn up to
    ``max_retries`` times before the whole chain is restarted; after
    ``max_retries`` restarts :class:`InfeasibleError` is raised.
    """
    sampler = _Sampler(pools, policy, max_retries)
    sampler.check_target(target_s)
    return sampler.draw(target_s, slack_s, rng)


@dataclass(frozen=True)
class AugmentedDataset:
    cs_utterances: tuple[AugmentedUtterance, ...]
    mono: tuple[Utterance, ...]
    provenance: dict = field(default_factory=dict)
    languages: frozenset[str] = frozenset()
    source_name: str = ""

    @property
    def mono_utterances(self) -> list[str]:
        """Source ids of the monolingual entries, in order."""
        return [u.id for u in self.mono]

    def __len__(self) -> int:
        return len(self.cs_utterances) + len(self.mono)

    def covered_ids(self) -> set[str]:
        ids = {u.id for u in self.mono}
        for cs in self.cs_utterances:
            ids.update(cs.segment_ids)
        return ids


_worker_sampler: _Sampler | None = None


def _init_worker(pools, policy, max_retries):
    global _worker_sampler
    _worker_sampler = _Sampler(pools, policy, max_retries)


def _draw_chunk(args):
    seed, slack, jobs = args
    return [_worker_sampler.draw(t, slack, make_rng(seed, CS_STREAM, i)) for i, t in jobs]


def _generate_all(sampler: _Sampler, targets: list[float], cfg: AugmentationConfig, workers: int):
    slack = cfg.bucket_plan.slack_s
    jobs = list(enumerate(targets))
    if workers <= 1 or len(jobs) < 2 * workers:
        return [sampler.draw(t, slack, make_rng(cfg.seed, CS_STREAM, i)) for i, t in jobs]
    size = max(1, math.ceil(len(jobs) / (workers * 4)))
    chunks = [(cfg.seed, slack, jobs[k : k + size]) for k in range(0, len(jobs), size)]
    with ProcessPoolExecutor(
        workers, initializer=_init_worker, initargs=(sampler.pools, sampler.policy, sampler.max_retries)
    ) as ex:
        return [u for part in ex.map(_draw_chunk, chunks) for u in part]


def _min_total_for_unused(unused: int, frac: float, start: int) -> int:
    """Smallest dataset size >= start whose monolingual share holds ``unused`` entries."""
    total = start
    while total - round_half_up(frac * total) < unused:
        total = max(total + 1, math.ceil(unused / (1 - frac)) - 1)
    return total


def build_augmented_dataset(
    manifest: CorpusManifest,
    cfg: AugmentationConfig,
    *,
    num_utterances: int | None = None,
    workers: int = 1,
    kind: str = "train",
) -> AugmentedDataset:
    """Assemble a training set with a fixed share of synthesized CS utterances.

    The output has as many entries as the source manifest (or
    ``num_utterances``), ``round(cs_fraction * total)`` of them CS. The
    monolingual share first takes every source utterance no CS chain used,
    in manifest order, then tops up with uniform draws from the whole source.
    If the unused utterances alone exceed the monolingual share, the dataset
    is grown until the fraction holds again, so no source utterance is lost.
    With ``cs_fraction == 1`` the output is CS only and coverage is not
    guaranteed.
    """
    if len(manifest) == 0:
        raise ValueError("cannot augment an empty manifest")
    sampler = _Sampler(manifest.by_language(), cfg.policy, cfg.max_retries)
    if len(sampler.pools) < 2:
        raise InfeasibleError(
            f"need at least two non-excluded languages with data, have {sorted(sampler.pools)}"
        )
    frac = cfg.cs_fraction
    total = num_utterances if num_utterances is not None else len(manifest)
    if total < 1:
        raise ValueError("num_utterances must be positive")

    while True:
        num_cs = round_half_up(frac * total)
        targets = [
            t
            for t, n in zip(cfg.bucket_plan.targets, plan_buckets(num_cs, cfg.bucket_plan))
            for _ in range(n)
        ]
        for t in sorted(set(targets)):
            sampler.check_target(t)
        cs = _generate_all(sampler, targets, cfg, workers)
        if frac == 1:
            mono: list[Utterance] = []
            break
        used = {sid for u in cs for sid in u.segment_ids}
        unused = [u for u in manifest.utterances if u.id not in used]
        num_mono = total - num_cs
        if len(unused) <= num_mono:
            rng = make_rng(cfg.seed, MONO_STREAM, 0)
            picks = rng.integers(len(manifest), size=num_mono - len(unused))
            mono = unused + [manifest.utterances[int(i)] for i in picks]
            break
        total = _min_total_for_unused(len(unused), frac, total + 1)

    cs = [replace(u, id=f"cs-{i:08d}") for i, u in enumerate(cs)]
    provenance = {
        "toolkit": "csaug",
        "version": __version__,
        "kind": kind,
        "seed": cfg.seed,
        "rng": RNG_ALGORITHM,
        "numpy_version": np.__version__,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "source_name": manifest.source_name,
        "source_count": len(manifest),
    }
    return AugmentedDataset(tuple(cs), tuple(mono), provenance, manifest.languages, manifest.source_name)


def build_artificial_testset(
    manifests: Sequence[CorpusManifest],
    cfg: AugmentationConfig,
    *,
    num_utterances: int | None = None,
    workers: int = 1,
) -> AugmentedDataset:
    """CS-only evaluation set synthesized from (merged) test manifests."""
    manifest = merge_manifests(manifests) if len(manifests) > 1 else manifests[0]
    return build_augmented_dataset(
        manifest, replace(cfg, cs_fraction=1.0), num_utterances=num_utterances, workers=workers, kind="testset"
    )


def _cs_record(u: AugmentedUtterance) -> dict:
    return {
        "id": u.id,
        "lang": CS_LANG,
        "audio": u.audio,
        "duration_s": u.total_duration_s,
        "text": u.text,
        "segments": list(u.segment_ids),
        "segment_langs": list(u.segment_langs),
        "segment_durations_s": list(u.segment_durations_s),
        "bucket_target_s": u.bucket_target_s,
    }


def _mono_record(i: int, u: Utterance) -> dict:
    return {
        "id": f"mono-{i:08d}",
        "lang": u.lang,
        "audio": u.audio,
        "duration_s": u.duration_s,
        "text": u.text,
        "segments": [u.id],
        "segment_langs": [u.lang],
        "segment_durations_s": [u.duration_s],
        "bucket_target_s": None,
    }


def dumps_augmented(ds: AugmentedDataset) -> str:
    header = {"languages": sorted(ds.languages), "source_name": ds.source_name, "provenance": ds.provenance}
    lines = [json.dumps(header, ensure_ascii=False, sort_keys=True)]
    lines += [dumps_record(_cs_record(u)) for u in ds.cs_utterances]
    lines += [dumps_record(_mono_record(i, u)) for i, u in enumerate(ds.mono)]
    return "\n".join(lines) + "\n"


def save_augmented(ds: AugmentedDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_augmented(ds))


def load_augmented(path: str | Path) -> AugmentedDataset:
    from .corpus import iter_records, parse_header

    records = iter(iter_records(path))
    first = next(records, None)
    if first is None:
        raise ManifestError(f"{path}: empty augmented manifest")
    languages, source_name = parse_header(first[1], first[0])
    provenance = first[1].get("provenance", {})  # type: ignore[union-attr]
    cs: list[AugmentedUtterance] = []
    mono: list[Utterance] = []
    for lineno, r in records:
        try:
            if r["lang"] == CS_LANG and r["bucket_target_s"] is not None:
                cs.append(
                    AugmentedUtterance(
                        segment_ids=tuple(r["segments"]),
                        segment_langs=tuple(r["segment_langs"]),
                        segment_durations_s=tuple(r["segment_durations_s"]),
                        total_duration_s=r["duration_s"],
                        text=r["text"],
                        bucket_target_s=r["bucket_target_s"],
                        audio=r["audio"],
                        id=r["id"],
                    )
                )
            else:
                (sid,) = r["segments"]
                mono.append(Utterance(sid, r["lang"], r["audio"], r["duration_s"], r["text"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"malformed augmented record ({e!r})", lineno) from None
    return AugmentedDataset(tuple(cs), tuple(mono), provenance, languages, source_name)


def dataset_stats(ds: AugmentedDataset, policy: TransitionPolicy | None = None) -> dict:
    """Post-hoc check of the constraints a generated dataset must satisfy.

    Coverage is judged against ``source_count`` in the provenance: every
    referenced id comes from the source, so the number of distinct covered
    ids equals the source size exactly when nothing was left out.
    """
    if policy is None and "config" in ds.provenance:
        policy = TransitionPolicy.from_dict(ds.provenance["config"]["policy"])
    slack = ds.provenance.get("config", {}).get("bucket_plan", {}).get("slack_s", 2.0)
    buckets: Counter = Counter()
    transitions: Counter = Counter()
    lang_dur: Counter = Counter()
    window_violations = same_lang = forbidden = 0
    cs_ids: Counter = Counter()
    for u in ds.cs_utterances:
        buckets[u.bucket_target_s] += 1
        if not u.bucket_target_s - slack <= u.total_duration_s <= u.bucket_target_s:
            window_violations += 1
        for a, b in zip(u.segment_langs, u.segment_langs[1:]):
            transitions[(a, b)] += 1
            same_lang += a == b
            if policy is not None and not policy.allows(a, b):
                forbidden += 1
        for lang, d in zip(u.segment_langs, u.segment_durations_s):
            lang_dur[lang] += d
        cs_ids.update(u.segment_ids)
    mono_ids = Counter(u.id for u in ds.mono)
    for u in ds.mono:
        lang_dur[u.lang] += u.duration_s
    grand = math.fsum(lang_dur.values()) or 1.0
    covered = len(ds.covered_ids())
    source_count = ds.provenance.get("source_count")
    n = len(ds)
    return {
        "num_cs": len(ds.cs_utterances),
        "num_mono": len(ds.mono),
        "cs_fraction": len(ds.cs_utterances) / n if n else 0.0,
        "bucket_histogram": {t: buckets[t] for t in sorted(buckets)},
        "transitions": {f"{a}->{b}": c for (a, b), c in sorted(transitions.items())},
        "same_language_adjacencies": same_lang,
        "forbidden_transitions": forbidden if policy is not None else None,
        "duration_window_violations": window_violations,
        "language_composition": {lang: lang_dur[lang] / grand for lang in sorted(lang_dur)},
        "covered_ids": covered,
        "source_count": source_count,
        "coverage_ok": None if source_count is None else covered == source_count,
        "mono_duplicates": sum(c - 1 for c in mono_ids.values()) + sum(1 for i in mono_ids if i in cs_ids),
    }


def materialize_features(
    ds: AugmentedDataset, feature_index: Mapping[str, str | Path], out_dir: str | Path
) -> dict[str, Path]:
    """Write one concatenated feature archive per CS utterance.

    ``feature_index`` maps source utterance ids to their archives.
    """
    from .features import concat_features, read_archive, write_archive

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for u in ds.cs_utterances:
        missing = [sid for sid in u.segment_ids if sid not in feature_index]
        if missing:
            raise KeyError(f"no feature archive for segment(s) {missing} of {u.id}")
        parts = [read_archive(feature_index[sid]) for sid in u.segment_ids]
        path = out_dir / f"{u.id}.csfb"
        write_archive(concat_features(parts), path)
        written[u.id] = path
    return written
