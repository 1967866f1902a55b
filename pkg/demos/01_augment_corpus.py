"""Build a code-switched training set from three monolingual corpora.

We fabricate a small German/English/Arabic manifest, ask for half of the
output to be synthesized code-switched utterances, and look at what came out:
the bucket histogram, the language transitions and whether every source
utterance survived into the new set.

    python3 demos/01_augment_corpus.py
"""

import json

import numpy as np

from csaug.augment import AugmentationConfig, build_augmented_dataset, dataset_stats, policy_from_name
from csaug.corpus import CorpusManifest, Utterance

rng = np.random.default_rng(0)
words = {"de": ["wir", "haben", "heute", "noch", "zeit"], "en": ["the", "team", "meeting", "release"],
         "ar": ["مرحبا", "كتاب", "اليوم", "شكرا"]}
utts = []
for lang, vocab in words.items():
    for i in range(200):
        utts.append(Utterance(f"{lang}{i:03d}", lang, f"wav/{lang}{i:03d}.wav",
                              round(float(rng.uniform(1.0, 8.0)), 3), " ".join(rng.choice(vocab, 5))))
manifest = CorpusManifest(frozenset(words), tuple(utts), source_name="demo")
print(f"source: {len(manifest)} utterances, {manifest.total_duration_s / 60:.1f} min")

# "nodear" forbids switching from German straight into Arabic.
cfg = AugmentationConfig(policy_from_name("nodear", manifest.languages), cs_fraction=0.5, seed=1)
ds = build_augmented_dataset(manifest, cfg)
stats = dataset_stats(ds, cfg.policy)

print(f"output: {stats['num_cs']} code-switched + {stats['num_mono']} monolingual")
print("buckets:", json.dumps({f"{k:g}s": v for k, v in stats["bucket_histogram"].items()}))
print("transitions:", json.dumps(stats["transitions"], sort_keys=True))
print("forbidden transitions:", stats["forbidden_transitions"])
print("every source id covered:", stats["coverage_ok"])

u = ds.cs_utterances[0]
print("\nfirst synthesized utterance")
print("  segments:", " + ".join(f"{i} ({l}, {d:.2f}s)" for i, l, d in
                                zip(u.segment_ids, u.segment_langs, u.segment_durations_s)))
print(f"  total {u.total_duration_s:.2f}s for a {u.bucket_target_s:g}s bucket")
print("  text:", u.text)
