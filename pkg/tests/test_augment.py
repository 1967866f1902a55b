from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import LANGS, pooled_manifest, synthetic_manifest
from oracles import alternating_sequences, best_apportionment
from csaug.augment import (
    AugmentationConfig,
    BucketPlan,
    InfeasibleError,
    TransitionPolicy,
    build_artificial_testset,
    build_augmented_dataset,
    dataset_stats,
    dumps_augmented,
    generate_cs_utterance,
    largest_remainder,
    load_augmented,
    make_rng,
    materialize_features,
    plan_buckets,
    policy_from_name,
    save_augmented,
)
from csaug.corpus import CorpusManifest, Utterance
from csaug.features import FeatureMatrix, read_archive, write_archive

FRACTIONS = [0.25, 0.25, 0.25, 0.125, 0.125]


def cfg(policy="all", frac=0.5, seed=0, langs=LANGS, **kw):
    return AugmentationConfig(policy_from_name(policy, langs), frac, seed=seed, **kw)


def pools_of(manifest):
    return manifest.by_language()


# bucket apportionment

@pytest.mark.parametrize(
    "n, expected",
    [(1000, [250, 250, 250, 125, 125]), (0, [0, 0, 0, 0, 0]), (7, [2, 2, 1, 1, 1])],
)
def test_plan_buckets_examples(n, expected):
    assert plan_buckets(n) == expected


@pytest.mark.parametrize("n", range(0, 25))
def test_plan_buckets_matches_exhaustive_search(n):
    assert plan_buckets(n) == best_apportionment(FRACTIONS, n, full=True)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_plan_buckets_sums_and_matches_rounding_search(n):
    counts = plan_buckets(n)
    assert sum(counts) == n
    assert counts == best_apportionment(FRACTIONS, n, full=False)


def test_largest_remainder_uneven_weights():
    assert largest_remainder([1, 1, 1], 10) == [4, 3, 3]
    assert largest_remainder([0.1, 0.2, 0.7], 3) == [0, 1, 2]


@pytest.mark.parametrize(
    "buckets, slack",
    [(((5, 0.5), (10, 0.4)), 2), (((10, 0.5), (5, 0.5)), 2), (((5, 1.0),), 5)],
)
def test_bucket_plan_validation(buckets, slack):
    with pytest.raises(ValueError):
        BucketPlan(buckets, slack)


# policies

ALL6 = {("ar", "de"), ("ar", "en"), ("de", "ar"), ("de", "en"), ("en", "ar"), ("en", "de")}


def test_policy_all():
    assert set(policy_from_name("all", LANGS).allowed_pairs()) == ALL6


def test_policy_nodear():
    p = policy_from_name("nodear", LANGS)
    assert set(p.allowed_pairs()) == ALL6 - {("de", "ar")}
    assert p.allows("ar", "de") and not p.allows("de", "ar")


def test_policy_odex():
    assert set(policy_from_name("odex", LANGS).allowed_pairs()) == {
        ("de", "en"),
        ("en", "de"),
        ("de", "ar"),
        ("ar", "de"),
    }


def test_policy_nodex():
    p = policy_from_name("nodex", LANGS)
    assert p.excluded == {"de"}
    assert set(p.allowed_pairs()) == {("en", "ar"), ("ar", "en")}


@pytest.mark.parametrize("name", ["", "none", "nodexx", "node", "nodede", "ode", "noxyx"])
def test_policy_bad_names(name):
    with pytest.raises(ValueError):
        policy_from_name(name, LANGS)


def test_policy_invariants_on_grid():
    for name in ["all", "nodeen", "nodear", "nodex", "odex", "noende", "noenar", "noenx", "oenx",
                 "noarde", "noaren", "noarx", "oarx"]:
        p = policy_from_name(name, LANGS)
        pairs = p.allowed_pairs()
        assert pairs
        assert not {l for pair in pairs for l in pair} & p.excluded
        if p.hub:
            assert all(p.hub in pair for pair in pairs)


# single utterance generation

def two_single_pools():
    return {
        "de": [Utterance("A", "de", "", 4.0, "a")],
        "en": [Utterance("B", "en", "", 4.0, "b")],
    }


def test_two_four_second_pools_give_only_two_orderings():
    pools = two_single_pools()
    allowed = alternating_sequences({l: [u.duration_s for u in p] for l, p in pools.items()}, 8, 10)
    expected = {tuple(pools[l][i].id for l, i in seq) for seq in allowed}
    assert expected == {("A", "B"), ("B", "A")}
    policy = policy_from_name("all", ["de", "en"])
    seen = Counter()
    for i in range(200):
        u = generate_cs_utterance(pools, policy, 10, 2, make_rng(5, 0, i))
        assert u.total_duration_s == 8.0
        seen[u.segment_ids] += 1
    assert set(seen) == expected


def test_enumerated_support_covers_generator_output():
    pools = {
        "de": [Utterance("d1", "de", "", 1.5, ""), Utterance("d2", "de", "", 3.0, "")],
        "en": [Utterance("e1", "en", "", 2.0, ""), Utterance("e2", "en", "", 2.5, "")],
    }
    durs = {l: [u.duration_s for u in p] for l, p in pools.items()}
    support = {tuple(pools[l][i].id for l, i in s) for s in alternating_sequences(durs, 3, 5)}
    policy = policy_from_name("all", ["de", "en"])
    drawn = {generate_cs_utterance(pools, policy, 5, 2, make_rng(1, 0, i)).segment_ids for i in range(3000)}
    assert drawn <= support
    assert drawn == support


def test_nodex_never_uses_german(small_manifest):
    pools = pools_of(small_manifest)
    policy = policy_from_name("nodex", LANGS)
    rng = make_rng(3, 0, 0)
    for _ in range(10_000):
        u = generate_cs_utterance(pools, policy, 10, 2, rng)
        assert "de" not in u.segment_langs


def test_infeasible_when_nothing_fits():
    pools = {l: [Utterance(f"{l}{i}", l, "", 30.0, "") for i in range(3)] for l in ("de", "en")}
    with pytest.raises(InfeasibleError, match="5 s"):
        generate_cs_utterance(pools, policy_from_name("all", ["de", "en"]), 5, 2, make_rng(0, 0, 0))


def test_infeasible_after_retries():
    # chains of 2 s segments total 2, 4, 6 ...; none lands in [4.5, 5]
    pools = {"de": [Utterance("d", "de", "", 2.0, "")], "en": [Utterance("e", "en", "", 2.0, "")]}
    with pytest.raises(InfeasibleError, match="restarts"):
        generate_cs_utterance(pools, policy_from_name("all", ["de", "en"]), 5, 0.5, make_rng(0, 0, 0), max_retries=5)


def test_policy_without_pairs_rejected():
    pools = two_single_pools()
    policy = TransitionPolicy(frozenset({"de", "en"}), frozenset({("de", "en"), ("en", "de")}))
    with pytest.raises(InfeasibleError, match="no transition"):
        generate_cs_utterance(pools, policy, 10, 2, make_rng(0, 0, 0))


def test_first_language_uniform_over_starters():
    # under nodear every language still has an outgoing switch
    m = synthetic_manifest(300, seed=9)
    policy = policy_from_name("nodear", LANGS)
    firsts = Counter(
        generate_cs_utterance(pools_of(m), policy, 15, 2, make_rng(2, 0, i)).segment_langs[0] for i in range(3000)
    )
    assert set(firsts) == set(LANGS)
    assert min(firsts.values()) > 850


# dataset assembly

def test_fifty_fifty_example():
    m = synthetic_manifest(100_000, seed=1)
    ds = build_augmented_dataset(m, cfg(frac=0.5, seed=1))
    assert len(ds.cs_utterances) == 50_000
    assert len(ds.mono) == 50_000


@pytest.mark.parametrize("n", [5, 17, 333, 1000])
def test_twenty_percent(n):
    ds = build_augmented_dataset(synthetic_manifest(n, seed=n, hi=3.0), cfg(frac=0.2, seed=n))
    total = len(ds)
    assert abs(len(ds.cs_utterances) - 0.2 * total) <= 1
    assert len(ds.cs_utterances) == int(np.floor(0.2 * total + 0.5))


def test_determinism_and_seed_sensitivity():
    m = synthetic_manifest(4, langs=("de", "en"), seed=2, lo=1, hi=4)
    c = cfg(seed=11, langs=("de", "en"))
    a, b = build_augmented_dataset(m, c), build_augmented_dataset(m, c)
    assert dumps_augmented(a) == dumps_augmented(b)
    orders = {
        tuple(u.segment_ids for u in build_augmented_dataset(m, cfg(seed=s, langs=("de", "en"))).cs_utterances)
        for s in range(6)
    }
    assert len(orders) > 1


def test_parallel_generation_matches_serial():
    m = synthetic_manifest(400, seed=4)
    c = cfg("odex", frac=0.4, seed=8)
    serial = build_augmented_dataset(m, c)
    parallel = build_augmented_dataset(m, c, workers=2)
    assert dumps_augmented(serial) == dumps_augmented(parallel)


def check_dataset(ds, manifest, c):
    stats = dataset_stats(ds)
    assert stats["same_language_adjacencies"] == 0
    assert stats["forbidden_transitions"] == 0
    assert stats["duration_window_violations"] == 0
    assert len(ds.cs_utterances) == int(np.floor(c.cs_fraction * len(ds) + 0.5))
    assert list(stats["bucket_histogram"].values()) == [
        n for n in plan_buckets(len(ds.cs_utterances), c.bucket_plan) if n
    ]
    if c.cs_fraction < 1:
        assert set(manifest.ids) <= ds.covered_ids()
        assert stats["coverage_ok"]
    for u in ds.cs_utterances:
        assert len(u.segment_ids) >= 2
        assert u.total_duration_s == sum(u.segment_durations_s) or abs(
            u.total_duration_s - sum(u.segment_durations_s)
        ) < 1e-9
        assert u.text == " ".join(manifest[s].text for s in u.segment_ids)


@pytest.mark.parametrize("policy", ["all", "nodear", "nodex", "odex", "noarx"])
def test_dataset_invariants(policy):
    m = synthetic_manifest(500, seed=6)
    c = cfg(policy, frac=0.3, seed=6)
    check_dataset(build_augmented_dataset(m, c), m, c)


def test_unused_first_then_top_up():
    m = synthetic_manifest(200, seed=12)
    ds = build_augmented_dataset(m, cfg(frac=0.1, seed=3))
    used = {s for u in ds.cs_utterances for s in u.segment_ids}
    unused = [i for i in m.ids if i not in used]
    assert ds.mono_utterances[: len(unused)] == unused
    assert len(ds.mono) == 180


def test_dataset_grows_when_unused_exceed_mono_share():
    # excluded German dominates: its utterances can only appear monolingually
    langs = ("de",) * 8 + ("en", "ar")
    m = synthetic_manifest(300, langs=langs, seed=1)
    c = AugmentationConfig(policy_from_name("nodex", LANGS), 0.5, seed=5)
    ds = build_augmented_dataset(m, c)
    assert len(ds) > len(m)
    check_dataset(ds, m, c)


@settings(max_examples=25, deadline=None)
@given(
    st.fixed_dictionaries({l: st.integers(1, 100) for l in LANGS}),
    st.integers(0, 2**32),
    st.sampled_from([0.1, 0.2, 0.5, 0.8]),
)
def test_coverage_property(sizes, seed, frac):
    m = pooled_manifest(sizes, seed=seed)
    c = cfg(frac=frac, seed=seed)
    check_dataset(build_augmented_dataset(m, c), m, c)


def test_empty_and_monolingual_manifests_rejected():
    with pytest.raises(ValueError, match="empty"):
        build_augmented_dataset(CorpusManifest(set(), []), cfg())
    mono = synthetic_manifest(10, langs=("de",))
    with pytest.raises(InfeasibleError):
        build_augmented_dataset(CorpusManifest(frozenset(LANGS), mono.utterances), cfg())


def test_artificial_testset():
    parts = [
        synthetic_manifest(30, langs=(l,), seed=i, name=name)
        for i, (l, name) in enumerate([("de", "cv"), ("ar", "alj2h"), ("en", "wsj")])
    ]
    c = cfg(frac=0.2, seed=4)
    ds = build_artificial_testset(parts, c)
    assert ds.mono == ()
    assert len(ds.cs_utterances) == 90
    assert ds.provenance["kind"] == "testset"
    assert ds.provenance["config"]["cs_fraction"] == 1.0
    for u in ds.cs_utterances:
        assert any(a != b for a, b in zip(u.segment_langs, u.segment_langs[1:]))
    smaller = build_artificial_testset(parts, c, num_utterances=12)
    assert len(smaller.cs_utterances) == 12


def test_save_load_round_trip(tmp_path, small_manifest):
    ds = build_augmented_dataset(small_manifest, cfg("nodear", frac=0.5, seed=7))
    path = tmp_path / "aug.jsonl"
    save_augmented(ds, path)
    back = load_augmented(path)
    assert back.cs_utterances == ds.cs_utterances
    assert back.mono == ds.mono
    assert back.provenance == ds.provenance
    assert dumps_augmented(back) == path.read_text()
    assert back.provenance["seed"] == 7
    assert back.provenance["config"]["policy"]["name"] == "nodear"


def test_stats_report(small_manifest):
    ds = build_augmented_dataset(small_manifest, cfg("nodear", frac=0.5, seed=2))
    stats = dataset_stats(ds)
    assert stats["transitions"].get("de->ar", 0) == 0
    assert stats["cs_fraction"] == 0.5
    assert stats["coverage_ok"] is True
    assert sum(stats["language_composition"].values()) == pytest.approx(1.0)


def test_materialize_features(tmp_path):
    m = synthetic_manifest(12, seed=5, lo=1, hi=4)
    index = {}
    for k, u in enumerate(m.utterances):
        frames = int(u.duration_s * 10)
        path = tmp_path / f"{u.id}.csfb"
        write_archive(FeatureMatrix(np.full((frames, 40), k, dtype=np.float32)), path)
        index[u.id] = path
    ds = build_augmented_dataset(m, cfg(frac=0.5, seed=1))
    written = materialize_features(ds, index, tmp_path / "cs")
    assert len(written) == len(ds.cs_utterances)
    for u in ds.cs_utterances:
        feats = read_archive(written[u.id])
        parts = [read_archive(index[s]) for s in u.segment_ids]
        assert feats.num_frames == sum(p.num_frames for p in parts)
        np.testing.assert_array_equal(feats.data, np.concatenate([p.data for p in parts]))
