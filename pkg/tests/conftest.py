import json

import numpy as np
import pytest

from csaug.corpus import CorpusManifest, Utterance

LANGS = ("ar", "de", "en")


def synthetic_manifest(n, langs=LANGS, seed=0, lo=1.0, hi=10.0, name="syn"):
    rng = np.random.default_rng(seed)
    durs = rng.uniform(lo, hi, size=n)
    utts = [
        Utterance(f"u{i:06d}", langs[i % len(langs)], f"wav/u{i:06d}.wav", round(float(d), 3), f"text {i}")
        for i, d in enumerate(durs)
    ]
    return CorpusManifest(frozenset(langs), utts, name)


def write_jsonl(path, header, records):
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for r in records:
            f.write((r if isinstance(r, str) else json.dumps(r, ensure_ascii=False)) + "\n")
    return path


@pytest.fixture
def small_manifest():
    return synthetic_manifest(60, seed=3)


def pooled_manifest(sizes, seed=0, lo=1.0, hi=4.0, name="pooled"):
    """Manifest with ``sizes[lang]`` utterances per language, shuffled."""
    rng = np.random.default_rng(seed)
    utts = []
    for lang in sorted(sizes):
        for i in range(sizes[lang]):
            utts.append(
                Utterance(f"{lang}-{i:04d}", lang, f"{lang}/{i}.wav", round(float(rng.uniform(lo, hi)), 3), f"{lang} {i}")
            )
    order = rng.permutation(len(utts))
    return CorpusManifest(frozenset(sizes), [utts[i] for i in order], name)



# one line per criterion; parametrized cases fold into their criterion
_criteria: dict[str, list[bool]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1].split("[")[0]
        _criteria.setdefault(name, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    from test_acceptance import TITLES

    terminalreporter.section("acceptance criteria")
    for name, results in sorted(_criteria.items()):
        status = "PASS" if all(results) else "FAIL"
        suffix = f" ({sum(results)}/{len(results)} cases)" if len(results) > 1 else ""
        terminalreporter.write_line(f"[{status}] {TITLES.get(name, name)}{suffix}")
