"""Command-line entry point: ``csaug <subcommand> --config run.yaml [flags]``.

Flags override the corresponding config fields. Logs go to stderr; every
output file carries a provenance block (toolkit version, config hash, seed).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import urllib.parse
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from . import __version__
from .augment import (
    AugmentationConfig,
    BucketPlan,
    DEFAULT_BUCKETS,
    InfeasibleError,
    build_artificial_testset,
    build_augmented_dataset,
    dataset_stats,
    load_augmented,
    materialize_features,
    policy_from_name,
    save_augmented,
)
from .corpus import CorpusManifest, ManifestError, load_manifest, merge_manifests
from .features import ArchiveError, FrontendConfig, extract_logmel, read_wav, write_archive
from .scoring import dataset_report, read_transcripts
from .tokenizer import BpeError, encode, load_model, save_model, token_language_attribution, train_bpe

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INFEASIBLE = 0, 2, 3, 4

log = logging.getLogger("csaug")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("level=%(levelname)s cmd=%(name)s msg=%(message)s"))
    root = logging.getLogger("csaug")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def load_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            cfg = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"config file {path}: {e}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        base = path.parent
        cfg["manifests"] = {k: str(base / v) for k, v in (cfg.get("manifests") or {}).items()}
        cfg["test_manifests"] = [str(base / v) for v in cfg.get("test_manifests") or []]
        if cfg.get("out"):
            cfg["out"] = str(base / cfg["out"])
    aug = cfg.setdefault("augment", {}) or {}
    cfg["augment"] = aug
    for flag, key, target in (
        ("seed", "seed", cfg),
        ("workers", "workers", cfg),
        ("out", "out", cfg),
        ("policy", "policy", aug),
        ("cs_fraction", "cs_fraction", aug),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            target[key] = value
    cfg.setdefault("workers", 1)
    cfg.setdefault("out", "out")
    return cfg


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def provenance(cfg: dict, **extra) -> dict:
    return {"toolkit": "csaug", "version": __version__, "config_hash": config_digest(cfg), "seed": cfg.get("seed"), **extra}


def _require_seed(cfg: dict) -> int:
    if cfg.get("seed") is None:
        raise ConfigError("seed must be given explicitly (config 'seed' or --seed)")
    try:
        return int(cfg["seed"])
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}") from None


def _load(paths) -> list[CorpusManifest]:
    manifests = []
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"manifest {p} does not exist")
        manifests.append(load_manifest(p))
    return manifests


def _train_manifests(cfg: dict, args) -> list[tuple[Path, CorpusManifest]]:
    paths = list(getattr(args, "manifest", None) or []) or list(cfg.get("manifests", {}).values())
    if not paths:
        raise ConfigError("no manifests given (config 'manifests' or --manifest)")
    return list(zip(map(Path, paths), _load(paths)))


def _merged(pairs) -> CorpusManifest:
    manifests = [m for _, m in pairs]
    return merge_manifests(manifests)


def _frontend(cfg: dict) -> FrontendConfig:
    try:
        return FrontendConfig(**(cfg.get("frontend") or {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"frontend: {e}") from None


def _augmentation_config(cfg: dict, languages) -> AugmentationConfig:
    aug = cfg["augment"]
    try:
        policy = policy_from_name(str(aug.get("policy", "all")), cfg.get("languages") or languages)
        plan = BucketPlan(
            tuple(tuple(b) for b in aug.get("buckets", DEFAULT_BUCKETS)), float(aug.get("slack_s", 2.0))
        )
        return AugmentationConfig(
            policy=policy,
            cs_fraction=float(aug.get("cs_fraction", 0.5)),
            bucket_plan=plan,
            seed=_require_seed(cfg),
            max_retries=int(aug.get("max_retries", 100)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"augment: {e}") from None


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _extract_one(job):
    utt_id, audio_path, out_path, frontend, meta = job
    try:
        feats = extract_logmel(read_wav(audio_path, frontend), frontend)
        feats.meta.update(meta)
        write_archive(feats, out_path)
        return utt_id, str(out_path), None
    except (OSError, ValueError) as e:
        return utt_id, None, f"{type(e).__name__}: {e}"


def cmd_features(args, cfg) -> int:
    frontend = _frontend(cfg)
    pairs = _train_manifests(cfg, args)
    out = _out_dir(cfg) / "features"
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for path, m in pairs:
        for u in m.utterances:
            utt_id = f"{m.source_name}/{u.id}" if m.source_name else u.id
            audio = Path(u.audio)
            if not audio.is_absolute():
                audio = path.parent / audio
            target = out / (urllib.parse.quote(utt_id, safe="") + ".csfb")
            jobs.append((utt_id, audio, target, frontend, {"toolkit_version": __version__}))
    workers = int(cfg["workers"])
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_extract_one, jobs, chunksize=16))
    else:
        results = [_extract_one(j) for j in jobs]
    failures = [(i, err) for i, _, err in results if err]
    index_path = out / "index.tsv"
    with open(index_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# " + json.dumps(provenance(cfg, frontend=frontend.to_dict()), sort_keys=True) + "\n")
        for utt_id, archive, err in results:
            if err is None:
                f.write(f"{utt_id}\t{Path(archive).name}\n")
    for utt_id, err in failures:
        log.error("utterance %s: %s", utt_id, err)
    log.info("wrote %d archives, %d failures, index %s", len(results) - len(failures), len(failures), index_path)
    return EXIT_DATA if failures else EXIT_OK


def read_feature_index(path: str | Path) -> dict[str, Path]:
    path = Path(path)
    index = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        utt_id, _, archive = line.partition("\t")
        index[utt_id] = path.parent / archive
    return index


def cmd_bpe_train(args, cfg) -> int:
    pairs = _train_manifests(cfg, args)
    texts: dict[str, list[str]] = {}
    for _, m in pairs:
        for u in m.utterances:
            texts.setdefault(u.lang, []).append(u.text)
    vocab_size = args.vocab_size or (cfg.get("bpe") or {}).get("vocab_size", 4000)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = train_bpe(texts, int(vocab_size))
    for w in caught:
        log.warning("%s", w.message)
    path = _out_dir(cfg) / "bpe.model"
    save_model(model, path, provenance(cfg, vocab_size=int(vocab_size)))
    log.info("trained BPE with %d tokens (%d merges) -> %s", len(model), len(model.merges), path)
    log.info("token attribution %s", json.dumps(token_language_attribution(model, texts)))
    return EXIT_OK


def cmd_bpe_encode(args, cfg) -> int:
    model_path = Path(args.model or Path(cfg["out"]) / "bpe.model")
    if not model_path.is_file():
        raise ConfigError(f"BPE model {model_path} does not exist")
    model = load_model(model_path)
    src = Path(args.input)
    if not src.is_file():
        raise ConfigError(f"input manifest {src} does not exist")
    try:
        texts = [(u.id, u.text) for u in load_manifest(src).utterances]
    except ManifestError:
        ds = load_augmented(src)
        # word-local merges make encoding the joined text equal to concatenating segment labels
        texts = [(u.id, u.text) for u in ds.cs_utterances]
        texts += [(f"mono-{i:08d}", u.text) for i, u in enumerate(ds.mono)]
    out = _out_dir(cfg) / (args.output or f"{src.stem}.labels.tsv")
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        f.write("# " + json.dumps(provenance(cfg, model=str(model_path)), sort_keys=True) + "\n")
        for utt_id, text in texts:
            f.write(f"{utt_id}\t{' '.join(map(str, encode(model, text)))}\n")
    log.info("encoded %d transcripts -> %s", len(texts), out)
    return EXIT_OK


def _log_stats(stats: dict) -> None:
    log.info(
        "CS %.2f%% (%d CS, %d mono); buckets %s; coverage %s",
        100 * stats["cs_fraction"],
        stats["num_cs"],
        stats["num_mono"],
        json.dumps({f"{k:g}": v for k, v in stats["bucket_histogram"].items()}),
        stats["coverage_ok"],
    )


def cmd_augment(args, cfg) -> int:
    merged = _merged(_train_manifests(cfg, args))
    acfg = _augmentation_config(cfg, merged.languages)
    aug = cfg["augment"]
    ds = build_augmented_dataset(
        merged, acfg, num_utterances=aug.get("num_utterances"), workers=int(cfg["workers"])
    )
    ds.provenance["run_config_hash"] = config_digest(cfg)
    out = _out_dir(cfg)
    path = out / "augmented.jsonl"
    save_augmented(ds, path)
    _log_stats(dataset_stats(ds))
    if aug.get("materialize"):
        index = aug.get("feature_index") or (out / "features" / "index.tsv")
        written = materialize_features(ds, read_feature_index(index), out / "cs_features")
        log.info("materialized %d concatenated archives", len(written))
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_testset(args, cfg) -> int:
    paths = list(args.manifest or []) or cfg.get("test_manifests") or []
    if not paths:
        raise ConfigError("no test manifests given (config 'test_manifests' or --manifest)")
    manifests = _load(paths)
    languages = frozenset().union(*(m.languages for m in manifests))
    acfg = _augmentation_config(cfg, languages)
    ds = build_artificial_testset(
        manifests, acfg, num_utterances=cfg["augment"].get("testset_utterances"), workers=int(cfg["workers"])
    )
    ds.provenance["run_config_hash"] = config_digest(cfg)
    path = _out_dir(cfg) / "testset.jsonl"
    save_augmented(ds, path)
    _log_stats(dataset_stats(ds))
    log.info("wrote %s", path)
    return EXIT_OK


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_stats(args, cfg) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise ConfigError(f"augmented manifest {path} does not exist")
    ds = load_augmented(path)
    stats = dataset_stats(ds)
    stats["bucket_histogram"] = {f"{k:g}": v for k, v in stats["bucket_histogram"].items()}
    stats["provenance"] = ds.provenance
    _log_stats(dataset_stats(ds))
    _emit(stats, args.report)
    return EXIT_OK


def _read_refs(path: Path) -> dict[str, str]:
    if path.suffix == ".jsonl":
        return {u.id: u.text for u in load_manifest(path).utterances}
    return read_transcripts(path)


def cmd_eval(args, cfg) -> int:
    refs: dict[str, str] = {}
    sets: dict[str, str] = {}
    for p in args.refs:
        p = Path(p)
        if not p.is_file():
            raise ConfigError(f"reference file {p} does not exist")
        for utt_id, text in _read_refs(p).items():
            if utt_id in refs:
                raise DataError(f"id {utt_id!r} appears in more than one reference file")
            refs[utt_id] = text
            sets[utt_id] = p.stem
    if not Path(args.hyps).is_file():
        raise ConfigError(f"hypothesis file {args.hyps} does not exist")
    hyps = read_transcripts(args.hyps)
    try:
        report = dataset_report(refs, hyps, sets=sets if len(args.refs) > 1 else None, embedded_lang=args.embedded_lang)
    except KeyError as e:
        raise DataError(e.args[0]) from None
    report["provenance"] = provenance(cfg, refs=[str(p) for p in args.refs], hyps=str(args.hyps))
    log.info("WER %.2f%% over %d reference words", report["overall"]["wer_percent"], report["overall"]["ref_words"])
    if "embedded_accuracy" in report:
        acc = report["embedded_accuracy"]
        log.info("embedded-language (%s) word accuracy %.2f%% (%d/%d)", acc["lang"], acc["percent"], acc["correct"], acc["total"])
    _emit(report, args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--policy", help="transition policy name, e.g. all, nodear, nodex, odex")
    common.add_argument("--cs-fraction", type=float, dest="cs_fraction")
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="csaug", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"csaug {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", parents=[common], help="extract log-Mel archives for manifests")
    p.add_argument("--manifest", action="append", help="manifest file (repeatable)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("bpe-train", parents=[common], help="train the joint BPE model")
    p.add_argument("--manifest", action="append")
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.set_defaults(func=cmd_bpe_train)

    p = sub.add_parser("bpe-encode", parents=[common], help="encode transcripts of a manifest")
    p.add_argument("input", help="corpus or augmented manifest")
    p.add_argument("--model")
    p.add_argument("--output", help="file name inside the output directory")
    p.set_defaults(func=cmd_bpe_encode)

    p = sub.add_parser("augment", parents=[common], help="build an augmented training manifest")
    p.add_argument("--manifest", action="append")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("testset", parents=[common], help="build an artificial CS-only test set")
    p.add_argument("--manifest", action="append")
    p.set_defaults(func=cmd_testset)

    p = sub.add_parser("stats", parents=[common], help="check an augmented manifest")
    p.add_argument("manifest")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", parents=[common], help="score hypotheses against references")
    p.add_argument("--refs", action="append", required=True, help="reference TSV or manifest (repeatable)")
    p.add_argument("--hyps", required=True, help="hypothesis TSV: id<TAB>text")
    p.add_argument("--embedded-lang", dest="embedded_lang", help="report word accuracy for this tagged language")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = load_config(args)
        return args.func(args, cfg)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except InfeasibleError as e:
        log.error("infeasible: %s", e)
        return EXIT_INFEASIBLE
    except (DataError, ManifestError, ArchiveError, BpeError, KeyError, ValueError) as e:
        log.error("data error: %s", e.args[0] if e.args else e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
