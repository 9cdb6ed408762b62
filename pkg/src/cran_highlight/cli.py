"""Command line entry point: ``cran {synth,preprocess,train,extract,eval}``."""
import argparse
import json
import logging
import os
import sys

from . import evaluation, highlight, model as model_mod, pipeline
from .dataset import GENRE_INDEX, load_ground_truth, load_manifest, synth_corpus
from .errors import CranError, NoAttentionError
from .model import CRAN, ModelConfig, VARIANTS
from .training import TrainConfig, train

log = logging.getLogger("cran_highlight")


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        out = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        out.update(getattr(record, "fields", {}) or {})
        return json.dumps(out, sort_keys=True)


def setup_logging(verbose):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("cran_highlight")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False


def _unit_interval(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{text} must be > 0")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return v


def cmd_synth(args, parser):
    if args.n < 1:
        parser.error("--n must be at least 1")
    if args.n < args.genres:
        parser.error(f"--n ({args.n}) must be at least --genres ({args.genres})")
    synth_corpus(args.n, args.genres, args.seed, args.out, args.min_duration, args.max_duration)
    print(os.path.join(args.out, "manifest.csv"))
    return 0


def cmd_preprocess(args, parser):
    cache_dir = pipeline.resolve_cache_dir(args.cache_dir)
    manifest = load_manifest(args.manifest, check_files=False)
    summary = pipeline.preprocess(manifest, cache_dir, args.jobs)
    print(f"processed {len(summary['processed'])}, skipped {len(summary['skipped'])}, "
          f"failed {len(summary['failed'])}")
    for track_id, reason in summary["failed"]:
        print(f"  FAILED {track_id}: {reason}")
    return 1 if summary["failed"] else 0


def _model_config(args, manifest):
    variant = args.variant.upper()
    if args.tiny:
        genres = args.genres or max(GENRE_INDEX[g] for r in manifest.records for g in r.genres) + 1
        return ModelConfig.tiny(variant=variant, genres=genres, seed=args.seed)
    return ModelConfig(variant=variant, genres=args.genres or len(GENRE_INDEX), seed=args.seed)


def cmd_train(args, parser):
    cache_dir = pipeline.resolve_cache_dir(args.cache_dir)
    manifest = load_manifest(args.manifest, check_files=False)
    cfg = _model_config(args, manifest)
    train_recs, val_recs = manifest.split("train"), manifest.split("val")
    if args.all_tracks:
        train_recs, val_recs = list(manifest.records), []
    missing = pipeline.missing_caches(manifest, cache_dir, train_recs + val_recs)
    if missing:
        print(f"error: {len(missing)} track(s) have no cached spectrogram (run preprocess): "
              f"{', '.join(missing[:10])}", file=sys.stderr)
        return 1
    net = CRAN(cfg)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, decay=args.decay,
                       l2=args.l2, seed=args.seed, stop_loss=args.stop_loss)
    if args.epochs == 0:
        ckpt = model_mod.Checkpoint.from_model(net, {"epoch": 0, "epochs_run": 0, "history": []})
    else:
        train_set = pipeline.build_examples(train_recs, cache_dir, cfg.genres)
        val_set = pipeline.build_examples(val_recs, cache_dir, cfg.genres)
        ckpt = train(net, train_set, val_set, tcfg)
    model_mod.save(ckpt, args.out)
    metrics_path = args.metrics or os.path.splitext(args.out)[0] + ".metrics.json"
    metrics = {"config": cfg.to_dict(), "config_hash": cfg.hash(), **ckpt.metadata}
    with open(metrics_path, "w") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(args.out)
    return 0


def cmd_extract(args, parser):
    manifest = load_manifest(args.manifest, check_files=args.extractor == "f1m")
    net = None
    cache_dir = None
    if args.extractor != "f1m":
        cache_dir = pipeline.resolve_cache_dir(args.cache_dir)
    if args.extractor == "model":
        if not args.checkpoint:
            parser.error("--extractor model needs --checkpoint")
        net = model_mod.load(args.checkpoint).build_model()
    if args.dump_attention and args.extractor != "model":
        parser.error("--dump-attention needs --extractor model")
    attention = {} if args.dump_attention else None
    try:
        records = pipeline.extract_records(manifest, args.extractor, cache_dir, net, args.gamma, args.beta,
                                           args.seconds, args.jobs, attention)
    except NoAttentionError as exc:
        print(f"error: {exc}; rerun with --extractor energy", file=sys.stderr)
        return 2
    pipeline.write_records(records, args.out)
    pipeline.write_records_csv(records, args.csv or os.path.splitext(args.out)[0] + ".csv")
    if attention is not None:
        os.makedirs(args.dump_attention, exist_ok=True)
        for track_id, alpha in sorted(attention.items()):
            pipeline.write_attention_csv(alpha, os.path.join(args.dump_attention, f"{track_id}.csv"))
    print(f"wrote {len(records)} highlight records to {args.out}")
    return 0


def cmd_eval(args, parser):
    manifests = [load_manifest(p, check_files=False) for p in args.manifest]
    main_manifest = manifests[0]
    gt = load_ground_truth(args.ground_truth)
    records = []
    for path in args.records:
        records.extend(pipeline.read_records(path))
    spans = pipeline.records_to_spans(records)
    known = set(main_manifest.by_id())
    stray = sorted({r["track_id"] for r in records} - known)
    net = None
    cache_dir = None
    if args.checkpoint or args.attention_stats:
        cache_dir = pipeline.resolve_cache_dir(args.cache_dir)
    if args.checkpoint:
        net = model_mod.load(args.checkpoint).build_model()
    classification = None
    if net is not None:
        index = pipeline.read_index(cache_dir)
        classification = {}
        for m in manifests:
            test = sorted(m.split("test"), key=lambda r: r.track_id)
            pairs = [(pipeline.load_cached(cache_dir, r.track_id, index)[0],
                      {GENRE_INDEX[g] for g in r.genres}) for r in test]
            classification[m.ranking_name] = evaluation.classification_recall(net, pairs)
    report = evaluation.build_report(main_manifest, gt, spans, classification)
    with open(args.out, "w") as fh:
        fh.write(evaluation.dumps_report(report))
    table = evaluation.format_table(report)
    with open(args.table or os.path.splitext(args.out)[0] + ".txt", "w") as fh:
        fh.write(table)
    sys.stdout.write(table)
    if args.attention_stats:
        if net is None or not net.config.attention:
            parser.error("--attention-stats needs --checkpoint of a variant with attention")
        _attention_outputs(net, main_manifest, cache_dir, args.attention_stats)
    problems = list(stray)
    for name, res in sorted(report["extractors"].items()):
        for reason, ids in sorted(res["skipped"].items()):
            problems.extend(f"{name}:{reason}:{i}" for i in ids)
    if problems:
        print(f"id mismatches: {len(problems)}", file=sys.stderr)
        for p in problems[:20]:
            print(f"  {p}", file=sys.stderr)
        return 1
    return 0


def _attention_outputs(net, manifest, cache_dir, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    index = pipeline.read_index(cache_dir)
    profiles, corr, genres_by_track = {}, {}, {}
    for rec in sorted(manifest.records, key=lambda r: r.track_id):
        mel, _ = pipeline.load_cached(cache_dir, rec.track_id, index)
        alpha = net.attention_profile(mel)
        for g in rec.genres:
            profiles.setdefault(g, []).append(alpha)
        corr[rec.track_id] = evaluation.attention_energy_correlation(alpha, mel)
        genres_by_track[rec.track_id] = list(rec.genres)
    evaluation.write_attention_stats(evaluation.attention_stats(profiles),
                                     os.path.join(out_dir, "attention_stats.csv"))
    evaluation.write_correlations(corr, genres_by_track, os.path.join(out_dir, "attention_energy_corr.csv"))
    agg = evaluation.aggregate_correlations(corr, genres_by_track)
    with open(os.path.join(out_dir, "attention_energy_corr_by_genre.csv"), "w") as fh:
        fh.write("genre,n,mean\n")
        for g, v in agg.items():
            fh.write(f"{g},{v['n']},{v['mean']!r}\n")


def build_parser():
    p = argparse.ArgumentParser(prog="cran", description="Music highlight extraction with attention.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress as JSON lines on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a seeded synthetic corpus")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--genres", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--min-duration", type=_positive_float, default=60.0)
    s.add_argument("--max-duration", type=_positive_float, default=240.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="cache mel spectrograms for a manifest")
    s.add_argument("manifest")
    s.add_argument("--cache-dir", help=f"defaults to ${pipeline.CACHE_ENV}")
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a genre classifier")
    s.add_argument("manifest")
    s.add_argument("--cache-dir")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--metrics", help="metrics JSON path (default: next to the checkpoint)")
    s.add_argument("--variant", default="cran", choices=[v.lower() for v in VARIANTS])
    s.add_argument("--tiny", action="store_true", help="small architecture for desk-scale runs")
    s.add_argument("--genres", type=_positive_int, help="size of the genre head")
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--batch-size", type=_positive_int, default=16)
    s.add_argument("--lr", type=_positive_float, default=0.005)
    s.add_argument("--decay", type=float, default=0.01)
    s.add_argument("--l2", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stop-loss", type=float, help="stop when inference-mode train loss drops below this")
    s.add_argument("--all-tracks", action="store_true", help="train on every track, ignoring splits")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", help="emit one highlight record per track")
    s.add_argument("manifest")
    s.add_argument("--cache-dir")
    s.add_argument("--checkpoint")
    s.add_argument("--extractor", default="model", choices=["model", "energy", "f1m"])
    s.add_argument("--gamma", type=_unit_interval, default=highlight.GAMMA)
    s.add_argument("--beta", type=_unit_interval, default=highlight.BETA)
    s.add_argument("--seconds", type=_positive_float, default=highlight.HIGHLIGHT_SECONDS)
    s.add_argument("--out", required=True, help="JSON-lines output")
    s.add_argument("--csv", help="CSV copy of the records (default: next to --out)")
    s.add_argument("--dump-attention", metavar="DIR", help="write per-track attention CSVs")
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("eval", help="score highlight records against ground truth")
    s.add_argument("--records", action="append", required=True)
    s.add_argument("--ground-truth", required=True)
    s.add_argument("--manifest", action="append", required=True,
                   help="repeat for extra rankings; the first supplies tracks and genres")
    s.add_argument("--checkpoint")
    s.add_argument("--cache-dir")
    s.add_argument("--out", required=True, help="report JSON")
    s.add_argument("--table", help="text table path (default: next to --out)")
    s.add_argument("--attention-stats", metavar="DIR")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args, parser)
    except CranError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
