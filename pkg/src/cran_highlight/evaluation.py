"""Overlap / recall metrics, per-genre reports and attention analyses."""
import csv
import json
import logging
import math
from dataclasses import dataclass

import jsonschema
import numpy as np

from .errors import InvalidInputError
from .highlight import HighlightSpan, mean_energy, upsample_attention

log = logging.getLogger(__name__)


@dataclass
class GroundTruth:
    track_id: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not 0.0 <= self.start_s < self.end_s:
            raise InvalidInputError(f"ground truth for {self.track_id}: need 0 <= start < end")


def _interval(x):
    if isinstance(x, HighlightSpan):
        return x.start_s, x.end_s
    if isinstance(x, GroundTruth):
        return x.start_s, x.end_s
    start, end = x
    return float(start), float(end)


def overlap(gt, h):
    """Seconds of intersection between two intervals."""
    a0, a1 = _interval(gt)
    b0, b1 = _interval(h)
    return max(0.0, min(a1, b1) - max(a0, b0))


def recall_bit(gt, h):
    """1 when the overlap is strictly more than half the highlight's length."""
    h0, h1 = _interval(h)
    if not h1 > h0:
        raise InvalidInputError("highlight duration must be positive")
    return int(overlap(gt, h) > 0.5 * (h1 - h0))


def recall_at_k(predicted, true_genres, k=3):
    true_genres = set(true_genres)
    if not true_genres:
        raise InvalidInputError("true genre set is empty")
    return int(any(p in true_genres for p in list(predicted)[:k]))


def reduce_ground_truth(intervals):
    """One interval per track: the annotation with the median start (lower median)."""
    if isinstance(intervals, tuple) and len(intervals) == 2 and not isinstance(intervals[0], tuple):
        return intervals
    ordered = sorted(intervals)
    return ordered[(len(ordered) - 1) // 2]


def _aggregate(rows):
    overlaps = np.array([r["overlap_s"] for r in rows], dtype=np.float64)
    recalls = np.array([r["recall"] for r in rows], dtype=np.float64)
    return {
        "n": len(rows),
        "overlap_mean": float(overlaps.mean()),
        "overlap_std": float(overlaps.std()),
        "recall": float(recalls.mean()),
    }


def score_extractor(manifest, ground_truth, spans):
    """Per-track rows plus overall and per-genre aggregates for one extractor.

    ``ground_truth`` maps track_id to one interval or a list of annotated
    intervals; ``spans`` maps track_id to HighlightSpan.
    """
    rows, skipped = [], {"missing_ground_truth": [], "missing_highlight": []}
    for rec in sorted(manifest.records, key=lambda r: r.track_id):
        if rec.track_id not in ground_truth:
            skipped["missing_ground_truth"].append(rec.track_id)
            continue
        if rec.track_id not in spans:
            skipped["missing_highlight"].append(rec.track_id)
            continue
        gt = reduce_ground_truth(ground_truth[rec.track_id])
        span = spans[rec.track_id]
        rows.append({
            "track_id": rec.track_id,
            "genres": list(rec.genres),
            "start_s": span.start_s,
            "duration_s": span.duration_s,
            "overlap_s": overlap(gt, span),
            "recall": recall_bit(gt, span),
            "qual": None,
        })
    for key, ids in skipped.items():
        if ids:
            log.warning("skipped tracks", extra={"fields": {"reason": key, "count": len(ids)}})
    per_genre = {}
    genres = sorted({g for r in rows for g in r["genres"]})
    for g in genres:
        per_genre[g] = _aggregate([r for r in rows if g in r["genres"]])
    return {
        "overall": _aggregate(rows) if rows else None,
        "per_genre": per_genre,
        "rows": rows,
        "skipped": skipped,
    }


def build_report(manifest, ground_truth, spans_by_extractor, classification=None):
    report = {
        "extractors": {name: score_extractor(manifest, ground_truth, spans)
                       for name, spans in sorted(spans_by_extractor.items())},
    }
    if classification is not None:
        report["classification"] = classification
    validate_report(report)
    return report


def classification_recall(model, examples, k=3):
    """Recall@k of a model over (mel, genre index set) pairs."""
    from .model import topk_from_probs

    hits = [recall_at_k(topk_from_probs(model.forward(mel).genre_probs, k), genres, k)
            for mel, genres in examples]
    return {"n": len(hits), f"recall@{k}": float(np.mean(hits)) if hits else None}


def evaluate(manifest, ground_truth, extractors, model=None, mel_loader=None, rankings=None):
    """Run named extractor callables over a manifest and score them.

    ``extractors`` maps a name to ``fn(record) -> HighlightSpan``.  With a
    model and ``mel_loader(record) -> MelSpectrogram``, Recall@3 on the test
    split of each manifest in ``rankings`` (default: just ``manifest``) is added.
    """
    spans = {}
    for name, fn in extractors.items():
        spans[name] = {r.track_id: fn(r) for r in sorted(manifest.records, key=lambda r: r.track_id)}
    classification = None
    if model is not None:
        classification = {}
        for ranked in rankings or [manifest]:
            test = sorted(ranked.split("test"), key=lambda r: r.track_id)
            pairs = [(mel_loader(r), r.genre_indices) for r in test]
            classification[ranked.ranking_name] = classification_recall(model, pairs)
    return build_report(manifest, ground_truth, spans, classification)


# -- report I/O ----------------------------------------------------------------

_AGG = {
    "type": "object",
    "required": ["n", "overlap_mean", "overlap_std", "recall"],
    "properties": {
        "n": {"type": "integer", "minimum": 0},
        "overlap_mean": {"type": "number", "minimum": 0},
        "overlap_std": {"type": "number", "minimum": 0},
        "recall": {"type": "number", "minimum": 0, "maximum": 1},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["extractors"],
    "properties": {
        "extractors": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["overall", "per_genre", "rows", "skipped"],
                "properties": {
                    "overall": {"oneOf": [_AGG, {"type": "null"}]},
                    "per_genre": {"type": "object", "additionalProperties": _AGG},
                    "rows": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["track_id", "genres", "overlap_s", "recall"],
                            "properties": {
                                "track_id": {"type": "string"},
                                "genres": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                                "overlap_s": {"type": "number", "minimum": 0},
                                "recall": {"enum": [0, 1]},
                                "qual": {"type": ["number", "null"]},
                            },
                        },
                    },
                    "skipped": {"type": "object"},
                },
            },
        },
        "classification": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["n", "recall@3"],
                "properties": {"n": {"type": "integer"}, "recall@3": {"type": ["number", "null"]}},
            },
        },
    },
}


def validate_report(report):
    jsonschema.validate(report, REPORT_SCHEMA)


def dumps_report(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def format_table(report):
    """Plain-text summary plus a genre x extractor table of mean overlap."""
    names = sorted(report["extractors"])
    lines = [f"{'extractor':<14}{'overlap (s)':>18}{'recall':>9}"]
    for name in names:
        o = report["extractors"][name]["overall"]
        if o is None:
            lines.append(f"{name:<14}{'-':>18}{'-':>9}")
        else:
            lines.append(f"{name:<14}{o['overlap_mean']:>10.2f} ± {o['overlap_std']:<5.2f}{o['recall']:>9.3f}")
    lines.append("")
    genres = sorted({g for n in names for g in report["extractors"][n]["per_genre"]})
    lines.append(f"{'genre':<10}{'size':>6}" + "".join(f"{n:>10}" for n in names))
    for g in genres:
        sizes = [report["extractors"][n]["per_genre"].get(g, {}).get("n", 0) for n in names]
        cells = []
        for n in names:
            agg = report["extractors"][n]["per_genre"].get(g)
            cells.append(f"{agg['overlap_mean']:>10.2f}" if agg else f"{'-':>10}")
        lines.append(f"{g:<10}{max(sizes):>6}" + "".join(cells))
    if "classification" in report:
        lines.append("")
        for ranking, res in sorted(report["classification"].items()):
            r3 = res["recall@3"]
            lines.append(f"Recall@3 [{ranking}]: {'-' if r3 is None else f'{r3:.3f}'} (n={res['n']})")
    return "\n".join(lines) + "\n"


# -- attention analyses --------------------------------------------------------

def attention_stats(profiles_by_genre):
    """Per-genre slotwise mean and (population) standard deviation."""
    out = {}
    for genre, profiles in sorted(profiles_by_genre.items()):
        if len(profiles) == 0:
            raise InvalidInputError(f"no attention profiles for genre {genre}")
        arr = np.asarray(profiles, dtype=np.float64)
        out[genre] = (arr.mean(axis=0), arr.std(axis=0))
    return out


def write_attention_stats(stats, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["genre", "slot", "mean", "std"])
        for genre, (mean, std) in sorted(stats.items()):
            for t, (m, s) in enumerate(zip(mean, std)):
                w.writerow([genre, t, repr(float(m)), repr(float(s))])


def pearson(a, b):
    """Pearson correlation, or None when either series is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or np.all(a == a[0]) or np.all(b == b[0]):
        return None
    da, db = a - a.mean(), b - b.mean()
    na, nb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def attention_energy_correlation(alpha, mel, normalize=True):
    values = getattr(mel, "values", mel)
    frames = np.shape(values)[1]
    return pearson(upsample_attention(alpha, frames), mean_energy(values, normalize))


def aggregate_correlations(per_track, genres_by_track):
    """Mean coefficient per genre over tracks where it is defined."""
    by_genre = {}
    for track_id, r in per_track.items():
        if r is None:
            continue
        for g in genres_by_track[track_id]:
            by_genre.setdefault(g, []).append(r)
    return {g: {"n": len(v), "mean": float(np.mean(v))} for g, v in sorted(by_genre.items())}


def write_correlations(per_track, genres_by_track, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id", "genres", "pearson"])
        for track_id in sorted(per_track):
            r = per_track[track_id]
            w.writerow([track_id, "|".join(genres_by_track[track_id]), "" if r is None else repr(r)])
