"""Glue between manifests, the spectrogram cache, models and highlight records."""
import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor

import numpy as np

from . import audio, highlight
from .dataset import GENRE_INDEX, target_vector
from .errors import CacheError, CranError, InvalidInputError
from .training import Example

log = logging.getLogger(__name__)

CACHE_ENV = "CRAN_CACHE_DIR"
INDEX_NAME = "index.json"
RECORD_FIELDS = ["track_id", "start_s", "duration_s", "score", "extractor_name"]


def resolve_cache_dir(path=None):
    path = path or os.environ.get(CACHE_ENV)
    if not path:
        raise InvalidInputError(f"no cache directory given and {CACHE_ENV} is not set")
    return path


def parallel_map(fn, items, jobs=1, processes=False):
    """Map in input order over a bounded worker pool."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    pool = ProcessPoolExecutor if processes else ThreadPoolExecutor
    with pool(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- spectrogram cache ---------------------------------------------------------

def cache_path(cache_dir, track_id):
    return os.path.join(cache_dir, f"{track_id}.mel")


def read_index(cache_dir):
    path = os.path.join(cache_dir, INDEX_NAME)
    if not os.path.exists(path):
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CacheError(f"{path}: unreadable cache index ({exc})") from None


def write_index(cache_dir, index):
    path = os.path.join(cache_dir, INDEX_NAME)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(index, fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def _compute_entry(job):
    track_id, path, digest, out = job
    try:
        buf = audio.load_track(path)
        mel = audio.mel_spectrogram(buf)
        audio.save_mel(out, mel)
    except (CranError, OSError) as exc:
        return track_id, None, str(exc)
    return track_id, {"sha256": digest, "n_samples": len(buf), "duration_s": buf.duration}, None


def preprocess(manifest, cache_dir, jobs=1):
    """Cache one mel spectrogram per track, skipping entries whose audio hash is unchanged.

    Returns ``{"processed": [...], "skipped": [...], "failed": [(track_id, reason)]}``.
    """
    os.makedirs(cache_dir, exist_ok=True)
    index = read_index(cache_dir)
    summary = {"processed": [], "skipped": [], "failed": []}
    jobs_todo = []
    for rec in sorted(manifest.records, key=lambda r: r.track_id):
        try:
            digest = sha256_file(rec.path)
        except OSError as exc:
            summary["failed"].append((rec.track_id, str(exc)))
            continue
        entry = index.get(rec.track_id)
        out = cache_path(cache_dir, rec.track_id)
        if entry and entry.get("sha256") == digest and os.path.exists(out):
            summary["skipped"].append(rec.track_id)
            continue
        jobs_todo.append((rec.track_id, rec.path, digest, out))
    for track_id, entry, err in parallel_map(_compute_entry, jobs_todo, jobs, processes=True):
        if err is not None:
            index.pop(track_id, None)
            summary["failed"].append((track_id, err))
            log.warning("preprocess failed", extra={"fields": {"track_id": track_id, "error": err}})
        else:
            index[track_id] = entry
            summary["processed"].append(track_id)
    summary["failed"].sort()
    write_index(cache_dir, index)
    return summary


def load_cached(cache_dir, track_id, index=None):
    """(MelSpectrogram, index entry) for a cached track."""
    index = read_index(cache_dir) if index is None else index
    path = cache_path(cache_dir, track_id)
    if track_id not in index or not os.path.exists(path):
        raise CacheError(f"no cached spectrogram for {track_id} in {cache_dir}; run preprocess first")
    return audio.load_mel(path), index[track_id]


def missing_caches(manifest, cache_dir, records=None):
    index = read_index(cache_dir)
    records = manifest.records if records is None else records
    return [r.track_id for r in records
            if r.track_id not in index or not os.path.exists(cache_path(cache_dir, r.track_id))]


def build_examples(records, cache_dir, n_genres):
    index = read_index(cache_dir)
    out = []
    for rec in sorted(records, key=lambda r: r.track_id):
        mel, _ = load_cached(cache_dir, rec.track_id, index)
        idx = tuple(GENRE_INDEX[g] for g in rec.genres)
        out.append(Example(rec.track_id, mel.values.astype(np.float64), target_vector(idx, n_genres), idx))
    return out


# -- highlight records ---------------------------------------------------------

def span_record(track_id, span):
    return {
        "track_id": track_id,
        "start_s": float(span.start_s),
        "duration_s": float(span.duration_s),
        "score": None if span.score is None else float(span.score),
        "extractor_name": span.extractor,
    }


def extract_records(manifest, extractor, cache_dir=None, model=None, gamma=highlight.GAMMA,
                    beta=highlight.BETA, seconds=highlight.HIGHLIGHT_SECONDS, jobs=1, attention_out=None):
    """Highlight records for every manifest track, sorted by track_id.

    ``extractor`` is ``"model"``, ``"energy"`` or ``"f1m"``.  With
    ``attention_out`` a dict is filled with each track's attention profile.
    """
    records = sorted(manifest.records, key=lambda r: r.track_id)
    if extractor == "f1m":
        return [span_record(r.track_id, highlight.f1m_baseline(audio.wav_duration(r.path))) for r in records]
    if extractor not in ("model", "energy"):
        raise InvalidInputError(f"unknown extractor {extractor!r}")
    if extractor == "model" and model is None:
        raise InvalidInputError("the model extractor needs a checkpoint")
    if extractor == "model" and not model.config.attention:
        # raises NoAttentionError before any cache is read
        model.attention_profile(np.zeros((model.config.n_mels, model.config.n_frames)))
    index = read_index(cache_dir)

    def one(rec):
        mel, entry = load_cached(cache_dir, rec.track_id, index)
        if extractor == "energy":
            return rec.track_id, None, highlight.energy_baseline(mel, beta, seconds, entry["n_samples"])
        alpha = model.attention_profile(mel)
        name = model.config.variant.lower()
        span = highlight.extract(mel, alpha, gamma, beta, seconds, entry["n_samples"], name)
        return rec.track_id, alpha, span

    out = []
    for track_id, alpha, span in parallel_map(one, records, jobs):
        out.append(span_record(track_id, span))
        if attention_out is not None and alpha is not None:
            attention_out[track_id] = alpha
    return out


def write_records(records, path):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in RECORD_FIELDS})


def read_records(path):
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                out.append(r)
                missing = [k for k in ("track_id", "start_s", "duration_s") if k not in r]
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path}:{line_no}: bad JSON ({exc})") from None
            if missing:
                raise InvalidInputError(f"{path}:{line_no}: missing field(s) {', '.join(missing)}")
    return out


def records_to_spans(records):
    """Group records by extractor name into {name: {track_id: HighlightSpan}}."""
    out = {}
    for r in records:
        name = r.get("extractor_name") or "unnamed"
        span = highlight.HighlightSpan(float(r["start_s"]), float(r["duration_s"]), r.get("score"), name)
        out.setdefault(name, {})[r["track_id"]] = span
    return out


def write_attention_csv(alpha, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "alpha"])
        for t, a in enumerate(alpha):
            w.writerow([t, repr(float(a))])
