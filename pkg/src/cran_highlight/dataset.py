"""Track manifests, rank-based splits and a seeded synthetic corpus."""
import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .audio import HOP, SAMPLE_RATE, SampleBuffer, write_wav
from .errors import DuplicateTrackError, InvalidInputError, ManifestError, UnknownGenreError

GENRES = ("Dance", "Ballad", "Teuroteu", "Hiphop", "Rock", "Jazz", "R&B", "Indie", "Classic", "Elec")
GENRE_INDEX = {g: i for i, g in enumerate(GENRES)}

MANIFEST_HEADER = ["track_id", "path", "genres", "rank_percentile"]
GT_HEADER = ["track_id", "start_s", "end_s"]

# half-open percentile ranges
SPLIT_RANGES = (("test", 0.0, 10.0), ("val", 10.0, 20.0), ("train", 20.0, 100.0))


@dataclass
class TrackRecord:
    track_id: str
    path: str
    genres: tuple
    rank_percentile: Optional[float]
    ground_truth: Optional[tuple] = None

    def __post_init__(self):
        self.genres = tuple(self.genres)
        if not self.genres:
            raise ManifestError(f"track {self.track_id} has no genre")
        for g in self.genres:
            if g not in GENRE_INDEX:
                raise UnknownGenreError(
                    f"track {self.track_id}: unknown genre {g!r}; valid genres are {', '.join(GENRES)}")
        if self.rank_percentile is not None and not 0.0 <= self.rank_percentile < 100.0:
            raise ManifestError(f"track {self.track_id}: rank percentile {self.rank_percentile} not in [0, 100)")

    @property
    def genre_indices(self):
        return tuple(GENRE_INDEX[g] for g in self.genres)


@dataclass
class Manifest:
    records: list
    ranking_name: str = "popularity"
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.track_id in seen:
                raise DuplicateTrackError(f"duplicate track_id {r.track_id!r}")
            seen.add(r.track_id)
        if not self.splits and all(r.rank_percentile is not None for r in self.records):
            self.splits = split_by_rank(self)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self):
        return {r.track_id: r for r in self.records}

    def split(self, name):
        return [r for r in self.records if self.splits.get(r.track_id) == name]


def split_for_percentile(p):
    for name, lo, hi in SPLIT_RANGES:
        if lo <= p < hi:
            return name
    raise ManifestError(f"rank percentile {p} outside [0, 100)")


def split_by_rank(manifest):
    """Map each track to test [0,10), val [10,20) or train [20,100)."""
    out = {}
    for r in manifest.records:
        if r.rank_percentile is None:
            raise ManifestError(f"track {r.track_id} has no rank percentile")
        out[r.track_id] = split_for_percentile(r.rank_percentile)
    return out


def target_vector(genres, n_genres):
    """Multi-hot genre vector normalized to sum 1."""
    idx = [GENRE_INDEX[g] if isinstance(g, str) else int(g) for g in genres]
    if not idx:
        raise InvalidInputError("empty genre set")
    if max(idx) >= n_genres:
        raise InvalidInputError(f"genre index {max(idx)} does not fit a {n_genres}-genre model")
    t = np.zeros(n_genres)
    t[sorted(set(idx))] = 1.0
    return t / t.sum()


def load_manifest(path, ranking_name=None, check_files=True):
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[:4]) != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            audio = row["path"]
            if not os.path.isabs(audio):
                audio = os.path.join(base, audio)
            if check_files and not os.path.exists(audio):
                raise ManifestError(f"{path}:{line_no}: audio file {audio} not found")
            rank = row["rank_percentile"].strip()
            try:
                rank = float(rank) if rank else None
            except ValueError:
                raise ManifestError(f"{path}:{line_no}: bad rank percentile {rank!r}") from None
            genres = [g.strip() for g in row["genres"].split("|") if g.strip()]
            records.append(TrackRecord(row["track_id"], audio, genres, rank))
    if ranking_name is None:
        ranking_name = os.path.splitext(os.path.basename(path))[0]
    return Manifest(records, ranking_name)


def save_manifest(manifest, path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            audio = os.path.abspath(r.path)
            rel = os.path.relpath(audio, base)
            if not rel.startswith(".."):
                audio = rel
            rank = "" if r.rank_percentile is None else repr(float(r.rank_percentile))
            w.writerow([r.track_id, audio, "|".join(r.genres), rank])


def load_ground_truth(path):
    """Read ``track_id,start_s,end_s``; a track may carry several annotations."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[:3]) != GT_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(GT_HEADER)}")
        for row in reader:
            start, end = float(row["start_s"]), float(row["end_s"])
            if not 0.0 <= start < end:
                raise ManifestError(f"{path}: bad interval [{start}, {end}) for {row['track_id']}")
            out.setdefault(row["track_id"], []).append((start, end))
    return out


def save_ground_truth(gt, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GT_HEADER)
        for track_id in sorted(gt):
            intervals = gt[track_id]
            if isinstance(intervals, tuple):
                intervals = [intervals]
            for start, end in intervals:
                w.writerow([track_id, repr(float(start)), repr(float(end))])


# -- synthetic corpus ----------------------------------------------------------

CHORUS_SECONDS = 30.0
MIN_CHORUS_RATIO = 2.0


def genre_recipe(g):
    """Deterministic timbre/tempo parameters for genre index g."""
    return {
        "root_hz": 110.0 * 2.0 ** (g * 5 / 12.0),
        "harmonics": 2 + g % 4,
        "rolloff": 0.45 + 0.05 * g,
        "am_hz": 0.6 + 0.7 * g,
        "bpm": 70.0 + 13.0 * g,
        # chorus adds a high partial stack whose position depends on genre
        "chorus_hz": 700.0 + 230.0 * g,
    }


def _tone_stack(t, f0, n, rolloff, phase_rng):
    out = np.zeros_like(t)
    for k in range(1, n + 1):
        out += rolloff ** (k - 1) * np.sin(2 * np.pi * f0 * k * t + phase_rng.uniform(0, 2 * np.pi))
    return out


def frame_energies(samples, hop=HOP):
    n = len(samples) // hop
    frames = samples[: n * hop].reshape(n, hop)
    return (frames ** 2).mean(axis=1)


def chorus_energy_ratio(samples, start_s, duration_s=CHORUS_SECONDS, rate=SAMPLE_RATE, hop=HOP):
    """Mean frame energy inside the chorus over mean frame energy outside it."""
    e = frame_energies(samples, hop)
    t = np.arange(len(e)) * hop / rate
    inside = (t >= start_s) & (t + hop / rate <= start_s + duration_s)
    outside = (t + hop / rate <= start_s) | (t >= start_s + duration_s)
    return e[inside].mean() / max(e[outside].mean(), 1e-20)


def synth_track(genre, duration_s, chorus_start_s, rng, rate=SAMPLE_RATE):
    """One synthetic track; returns float samples in [-0.9, 0.9]."""
    rec = genre_recipe(genre)
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    detune = 2.0 ** (rng.uniform(-0.5, 0.5) / 12.0)
    root = rec["root_hz"] * detune
    body = _tone_stack(t, root, rec["harmonics"], rec["rolloff"], rng)
    body += 0.6 * _tone_stack(t, root * 1.5, rec["harmonics"], rec["rolloff"], rng)
    am = 0.75 + 0.25 * np.sin(2 * np.pi * rec["am_hz"] * t)
    beat = (t * rec["bpm"] / 60.0) % 1.0
    pulse = np.exp(-beat * 18.0) * rng.normal(0.0, 1.0, n)
    verse = 0.12 * body * am + 0.05 * pulse
    chorus_body = _tone_stack(t, rec["chorus_hz"] * detune, 3, 0.6, rng)
    in_chorus = (t >= chorus_start_s) & (t < chorus_start_s + CHORUS_SECONDS)
    ramp = np.clip(np.minimum(t - chorus_start_s, chorus_start_s + CHORUS_SECONDS - t) / 0.5, 0.0, 1.0)
    env = np.where(in_chorus, ramp, 0.0)
    noise = 0.004 * rng.normal(0.0, 1.0, n)
    gain = 2.0
    while True:
        x = verse * (1.0 + (gain - 1.0) * env) + 0.12 * gain * env * chorus_body * am + noise
        if chorus_energy_ratio(x, chorus_start_s, rate=rate) >= MIN_CHORUS_RATIO:
            break
        gain *= 1.25
    return 0.9 * x / np.abs(x).max()


def synth_corpus(n_tracks, n_genres, seed, out_dir, min_duration=60.0, max_duration=240.0):
    """Write a seeded corpus: WAVs, two ranked manifests and ground truth.

    Genre assignment is round-robin so every genre is present.  Returns the
    popularity-ranked Manifest with ground truth attached to each record.
    """
    if not 1 <= n_genres <= len(GENRES):
        raise InvalidInputError(f"n_genres must be in [1, {len(GENRES)}]")
    if n_tracks < n_genres:
        raise InvalidInputError(f"need at least {n_genres} tracks for {n_genres} genres")
    audio_dir = os.path.join(out_dir, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n_tracks + 1)
    rank_rng = np.random.default_rng(children[-1])
    popularity = rank_rng.uniform(0.0, 100.0, n_tracks)
    release = rank_rng.uniform(0.0, 100.0, n_tracks)
    records, gt = [], {}
    for i in range(n_tracks):
        rng = np.random.default_rng(children[i])
        genre = i % n_genres
        duration = float(np.round(rng.uniform(min_duration, max_duration), 3))
        chorus = float(np.round(rng.uniform(5.0, duration - CHORUS_SECONDS - 5.0), 3))
        samples = synth_track(genre, duration, chorus, rng)
        track_id = f"track_{i:04d}"
        path = os.path.join(audio_dir, f"{track_id}.wav")
        write_wav(path, SampleBuffer(samples, SAMPLE_RATE))
        gt[track_id] = (chorus, chorus + CHORUS_SECONDS)
        records.append(TrackRecord(track_id, path, (GENRES[genre],), float(popularity[i]),
                                   ground_truth=gt[track_id]))
    manifest = Manifest(records, "popularity")
    save_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    newrelease = Manifest(
        [TrackRecord(r.track_id, r.path, r.genres, float(release[i])) for i, r in enumerate(records)],
        "newrelease")
    save_manifest(newrelease, os.path.join(out_dir, "manifest_newrelease.csv"))
    save_ground_truth(gt, os.path.join(out_dir, "ground_truth.csv"))
    return manifest
