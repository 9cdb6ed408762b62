import os

import numpy as np
import pytest

from cran_highlight import dataset as ds
from cran_highlight.audio import read_wav
from cran_highlight.errors import DuplicateTrackError, InvalidInputError, ManifestError, UnknownGenreError


def rec(track_id, rank=50.0, genres=("Dance",), path="x.wav"):
    return ds.TrackRecord(track_id, path, genres, rank)


# -- splits ----------------------------------------------------------------------

@pytest.mark.parametrize("p,name", [(5, "test"), (0, "test"), (9.999, "test"), (10, "val"), (15, "val"),
                                    (20, "train"), (99.9, "train")])
def test_split_for_percentile(p, name):
    assert ds.split_for_percentile(p) == name


def test_splits_disjoint_and_exhaustive():
    m = ds.Manifest([rec(f"t{i}", float(i)) for i in range(100)])
    names = [m.split(s) for s in ("train", "val", "test")]
    ids = [r.track_id for part in names for r in part]
    assert sorted(ids) == sorted(r.track_id for r in m)
    assert [len(p) for p in names] == [80, 10, 10]


def test_split_proportions_on_uniform_ranks():
    ranks = np.random.default_rng(0).uniform(0, 100, 5000)
    m = ds.Manifest([rec(f"t{i}", float(p)) for i, p in enumerate(ranks)])
    frac = {s: len(m.split(s)) / 5000 for s in ("train", "val", "test")}
    # binomial sd at n=5000 is about 0.0042 for p=0.1
    assert abs(frac["train"] - 0.8) < 0.025
    assert abs(frac["val"] - 0.1) < 0.02 and abs(frac["test"] - 0.1) < 0.02


def test_split_needs_percentile():
    m = ds.Manifest([rec("a", None)])
    assert m.splits == {}
    with pytest.raises(ManifestError):
        ds.split_by_rank(m)


def test_record_invariants():
    with pytest.raises(ManifestError):
        rec("a", 100.0)
    with pytest.raises(ManifestError):
        rec("a", genres=())
    with pytest.raises(UnknownGenreError) as err:
        rec("a", genres=("Polka",))
    for g in ds.GENRES:
        assert g in str(err.value)
    assert len(ds.GENRES) == 10


def test_duplicate_track():
    with pytest.raises(DuplicateTrackError, match="dup"):
        ds.Manifest([rec("dup"), rec("dup")])


def test_target_vector():
    np.testing.assert_array_equal(ds.target_vector(["Rock"], 10), np.eye(10)[4])
    np.testing.assert_array_equal(ds.target_vector(["Dance", "Jazz"], 10)[[0, 5]], [0.5, 0.5])
    assert ds.target_vector([0, 1, 1], 3).sum() == 1.0
    with pytest.raises(InvalidInputError):
        ds.target_vector([], 3)
    with pytest.raises(InvalidInputError):
        ds.target_vector([5], 3)


# -- manifest files --------------------------------------------------------------

def write_csv(path, rows, header="track_id,path,genres,rank_percentile"):
    path.write_text("\n".join([header] + rows) + "\n")


def test_manifest_round_trip(tmp_path):
    (tmp_path / "a.wav").write_bytes(b"")
    (tmp_path / "b.wav").write_bytes(b"")
    write_csv(tmp_path / "m.csv", ["a,a.wav,Dance|R&B,12.5", "b,b.wav,Elec,70"])
    m = ds.load_manifest(str(tmp_path / "m.csv"))
    assert len(m) == 2 and m.ranking_name == "m"
    assert m.by_id()["a"].genres == ("Dance", "R&B")
    assert m.splits == {"a": "val", "b": "train"}
    ds.save_manifest(m, str(tmp_path / "m2.csv"))
    m2 = ds.load_manifest(str(tmp_path / "m2.csv"))
    assert m2.records == m.records
    ds.save_manifest(m2, str(tmp_path / "m3.csv"))
    assert (tmp_path / "m2.csv").read_text() == (tmp_path / "m3.csv").read_text()


def test_manifest_errors(tmp_path):
    (tmp_path / "a.wav").write_bytes(b"")
    write_csv(tmp_path / "dup.csv", ["a,a.wav,Dance,1", "a,a.wav,Rock,2"])
    with pytest.raises(DuplicateTrackError, match="'a'"):
        ds.load_manifest(str(tmp_path / "dup.csv"))
    write_csv(tmp_path / "polka.csv", ["a,a.wav,Polka,1"])
    with pytest.raises(UnknownGenreError, match="Teuroteu"):
        ds.load_manifest(str(tmp_path / "polka.csv"))
    write_csv(tmp_path / "missing.csv", ["z,z.wav,Dance,1"])
    with pytest.raises(ManifestError, match="not found"):
        ds.load_manifest(str(tmp_path / "missing.csv"))
    assert len(ds.load_manifest(str(tmp_path / "missing.csv"), check_files=False)) == 1
    write_csv(tmp_path / "hdr.csv", ["a,a.wav,Dance,1"], header="id,file,genre,rank")
    with pytest.raises(ManifestError, match="header"):
        ds.load_manifest(str(tmp_path / "hdr.csv"))


def test_ground_truth_round_trip(tmp_path):
    gt = {"a": [(10.0, 40.0), (12.5, 42.5)], "b": (0.0, 30.0)}
    ds.save_ground_truth(gt, str(tmp_path / "gt.csv"))
    back = ds.load_ground_truth(str(tmp_path / "gt.csv"))
    assert back == {"a": [(10.0, 40.0), (12.5, 42.5)], "b": [(0.0, 30.0)]}
    (tmp_path / "bad.csv").write_text("track_id,start_s,end_s\na,40,10\n")
    with pytest.raises(ManifestError):
        ds.load_ground_truth(str(tmp_path / "bad.csv"))


# -- synthetic corpus ------------------------------------------------------------

def test_synth_cardinality(corpus20):
    root = corpus20["root"]
    wavs = os.listdir(os.path.join(root, "audio"))
    assert len(wavs) == 20
    m = ds.load_manifest(corpus20["manifest_path"])
    assert len(m) == 20
    assert {g for r in m for g in r.genres} == set(ds.GENRES[:4])
    assert len(corpus20["ground_truth"]) == 20
    other = ds.load_manifest(os.path.join(root, "manifest_newrelease.csv"))
    assert other.ranking_name == "manifest_newrelease" and len(other) == 20


def test_synth_ground_truth_inside_track_and_chorus_loud(corpus20):
    for r in corpus20["manifest"]:
        buf = read_wav(r.path)
        duration = len(buf) / buf.sample_rate
        assert 60.0 <= duration <= 240.0
        (start, end), = corpus20["ground_truth"][r.track_id]
        assert 0.0 <= start and end <= duration and end - start == pytest.approx(30.0, abs=1e-9)
        assert ds.chorus_energy_ratio(buf.samples, start) >= ds.MIN_CHORUS_RATIO


def test_synth_is_deterministic(tmp_path):
    for d in ("a", "b"):
        ds.synth_corpus(3, 2, 42, str(tmp_path / d), min_duration=60.0, max_duration=70.0)
    files = ["manifest.csv", "manifest_newrelease.csv", "ground_truth.csv"] + \
        [os.path.join("audio", f"track_{i:04d}.wav") for i in range(3)]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_synth_genres_differ_spectrally(tmp_path):
    rng = np.random.default_rng(0)
    spectra = []
    for g in range(3):
        x = ds.synth_track(g, 60.0, 20.0, rng)
        spectra.append(np.abs(np.fft.rfft(x[:8192])))
    for i in range(3):
        for j in range(i + 1, 3):
            c = np.corrcoef(spectra[i], spectra[j])[0, 1]
            assert c < 0.9


def test_synth_rejects():
    with pytest.raises(InvalidInputError):
        ds.synth_corpus(2, 4, 0, "/nonexistent")
    with pytest.raises(InvalidInputError):
        ds.synth_corpus(20, 11, 0, "/nonexistent")
