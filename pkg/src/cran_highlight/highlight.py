"""Highlight scoring: attention/energy fusion, windowed scores and span selection."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .audio import CANONICAL_LENGTH, FRAME_DURATION, N_FRAMES, SAMPLE_RATE, canonical_source_index
from .errors import InvalidInputError, InvalidShapeError

GAMMA = 0.1
BETA = 0.5
HIGHLIGHT_SECONDS = 30.0
F1M_SECONDS = 60.0


@dataclass
class HighlightSpan:
    start_s: float
    duration_s: float
    score: Optional[float] = None
    extractor: Optional[str] = None

    @property
    def end_s(self):
        return self.start_s + self.duration_s


@dataclass
class FrameScores:
    e_mean: np.ndarray
    e_tilde: np.ndarray
    H: np.ndarray


def window_frames(seconds=HIGHLIGHT_SECONDS, frame_duration=FRAME_DURATION):
    return int(round(seconds / frame_duration))


def upsample_attention(alpha, frames=N_FRAMES):
    """Spread each slot's score evenly over its frames; total mass is kept."""
    alpha = np.asarray(alpha, dtype=np.float64)
    T = alpha.shape[0]
    if T == 0 or frames % T:
        raise InvalidShapeError(f"{frames} frames not divisible by {T} attention slots")
    rep = frames // T
    return np.repeat(alpha / rep, rep)


def mean_energy(mel, normalize=True):
    """Per-frame mean over mel bins, optionally after per-track max scaling."""
    values = np.asarray(getattr(mel, "values", mel), dtype=np.float64)
    if normalize:
        peak = values.max()
        if peak > 0:
            values = values / peak
    return values.mean(axis=0)


def fuse(mel, alpha_frames, gamma=GAMMA, normalize=True):
    """gamma * alpha_n + (1 - gamma) * mean mel energy of frame n."""
    e_mean = mean_energy(mel, normalize)
    alpha_frames = np.asarray(alpha_frames, dtype=np.float64)
    if alpha_frames.shape != e_mean.shape:
        raise InvalidShapeError(f"attention has {alpha_frames.shape[0]} frames, mel has {e_mean.shape[0]}")
    return gamma * alpha_frames + (1.0 - gamma) * e_mean


def energy_differences(e_mean):
    """First plus second difference of the mean energy; zero for n < 2."""
    e = np.asarray(e_mean, dtype=np.float64)
    out = np.zeros_like(e)
    if e.shape[0] > 2:
        d1 = e[2:] - e[1:-1]
        d2 = d1 - (e[1:-1] - e[:-2])
        out[2:] = d1 + d2
    return out


def highlight_scores(e_tilde, e_mean, S_frames, beta=BETA):
    """Windowed highlight score for every start frame n in [0, N - S]."""
    e_tilde = np.asarray(e_tilde, dtype=np.float64)
    N = e_tilde.shape[0]
    if not 1 <= S_frames <= N:
        raise InvalidInputError(f"window of {S_frames} frames does not fit {N} frames")
    if np.shape(e_mean) != e_tilde.shape:
        raise InvalidShapeError("e_tilde and e_mean must have the same length")
    sums = _kernels.window_sums(e_tilde, S_frames)
    return beta * sums + (1.0 - beta) * energy_differences(e_mean)[: N - S_frames + 1]


def select_highlight(H, frame_duration=FRAME_DURATION, seconds=HIGHLIGHT_SECONDS):
    """Span starting at the first maximum of H."""
    H = np.asarray(H)
    if H.size == 0:
        raise InvalidInputError("no highlight scores to select from")
    n = int(np.argmax(H))
    return HighlightSpan(n * frame_duration, seconds, float(H[n]))


def frame_scores(mel, alpha=None, gamma=GAMMA, beta=BETA, seconds=HIGHLIGHT_SECONDS, normalize=True):
    values = getattr(mel, "values", mel)
    frames = np.shape(values)[1]
    alpha_frames = np.zeros(frames) if alpha is None else upsample_attention(alpha, frames)
    e_mean = mean_energy(values, normalize)
    e_tilde = fuse(values, alpha_frames, gamma, normalize)
    fd = getattr(mel, "frame_duration", FRAME_DURATION)
    return FrameScores(e_mean, e_tilde, highlight_scores(e_tilde, e_mean, window_frames(seconds, fd), beta))


def to_source_timeline(span, n_samples, rate=SAMPLE_RATE, length=CANONICAL_LENGTH):
    """Move a canonical-window span onto the original track's timeline.

    Spans starting in the wrap-filled tail map back to the copied source
    position; starts are then clamped so the span ends inside the track.
    """
    if n_samples is None or n_samples >= length:
        return span
    pos = int(round(span.start_s * rate))
    src = canonical_source_index(pos, n_samples, length)
    start = src / rate
    duration = n_samples / rate
    start = max(0.0, min(start, duration - span.duration_s))
    return HighlightSpan(start, span.duration_s, span.score, span.extractor)


def extract(mel, alpha=None, gamma=GAMMA, beta=BETA, seconds=HIGHLIGHT_SECONDS, n_samples=None,
            name=None, normalize=True):
    fd = getattr(mel, "frame_duration", FRAME_DURATION)
    scores = frame_scores(mel, alpha, gamma, beta, seconds, normalize)
    span = select_highlight(scores.H, fd, seconds)
    span.extractor = name
    return to_source_timeline(span, n_samples)


def energy_baseline(mel, beta=BETA, seconds=HIGHLIGHT_SECONDS, n_samples=None, normalize=True):
    return extract(mel, None, 0.0, beta, seconds, n_samples, "energy", normalize)


def f1m_baseline(track_duration_s, seconds=F1M_SECONDS):
    return HighlightSpan(0.0, min(seconds, float(track_duration_s)), None, "f1m")


__all__ = [
    "HighlightSpan", "FrameScores", "upsample_attention", "fuse", "highlight_scores", "select_highlight",
    "energy_baseline", "f1m_baseline", "extract", "to_source_timeline", "mean_energy", "window_frames",
]
