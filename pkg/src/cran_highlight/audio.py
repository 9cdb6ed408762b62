"""Audio to canonical mel-spectrogram conversion, WAV input and the mel cache format."""
import struct
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from . import _kernels
from .errors import CacheError, InvalidConfigError, InvalidInputError

SAMPLE_RATE = 8372
N_MELS = 128
N_FFT = 1024
HOP = 512
N_FRAMES = 4000
# 4000 frames at hop 512 need this many samples (about 244.7 s, not 240 s)
CANONICAL_LENGTH = N_FRAMES * HOP + (N_FFT - HOP)
FRAME_DURATION = HOP / SAMPLE_RATE
RESAMPLE_HALF_WIDTH = 32

MEL_MAGIC = b"MELS"
MEL_VERSION = 1
_MEL_HEADER = struct.Struct("<4sIIId")


@dataclass
class SampleBuffer:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError("samples must be one-dimensional (mono)")
        if not self.sample_rate > 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("samples contain non-finite values")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass
class MelSpectrogram:
    values: np.ndarray
    frame_duration: float = FRAME_DURATION

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (N_MELS, N_FRAMES):
            raise InvalidInputError(f"mel spectrogram must be {N_MELS}x{N_FRAMES}, got {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape

    def normalized(self):
        """Copy scaled so the largest entry is 1 (all-zero input stays zero)."""
        v = np.asarray(self.values, dtype=np.float64)
        peak = v.max()
        return v / peak if peak > 0 else v.copy()


def resample(buffer, target_rate):
    """Band-limited windowed-sinc resampling to ``target_rate``."""
    if len(buffer) == 0:
        raise InvalidInputError("cannot resample an empty buffer")
    if not target_rate > 0:
        raise InvalidInputError(f"target rate must be positive, got {target_rate}")
    if buffer.sample_rate == target_rate:
        return SampleBuffer(buffer.samples.copy(), target_rate)
    out = _kernels.sinc_resample(buffer.samples, buffer.sample_rate, target_rate, RESAMPLE_HALF_WIDTH)
    return SampleBuffer(out, target_rate)


def canonical_source_index(position, n_samples, length=CANONICAL_LENGTH):
    """Map a sample index in the canonical window back onto the source track.

    Positions inside the original track map to themselves; positions in the
    wrap-filled tail map to the source sample they were copied from.
    """
    if position < n_samples:
        return position
    fill = length - n_samples
    return (n_samples - fill + (position - n_samples)) % n_samples


def canonicalize(buffer, length=CANONICAL_LENGTH):
    """Truncate to, or wrap-fill up to, exactly ``length`` samples.

    Short inputs are followed by their own last ``length - n`` samples; if the
    input is shorter than the gap, it is cycled so the tail still ends on the
    input's last sample.
    """
    n = len(buffer)
    if n == 0:
        raise InvalidInputError("cannot canonicalize an empty buffer")
    x = buffer.samples
    if n >= length:
        return SampleBuffer(x[:length].copy(), buffer.sample_rate)
    fill = length - n
    idx = (np.arange(fill) + (n - fill)) % n
    return SampleBuffer(np.concatenate([x, x[idx]]), buffer.sample_rate)


def hann_window(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(buffer, window_size=N_FFT, hop=HOP, n_frames=N_FRAMES):
    """Squared-magnitude STFT; column n is the frame starting at n * hop."""
    samples = buffer.samples if isinstance(buffer, SampleBuffer) else np.asarray(buffer, dtype=np.float64)
    expected = n_frames * hop + (window_size - hop)
    if samples.shape != (expected,):
        raise InvalidInputError(f"stft_power expects exactly {expected} samples, got {samples.shape}")
    frames = np.lib.stride_tricks.sliding_window_view(samples, window_size)[::hop][:n_frames]
    spectrum = np.fft.rfft(frames * hann_window(window_size), axis=1)
    return np.ascontiguousarray((spectrum.real ** 2 + spectrum.imag ** 2).T)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels=N_MELS, sample_rate=SAMPLE_RATE):
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels=N_MELS, n_fft_bins=N_FFT // 2 + 1, sample_rate=SAMPLE_RATE):
    """HTK-scale triangular filters (peak 1) from 0 Hz to Nyquist."""
    if n_mels < 1:
        raise InvalidConfigError("n_mels must be at least 1")
    if n_mels > n_fft_bins:
        raise InvalidConfigError(f"{n_mels} mel filters cannot be resolved by {n_fft_bins} FFT bins")
    bin_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft_bins)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.max(axis=1) <= 0)
    if empty.size:
        raise InvalidConfigError(
            f"mel filters {empty.tolist()} contain no FFT bin; use fewer mels or a longer FFT")
    return fb


_FILTERBANK = None


def _default_filterbank():
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def mel_spectrogram(buffer):
    """Canonical 128 x 4000 mel power spectrogram of an 8372 Hz buffer."""
    if buffer.sample_rate != SAMPLE_RATE:
        raise InvalidInputError(f"resample to {SAMPLE_RATE} Hz first (got {buffer.sample_rate} Hz)")
    power = stft_power(canonicalize(buffer))
    values = _default_filterbank() @ power
    np.maximum(values, 0.0, out=values)
    return MelSpectrogram(values, FRAME_DURATION)


# -- WAV input -----------------------------------------------------------------

def read_wav(path):
    """Read a PCM16 / PCM32 / float WAV file as a mono SampleBuffer in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError, EOFError, struct.error) as exc:
        raise InvalidInputError(f"cannot read WAV {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise InvalidInputError(f"unsupported WAV sample type {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise InvalidInputError(f"WAV {path} contains no samples")
    return SampleBuffer(x, float(rate))


def write_wav(path, buffer):
    """Write a mono buffer as 16-bit PCM."""
    pcm = np.clip(np.round(buffer.samples * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(path, int(round(buffer.sample_rate)), pcm)


def load_track(path):
    """Read a WAV and bring it to the canonical sample rate."""
    buf = read_wav(path)
    if buf.sample_rate != SAMPLE_RATE:
        buf = resample(buf, SAMPLE_RATE)
    return buf


# -- mel cache -----------------------------------------------------------------

def encode_mel(mel):
    values = np.ascontiguousarray(mel.values, dtype="<f4")
    rows, cols = values.shape
    return _MEL_HEADER.pack(MEL_MAGIC, MEL_VERSION, rows, cols, float(mel.frame_duration)) + values.tobytes()


def decode_mel(blob):
    if len(blob) < _MEL_HEADER.size:
        raise CacheError("mel cache truncated (no header)")
    magic, version, rows, cols, frame_duration = _MEL_HEADER.unpack_from(blob)
    if magic != MEL_MAGIC:
        raise CacheError(f"not a mel cache (magic {magic!r})")
    if version != MEL_VERSION:
        raise CacheError(f"unsupported mel cache version {version}")
    payload = blob[_MEL_HEADER.size:]
    if len(payload) != rows * cols * 4:
        raise CacheError(f"mel cache payload has {len(payload)} bytes, expected {rows * cols * 4}")
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)
    return MelSpectrogram(values, frame_duration)


def save_mel(path, mel):
    with open(path, "wb") as fh:
        fh.write(encode_mel(mel))


def load_mel(path):
    with open(path, "rb") as fh:
        return decode_mel(fh.read())


def wav_duration(path):
    """Duration in seconds read from the WAV header only."""
    rate, data = wavfile.read(path, mmap=True)
    return data.shape[0] / float(rate)


__all__ = [
    "SampleBuffer", "MelSpectrogram", "resample", "canonicalize", "stft_power", "mel_filterbank",
    "mel_spectrogram", "read_wav", "write_wav", "load_track", "save_mel", "load_mel",
    "encode_mel", "decode_mel",
]
