"""Attention-based music highlight extraction on top of a genre classifier."""
from .audio import FRAME_DURATION, MelSpectrogram, SampleBuffer, mel_spectrogram
from .highlight import HighlightSpan, energy_baseline, extract, f1m_baseline
from .model import CRAN, Checkpoint, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "CRAN", "Checkpoint", "ModelConfig", "MelSpectrogram", "SampleBuffer", "HighlightSpan",
    "mel_spectrogram", "extract", "energy_baseline", "f1m_baseline", "FRAME_DURATION",
]
