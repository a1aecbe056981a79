"""Audio feature frontend and style embedding.

The frontend stands in for a pretrained speech encoder: log filterbank
energies over 25 ms windows hopped at the motion frame rate, followed by a
seed-locked random projection. It is deterministic and has no trainable
state. The style encoder is the one learned piece: a linear embedding of the
one-hot speaker identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ParamStore, Tensor, take_rows
from .nn import normal_init

WINDOW_SECONDS = 0.025
LOG_FLOOR = 1e-10


@dataclass
class AudioFeatureSequence:
    """Per-frame audio feature vectors at a fixed rate (features per second)."""

    features: np.ndarray  # (T_a, C_a)
    rate: float

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must have shape (T_a, C_a)")
        if self.rate <= 0:
            raise ValueError("feature rate must be positive")
        if not np.isfinite(self.features).all():
            raise ValueError("non-finite feature values")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]


@dataclass
class StyleEmbedding:
    vector: np.ndarray  # (width,)
    speaker_index: int


def _mel_filterbank(num_filters: int, n_fft: int, sample_rate: float) -> np.ndarray:
    """Triangular filters spaced on the mel scale, (num_filters, n_fft//2 + 1)."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0),
                             num_filters + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.floor((n_fft + 1) * hz_points / sample_rate).astype(int)
    bank = np.zeros((num_filters, n_fft // 2 + 1))
    for i in range(num_filters):
        left, center, right = bins[i], bins[i + 1], bins[i + 2]
        center = max(center, left + 1)
        right = max(right, center + 1)
        for b in range(left, center):
            bank[i, b] = (b - left) / (center - left)
        for b in range(center, min(right, bank.shape[1])):
            bank[i, b] = (right - b) / (right - center)
    return bank


class FeatureExtractor:
    """Log filterbank energies + a fixed random projection to ``width`` dims.

    The projection matrix is drawn once from ``seed``; identical waveforms
    always produce identical features.
    """

    def __init__(self, width: int = 16, num_filters: int = 24, seed: int = 0):
        self.width = width
        self.num_filters = num_filters
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.projection = rng.normal(size=(num_filters, width)) / np.sqrt(num_filters)

    def __call__(self, waveform: np.ndarray, sample_rate: float,
                 target_rate: float) -> AudioFeatureSequence:
        waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
        if sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if waveform.size == 0:
            raise ValueError("empty waveform")
        window = max(2, int(round(WINDOW_SECONDS * sample_rate)))
        hop = max(1, int(round(sample_rate / target_rate)))
        num_frames = max(1, waveform.size // hop)
        n_fft = 1 << (window - 1).bit_length()
        hann = np.hanning(window)
        bank = _mel_filterbank(self.num_filters, n_fft, sample_rate)

        frames = np.zeros((num_frames, window))
        for i in range(num_frames):
            chunk = waveform[i * hop:i * hop + window]
            frames[i, :chunk.size] = chunk
        spectrum = np.abs(np.fft.rfft(frames * hann, n=n_fft, axis=1))
        energies = np.log(spectrum @ bank.T + LOG_FLOOR)
        return AudioFeatureSequence(energies @ self.projection, target_rate)


def resample_to_frames(feat: AudioFeatureSequence, num_frames: int) -> np.ndarray:
    """Linearly interpolate features onto ``num_frames`` uniform positions.

    The output spans the original extent; constants are preserved exactly and
    ``num_frames == T_a`` is the identity.
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    source = feat.features
    t_a = source.shape[0]
    if num_frames == t_a:
        return source.copy()
    if t_a == 1:
        return np.tile(source, (num_frames, 1))
    positions = np.linspace(0.0, t_a - 1.0, num_frames)
    base = np.arange(t_a, dtype=np.float64)
    out = np.empty((num_frames, source.shape[1]))
    for c in range(source.shape[1]):
        out[:, c] = np.interp(positions, base, source[:, c])
    return out


class StyleEncoder:
    """Linear embedding of the one-hot speaker vector: row k of a K x C table."""

    def __init__(self, store: ParamStore, name: str, num_speakers: int, width: int,
                 rng: np.random.Generator):
        if num_speakers < 1:
            raise ValueError("need at least one speaker")
        self.num_speakers = num_speakers
        self.table = store.create(f"{name}.table",
                                  normal_init(rng, (num_speakers, width)))

    def embed(self, speaker_index: int) -> Tensor:
        """Tensor row for training graphs; shape (1, width)."""
        if not 0 <= speaker_index < self.num_speakers:
            raise ValueError(f"speaker index {speaker_index} out of range "
                             f"[0, {self.num_speakers})")
        return take_rows(self.table, np.array([speaker_index]))

    def __call__(self, speaker_index: int) -> StyleEmbedding:
        return StyleEmbedding(self.embed(speaker_index).data[0].copy(), speaker_index)
