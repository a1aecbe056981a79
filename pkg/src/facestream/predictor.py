"""Autoregressive condition predictor.

A causal transformer decoder over a bounded window of past latent units.
Self-attention carries ALiBi distance penalties under a causal mask; a
cross-attention stage reads audio features under a block alignment mask that
gives each unit exactly its own H motion frames of audio. The output row at
position i is the condition vector used to generate unit i: position 0 (the
begin token) conditions the first window unit, and the final row conditions
the next, not-yet-generated unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio import StyleEncoder
from .fileio import DataError
from .nn import DecoderBlock, LayerNorm, Linear, alibi_bias, causal_mask, normal_init
from .tensor import ParamStore, Tensor, add, as_tensor, concat


@dataclass
class HistoryWindow:
    """Bounded ring of past latent units; oldest unit is evicted first."""

    units: list[np.ndarray]  # each (H, C)
    h_units: int             # capacity in units

    def __post_init__(self):
        if len(self.units) > self.h_units:
            raise ValueError("window longer than its capacity")

    def __len__(self) -> int:
        return len(self.units)


def history_capacity(h_frames: int, components: int) -> int:
    return math.ceil(h_frames / components)


def select_history(all_past_units: Sequence[np.ndarray], h_frames: int,
                   components: int) -> HistoryWindow:
    """Most recent units covering ``h_frames`` motion frames.

    Shorter histories are returned whole; an empty history is a valid cold
    start (the begin token alone conditions the first unit).
    """
    if h_frames < components:
        raise ValueError("history must cover at least one unit")
    cap = history_capacity(h_frames, components)
    units = [np.asarray(u) for u in all_past_units[-cap:]]
    return HistoryWindow(units=units, h_units=cap)


def alignment_mask(l_motion: int, t_audio: int, components: int) -> np.ndarray:
    """Cross-attention mask: token i may read audio frames [i*H, (i+1)*H).

    Audio rows are indexed relative to the window start; the caller is
    responsible for slicing the global audio buffer at the window's absolute
    start frame.
    """
    if t_audio < l_motion * components:
        raise DataError("audio underrun: alignment window not covered")
    mask = np.zeros((l_motion, t_audio), dtype=bool)
    for i in range(l_motion):
        mask[i, i * components:(i + 1) * components] = True
    return mask


@dataclass
class PredictorConfig:
    hidden: int = 128
    heads: int = 4
    layers: int = 2
    ff: int = 256
    audio_width: int = 16
    components: int = 4       # H, motion frames per latent unit
    latent_width: int = 64    # C of the codec
    num_speakers: int = 2
    history_frames: int = 60

    @property
    def unit_size(self) -> int:
        return self.components * self.latent_width

    @property
    def history_units(self) -> int:
        return history_capacity(self.history_frames, self.components)


class ConditionPredictor:
    """Maps (history window, aligned audio, style) to per-unit conditions."""

    def __init__(self, config: PredictorConfig, seed: int = 0):
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        c = config
        self.unit_embed = Linear(self.store, "unit_embed", c.unit_size, c.hidden, rng)
        self.audio_embed = Linear(self.store, "audio_embed", c.audio_width,
                                  c.hidden, rng)
        self.begin_token = self.store.create("begin_token",
                                             normal_init(rng, (1, c.hidden)))
        self.style = StyleEncoder(self.store, "style", c.num_speakers, c.hidden, rng)
        self.blocks = [
            DecoderBlock(self.store, f"block{i}", c.hidden, c.heads, c.ff, rng,
                         d_cross=c.hidden)
            for i in range(c.layers)
        ]
        self.norm = LayerNorm(self.store, "norm", c.hidden)
        self._bias_cache: dict[int, np.ndarray] = {}

    def _self_bias(self, length: int) -> np.ndarray:
        if length not in self._bias_cache:
            self._bias_cache[length] = alibi_bias(length, self.config.heads)
        return self._bias_cache[length]

    def __call__(self, window: HistoryWindow | Sequence[np.ndarray],
                 audio: np.ndarray, style_index: int) -> Tensor:
        """Condition rows (len(window) + 1, hidden).

        ``audio`` must hold at least (len(window) + 1) * H frames starting at
        the window's first motion frame; extra trailing audio is ignored by
        the alignment mask but must not precede the window.
        """
        c = self.config
        units = window.units if isinstance(window, HistoryWindow) else list(window)
        if len(units) > c.history_units:
            raise DataError("window exceeds the configured history length")
        audio = np.asarray(audio, dtype=np.float64)
        if audio.ndim != 2 or audio.shape[1] != c.audio_width:
            raise DataError(f"audio features must be (T, {c.audio_width})")

        length = len(units) + 1
        style_row = self.style.embed(style_index)
        tokens = [add(self.begin_token, style_row)]
        if units:
            stacked = np.stack([np.asarray(u).reshape(c.unit_size) for u in units])
            if stacked.shape[1] != c.unit_size:
                raise DataError("history unit shape does not match codec config")
            embedded = self.unit_embed(as_tensor(stacked))
            tokens.append(add(embedded, style_row))
        x = concat(tokens, axis=0)

        self_bias = self._self_bias(length)
        self_mask = causal_mask(length)
        cross_mask = alignment_mask(length, audio.shape[0], c.components)
        memory = self.audio_embed(as_tensor(audio))
        for block in self.blocks:
            x = block(x, memory, self_bias, self_mask, cross_mask)
        return self.norm(x)
