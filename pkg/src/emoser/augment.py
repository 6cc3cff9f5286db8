"""Randomized time/frequency masking of spectrograms.

Mask widths are inclusive discrete uniforms: a frequency mask covers f
consecutive channels with f ~ U{0..F} and start f0 ~ U{0..nu-f}; a time
mask covers t consecutive frames with t ~ U{0..W_eff} and start
t0 ~ U{0..T-t}, where W_eff = min(W, floor(p*T)) caps the mask so short
segments keep enough speech. Masked cells are set to 0.0, which equals
the per-channel mean because masking happens after segment
normalization. All draws come from an explicit generator, so identical
(spectrogram, policy, seed) triples give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import MelSpectrogram
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class AugmentationPolicy:
    """Masking parameters: widths F (freq) and W (time), time fraction
    cap p, and mask counts n_freq/n_time."""

    name: str
    max_freq_width: int  # F, channels
    max_time_width: int  # W, frames
    max_time_fraction: float  # p
    n_freq_masks: int
    n_time_masks: int

    def validate(self) -> None:
        if self.max_freq_width < 0 or self.max_time_width < 0:
            raise ConfigError("mask widths must be nonnegative")
        if not 0.0 <= self.max_time_fraction <= 1.0:
            raise ConfigError("max_time_fraction must be in [0, 1]")
        if self.n_freq_masks < 0 or self.n_time_masks < 0:
            raise ConfigError("mask counts must be nonnegative")


POLICIES = {
    "none": AugmentationPolicy("none", 0, 0, 0.0, 0, 0),
    "conservative": AugmentationPolicy("conservative", 15, 50, 0.2, 2, 2),
    "aggressive": AugmentationPolicy("aggressive", 27, 70, 0.2, 2, 2),
}


def get_policy(name: str) -> AugmentationPolicy:
    try:
        return POLICIES[name]
    except KeyError:
        raise ConfigError(
            f"unknown augmentation policy '{name}' "
            f"(expected one of {', '.join(sorted(POLICIES))})"
        ) from None


@dataclass(frozen=True)
class MaskInstance:
    axis: str  # "time" | "frequency"
    start: int
    width: int


def effective_time_width(max_time_width: int, max_time_fraction: float, n_frames: int) -> int:
    """Cap the time-mask width at floor(p * T)."""
    if n_frames < 1:
        raise DataError("spectrogram must have at least one frame")
    return min(max_time_width, int(max_time_fraction * n_frames))


def sample_frequency_mask(
    rng: np.random.Generator, max_width: int, n_channels: int
) -> MaskInstance:
    """width ~ U{0..F}, start ~ U{0..nu - width}."""
    if max_width > n_channels:
        raise DataError(
            f"max frequency-mask width {max_width} exceeds channel count {n_channels}"
        )
    width = int(rng.integers(0, max_width + 1))
    start = int(rng.integers(0, n_channels - width + 1))
    return MaskInstance("frequency", start, width)


def sample_time_mask(
    rng: np.random.Generator, effective_width: int, n_frames: int
) -> MaskInstance:
    """width ~ U{0..W_eff}, start ~ U{0..T - width}."""
    if effective_width > n_frames:
        raise DataError(
            f"effective time-mask width {effective_width} exceeds frame count {n_frames}"
        )
    width = int(rng.integers(0, effective_width + 1))
    start = int(rng.integers(0, n_frames - width + 1))
    return MaskInstance("time", start, width)


def draw_masks(
    rng: np.random.Generator, policy: AugmentationPolicy, n_frames: int, n_channels: int
) -> list[MaskInstance]:
    """The policy's n_freq frequency masks then n_time time masks.

    Masks are drawn independently and may overlap.
    """
    policy.validate()
    w_eff = effective_time_width(
        policy.max_time_width, policy.max_time_fraction, n_frames
    )
    masks = [
        sample_frequency_mask(rng, policy.max_freq_width, n_channels)
        for _ in range(policy.n_freq_masks)
    ]
    masks += [sample_time_mask(rng, w_eff, n_frames) for _ in range(policy.n_time_masks)]
    return masks


def apply_masks(
    spec: MelSpectrogram,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
    return_masks: bool = False,
):
    """New spectrogram with masked cells zeroed; the input is untouched.

    Requires a normalized spectrogram: the 0.0 fill is only the channel
    mean after normalization.
    """
    if not spec.normalized:
        raise DataError("masks are applied after segment normalization")
    masks = draw_masks(rng, policy, spec.n_frames, spec.n_mels)
    frames = spec.frames.copy()
    for mask in masks:
        if mask.width == 0:
            continue
        if mask.axis == "frequency":
            frames[:, mask.start : mask.start + mask.width] = 0.0
        else:
            frames[mask.start : mask.start + mask.width, :] = 0.0
    out = MelSpectrogram(frames, normalized=True)
    return (out, masks) if return_masks else out
