"""Deterministic EEG-like test signals with labelled rhythmic bursts.

Background: per channel, a sum of sinusoids between 1 and 30 Hz with
amplitudes proportional to 1/f and random phases. Bursts: inside each
event interval a 3-12 Hz sinusoid is added to every channel, sized so that
the in-event RMS is ``gain`` times the background RMS. Signals are evaluated
from their continuous-time formula at the sample instants, so no component
lies above the Nyquist frequency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import InvalidSpec
from .signal_io import Modality, Recording

BACKGROUND_BAND = (1.0, 30.0)
BURST_BAND = (3.0, 12.0)


@dataclass
class BurstEvent:
    onset_s: float
    duration_s: float
    gain: float = 3.0
    frequency_hz: Optional[float] = None


@dataclass
class SyntheticSpec:
    num_channels: int = 4
    duration_s: float = 60.0
    sampling_rate_hz: float = 256.0
    n_components: int = 12
    amplitude: float = 1.0
    burst_events: List[BurstEvent] = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0
    modality: Modality = Modality.EEG
    label: str = "seizure"
    background_seed: Optional[int] = None

    def validate(self) -> "SyntheticSpec":
        if self.num_channels < 1 or self.duration_s <= 0 or self.n_components < 1:
            raise InvalidSpec("channels, duration and component count must be positive")
        if self.sampling_rate_hz <= 2 * BACKGROUND_BAND[1]:
            raise InvalidSpec(f"sampling rate must exceed {2 * BACKGROUND_BAND[1]} Hz")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be nonnegative")
        for ev in self.burst_events:
            if ev.onset_s < 0 or ev.duration_s <= 0 or ev.onset_s + ev.duration_s > self.duration_s:
                raise InvalidSpec(f"event {ev} lies outside the recording")
            if ev.gain < 1:
                raise InvalidSpec("burst gain must be >= 1")
            if ev.frequency_hz is not None and not BURST_BAND[0] <= ev.frequency_hz <= BURST_BAND[1]:
                raise InvalidSpec("burst frequency must lie in 3-12 Hz")
        return self


def background_components(spec: SyntheticSpec, rng: np.random.Generator):
    """Frequencies, amplitudes and phases, each ``(C, n_components)``.

    With ``background_seed`` set, frequencies (and so amplitudes) come from
    that seed, letting several recordings share one spectral profile.
    """
    C, K = spec.num_channels, spec.n_components
    freq_rng = rng if spec.background_seed is None else np.random.default_rng(spec.background_seed)
    freqs = freq_rng.uniform(*BACKGROUND_BAND, size=(C, K))
    amps = spec.amplitude / freqs
    phases = rng.uniform(0, 2 * np.pi, size=(C, K))
    return freqs, amps, phases


def generate(spec: SyntheticSpec) -> Recording:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    fs = spec.sampling_rate_hz
    T = int(round(spec.duration_s * fs))
    t = np.arange(T) / fs
    freqs, amps, phases = background_components(spec, rng)
    x = np.zeros((spec.num_channels, T))
    for k in range(spec.n_components):
        x += amps[:, k:k + 1] * np.sin(2 * np.pi * freqs[:, k:k + 1] * t + phases[:, k:k + 1])
    bg_rms = np.sqrt(np.sum(amps ** 2, axis=1) / 2)

    annotations = []
    for ev in spec.burst_events:
        f = ev.frequency_hz if ev.frequency_hz is not None else rng.uniform(*BURST_BAND)
        a = bg_rms * np.sqrt(2 * (ev.gain ** 2 - 1))
        on = int(round(ev.onset_s * fs))
        off = min(T, int(round((ev.onset_s + ev.duration_s) * fs)))
        phase = rng.uniform(0, 2 * np.pi, size=spec.num_channels)
        seg = t[on:off]
        x[:, on:off] += a[:, None] * np.sin(2 * np.pi * f * seg[None, :] + phase[:, None])
        annotations.append((on, off, spec.label))

    if spec.noise_sigma > 0:
        x += rng.normal(0, spec.noise_sigma, size=x.shape)
    return Recording(x.astype(np.float32), fs, spec.modality, annotations=annotations,
                     channel_names=[f"ch{i}" for i in range(spec.num_channels)])


def seizure_subject(n_seizures: int = 3, seizure_s: float = 20.0, context_s: float = 40.0,
                    num_channels: int = 2, sampling_rate_hz: float = 256.0, gain: float = 3.0,
                    noise_sigma: float = 0.05, seed: int = 0) -> List[Recording]:
    """One recording per seizure, each with background context on both sides.

    Recordings of one subject share background frequencies and differ in
    phases, noise and burst frequency.
    """
    recs = []
    for i in range(n_seizures):
        duration = seizure_s + 2 * context_s
        spec = SyntheticSpec(
            num_channels=num_channels, duration_s=duration, sampling_rate_hz=sampling_rate_hz,
            burst_events=[BurstEvent(context_s, seizure_s, gain)],
            noise_sigma=noise_sigma, seed=seed * 1000 + i, background_seed=seed,
        )
        recs.append(generate(spec))
    return recs
