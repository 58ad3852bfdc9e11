"""Deterministic class-conditioned segment generator for desk-scale runs.

Real captures are multi-GB; these surrogates keep the whole pipeline
testable. Class structure:

* no-drone: white noise in both bands, flat expected spectrum;
* single drone: a frequency-hopping burst train. Each type owns a disjoint
  set of three hop bins on the 128-point one-sided grid, so type identity
  is readable from the averaged spectrum; the function mode sets the burst
  rate, a purely time-domain trait. The low band carries the full bursts,
  the high band an attenuated residue of the same waveform;
* coexisting pair: the element-wise mix of the two constituent
  on-and-connected signals, exactly as the augmentation stage would
  produce it (component seeds are ``seed`` and ``seed + 1``).

Bin sets are spaced so inter-class spectral distances dwarf the noise
spread (burst peaks sit ~40 dB above the floor at the default amplitude),
which keeps a nearest-centroid check comfortably above 0.95 on a balanced
seven-class set. Everything is a pure function of (class, length, seed).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .augment import mix_segments
from .errors import LengthTooShort
from .features import DESK_STFT
from .signals import (
    BuiLabel,
    DatasetManifest,
    DualBandSegment,
    ManifestEntry,
    ON_CONNECTED_BUI,
    parse_bui,
    save_segment,
    segment_filenames,
)

#: Per-type signature: hop bins on the one-sided 128-point grid (disjoint
#: between types), burst duty cycle, and burst phase offset as a fraction
#: of the burst period. Duty and offset separate types in aggregate map
#: statistics as well as in row position, so even crude pooled features
#: carry class identity.
TYPE_SIGNATURES = {
    "bebop": {"bins": (5, 17, 29, 41, 53), "duty": 0.8, "offset": 0.0},
    "ar": {"bins": (9, 23, 37), "duty": 0.5, "offset": 0.4},
    "phantom": {"bins": (13, 47), "duty": 0.25, "offset": 0.7},
}

HOP_BINS = {name: sig["bins"] for name, sig in TYPE_SIGNATURES.items()}

#: Bursts per segment for each function-mode code.
MODE_BURSTS = {"00": 8, "01": 16, "10": 24, "11": 32}

BURST_AMPLITUDE = 1.0
HIGH_BAND_RESIDUE = 0.35
NOISE_SIGMA = 0.05

#: Shortest segment the generator will emit: one desk-scale window.
MIN_LENGTH = DESK_STFT.window_len


def _burst_waveform(drone_type: str, mode: str, length: int,
                    rng: np.random.Generator) -> np.ndarray:
    sig = TYPE_SIGNATURES[drone_type]
    bins = sig["bins"]
    n_bursts = MODE_BURSTS[mode]
    period = length // n_bursts
    active = max(1, int(sig["duty"] * period))
    shift = int(sig["offset"] * period)
    s = np.zeros(length)
    for k in range(n_bursts):
        start = min(k * period + shift, length - 1)
        stop = min(start + active, length)
        t = np.arange(start, stop)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        hop_bin = bins[k % len(bins)]
        s[start:stop] = BURST_AMPLITUDE * np.sin(
            2.0 * np.pi * hop_bin * t / 128.0 + phase)
    return s


def synth_segment(bui, length: int = 10 * MIN_LENGTH,
                  seed: int = 0) -> DualBandSegment:
    """Generate one segment of the given class; pure in (bui, length, seed)."""
    label = bui if isinstance(bui, BuiLabel) else parse_bui(bui)
    if length < MIN_LENGTH:
        raise LengthTooShort(
            f"length {length} is below the generator minimum {MIN_LENGTH}")
    if label.kind == "coexisting":
        first, second = label.drone_types
        return mix_segments(
            synth_segment(ON_CONNECTED_BUI[first], length, seed),
            synth_segment(ON_CONNECTED_BUI[second], length, seed + 1))
    rng = np.random.default_rng(np.random.SeedSequence([seed, int(label.digits)]))
    if label.kind == "none":
        low = rng.normal(0.0, NOISE_SIGMA, length)
        high = rng.normal(0.0, NOISE_SIGMA, length)
    else:
        s = _burst_waveform(label.drone_types[0], label.mode, length, rng)
        low = s + rng.normal(0.0, NOISE_SIGMA, length)
        high = HIGH_BAND_RESIDUE * s + rng.normal(0.0, NOISE_SIGMA, length)
    return DualBandSegment(low, high)


def synth_set(counts: dict[str, int], length: int = 10 * MIN_LENGTH,
              seed: int = 0) -> list[tuple[DualBandSegment, BuiLabel]]:
    """In-memory dataset: ``counts[bui]`` segments per class, seeds derived
    from a running index over BUIs in sorted order."""
    out = []
    index = 0
    for digits in sorted(counts):
        label = parse_bui(digits)
        n = counts[digits]
        if n < 1:
            raise ValueError(f"count for {digits} must be >= 1, got {n}")
        for _ in range(n):
            out.append((synth_segment(label, length, seed + index), label))
            index += 1
    return out


def synth_dataset(counts: dict[str, int], length: int, seed: int,
                  out_dir: Path | str) -> DatasetManifest:
    """Write a synthetic dataset under the segment filename contract."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    index = 0
    for digits in sorted(counts):
        label = parse_bui(digits)
        n = counts[digits]
        if n < 1:
            raise ValueError(f"count for {digits} must be >= 1, got {n}")
        for i in range(n):
            seg = synth_segment(label, length, seed + index)
            index += 1
            low_name, high_name = segment_filenames(label, i)
            low_path, high_path = out_dir / low_name, out_dir / high_name
            save_segment(seg, low_path, high_path)
            entries.append(ManifestEntry(low_path, high_path, label))
    return DatasetManifest(entries)
