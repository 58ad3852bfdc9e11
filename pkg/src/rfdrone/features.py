"""Classifier input features: STFT map, simple-cutting (SCU) map, PSD vector.

All three features start from the same primitive, a power-of-two DFT of a
windowed slice of one band. The 2-D features are fixed 128x128 maps:

* 128 time columns come from the framing (overlapping Hamming windows for
  STFT, equal non-overlapping chunks for SCU);
* 128 frequency rows come from stacking the two bands, 64 one-sided bins
  each. A 128-point transform of real data has 65 one-sided bins, so the
  DC bin is dropped per band and rows 0-63 hold low-band bins 1-64 while
  rows 64-127 hold high-band bins 1-64. High-band energy therefore lands
  in the lower half of the map.

A frame is much longer than the 128 transform points. Rather than resample,
the windowed frame is folded: split into 128-sample blocks (zero-padding the
tail) and summed. The 128-point DFT of the folded frame equals the full
frame's transform evaluated at the 128 bin frequencies 2*pi*k/128, so the
frame's spectral content is kept exactly at those bins.

Maps are log-power scaled, 10*log10(|X|^2 + 1e-12), then min-max normalized
to [0, 1] per map; a zero-energy segment maps to the all-zero map. The PSD
feature is the chunk-averaged periodogram |DFT|^2 / N, one-sided, low band
then high band, with no log scaling or bin doubling.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    FrameCountMismatch,
    InvalidLength,
    NotPowerOfTwo,
    ShapeMismatch,
    SignalTooShort,
)
from .signals import DualBandSegment

#: Side length of every 2-D feature map.
MAP_SIZE = 128

LOG_EPS = 1e-12


@dataclass(frozen=True)
class StftConfig:
    """Framing parameters for the overlapping-window transform.

    Defaults are the desk-scale config for 1e6-sample bands; for full-scale
    1e7-sample captures use ``PAPER_STFT``. Both keep the 11.36% overlap
    ratio and produce exactly 128 frames at their nominal lengths.
    """

    window_len: int = 8800
    overlap: int = 1000
    n_fft: int = 128
    window_kind: str = "hamming"

    def __post_init__(self):
        if self.window_len < 2:
            raise InvalidLength(f"window_len must be >= 2, got {self.window_len}")
        if not 0 <= self.overlap < self.window_len:
            raise InvalidLength(
                f"overlap must satisfy 0 <= overlap < window_len, got "
                f"{self.overlap} for window {self.window_len}")
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise NotPowerOfTwo(f"n_fft must be a power of two, got {self.n_fft}")
        if self.window_kind != "hamming":
            raise InvalidLength(f"unsupported window kind {self.window_kind!r}")

    @property
    def hop(self) -> int:
        return self.window_len - self.overlap

    @property
    def overlap_ratio(self) -> float:
        return self.overlap / self.window_len

    def frame_count(self, signal_len: int) -> int:
        if signal_len < self.window_len:
            raise SignalTooShort(
                f"signal of {signal_len} samples is shorter than one "
                f"{self.window_len}-sample window")
        return (signal_len - self.window_len) // self.hop + 1


DESK_STFT = StftConfig(window_len=8800, overlap=1000)
PAPER_STFT = StftConfig(window_len=88000, overlap=10000)


@dataclass(frozen=True)
class FeatureMap:
    """128x128 real map; rows are frequency (dual-band stacked), columns time."""

    values: np.ndarray
    scale: str  # 'linear-magnitude' | 'log-magnitude' | 'minmax-normalized'

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (MAP_SIZE, MAP_SIZE):
            raise ShapeMismatch(f"feature map must be {MAP_SIZE}x{MAP_SIZE}, "
                                f"got {v.shape}")
        if not np.isfinite(v).all():
            raise ShapeMismatch("feature map contains non-finite values")
        if self.scale == "minmax-normalized" and (v.min() < 0 or v.max() > 1):
            raise ShapeMismatch("normalized map has values outside [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PsdVector:
    """One-sided chunk-averaged periodograms, low band then high band."""

    values: np.ndarray
    n_fft: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size != 2 * (self.n_fft // 2 + 1):
            raise ShapeMismatch(
                f"PSD vector must hold 2*({self.n_fft}//2+1) bins, got {v.shape}")
        if not np.isfinite(v).all() or v.min() < 0:
            raise ShapeMismatch("PSD values must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def hamming_window(length: int) -> np.ndarray:
    """w[n] = 0.54 - 0.46*cos(2*pi*n/(len-1)); symmetric, w[0] = 0.08."""
    if length < 2:
        raise InvalidLength(f"window length must be >= 2, got {length}")
    n = np.arange(length)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft(x: np.ndarray, n: int | None = None) -> np.ndarray:
    """Iterative radix-2 decimation-in-time transform along the last axis.

    The input is zero-padded or truncated to ``n`` points, which must be a
    power of two. Leading axes are carried through, so a stack of frames is
    transformed in one call.
    """
    x = np.asarray(x)
    if n is None:
        n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise NotPowerOfTwo(f"transform size must be a power of two, got {n}")
    if x.shape[-1] > n:
        x = x[..., :n]
    elif x.shape[-1] < n:
        pad = [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])]
        x = np.pad(x, pad)
    out = np.array(x, dtype=np.complex128)
    if n == 1:
        return out
    out = out[..., _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        view = out.reshape(out.shape[:-1] + (n // size, size))
        odd = view[..., half:] * twiddle
        view[..., half:] = view[..., :half] - odd
        view[..., :half] += odd
        size *= 2
    return out


def fold_frames(frames: np.ndarray, n_fft: int) -> np.ndarray:
    """Sum each frame's 128-sample blocks, zero-padding the tail block.

    The n_fft-point DFT of the folded frame equals the long frame's DFT
    sampled at the n_fft uniformly spaced bin frequencies.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n_frames, frame_len = frames.shape
    blocks = -(-frame_len // n_fft)
    if frame_len < blocks * n_fft:
        frames = np.pad(frames, ((0, 0), (0, blocks * n_fft - frame_len)))
    return frames.reshape(n_frames, blocks, n_fft).sum(axis=1)


def stft(band: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Windowed overlapping frames -> folded n_fft-point spectra.

    Returns a complex (frame_count, n_fft) array, one spectrum per row.
    """
    band = np.asarray(band, dtype=np.float64)
    n_frames = cfg.frame_count(band.size)
    window = hamming_window(cfg.window_len)
    frames = np.lib.stride_tricks.sliding_window_view(
        band, cfg.window_len)[::cfg.hop][:n_frames]
    return fft(fold_frames(frames * window, cfg.n_fft), cfg.n_fft)


def _dual_band_map(low_spectra: np.ndarray, high_spectra: np.ndarray,
                   n_fft: int) -> FeatureMap:
    """Stack one-sided band spectra into the normalized 128x128 map."""
    half = n_fft // 2
    if low_spectra.shape[0] != MAP_SIZE:
        raise FrameCountMismatch(
            f"framing produced {low_spectra.shape[0]} frames, map needs "
            f"{MAP_SIZE}")
    if 2 * half != MAP_SIZE:
        raise FrameCountMismatch(
            f"n_fft={n_fft} cannot fill {MAP_SIZE} stacked frequency rows")
    rows = np.empty((MAP_SIZE, MAP_SIZE))
    # Bins 1..half per band (DC dropped); columns are frames.
    rows[:half] = np.abs(low_spectra[:, 1:half + 1]).T
    rows[half:] = np.abs(high_spectra[:, 1:half + 1]).T
    logpow = 10.0 * np.log10(rows ** 2 + LOG_EPS)
    lo, hi = logpow.min(), logpow.max()
    if hi == lo:
        return FeatureMap(np.zeros((MAP_SIZE, MAP_SIZE)), "minmax-normalized")
    return FeatureMap((logpow - lo) / (hi - lo), "minmax-normalized")


def spectrogram_feature(seg: DualBandSegment,
                        cfg: StftConfig = DESK_STFT) -> FeatureMap:
    """Overlapping-window dual-band map; cfg must yield exactly 128 frames."""
    n_frames = cfg.frame_count(seg.length)
    if n_frames != MAP_SIZE:
        raise FrameCountMismatch(
            f"config yields {n_frames} frames for {seg.length} samples; "
            f"the map needs exactly {MAP_SIZE}")
    return _dual_band_map(stft(seg.low, cfg), stft(seg.high, cfg), cfg.n_fft)


def scu_feature(seg: DualBandSegment, n_fft: int = MAP_SIZE) -> FeatureMap:
    """Non-overlapping equal-chunk dual-band map (the no-window ablation).

    Each band is cut into 128 contiguous chunks of floor(length/128) samples
    (any remainder is discarded) and each chunk is folded and transformed
    like an STFT frame, without a taper.
    """
    chunk = seg.length // MAP_SIZE
    if chunk < 1:
        raise SignalTooShort(
            f"band of {seg.length} samples cannot be cut into {MAP_SIZE} chunks")

    def band_spectra(band: np.ndarray) -> np.ndarray:
        chunks = band[:chunk * MAP_SIZE].reshape(MAP_SIZE, chunk)
        return fft(fold_frames(chunks, n_fft), n_fft)

    return _dual_band_map(band_spectra(seg.low), band_spectra(seg.high), n_fft)


def psd_feature(seg: DualBandSegment, n_fft: int = MAP_SIZE,
                max_chunks: int | None = None) -> PsdVector:
    """Chunk-averaged periodogram |DFT|^2 / N, one-sided, bands concatenated.

    ``max_chunks`` caps how many non-overlapping n_fft-sample chunks are
    averaged per band (all available by default).
    """
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise NotPowerOfTwo(f"n_fft must be a power of two, got {n_fft}")

    def band_psd(band: np.ndarray) -> np.ndarray:
        n_chunks = band.size // n_fft
        if n_chunks < 1:
            raise SignalTooShort(
                f"band of {band.size} samples has no full {n_fft}-sample chunk")
        if max_chunks is not None:
            n_chunks = min(n_chunks, max_chunks)
        chunks = band[:n_chunks * n_fft].reshape(n_chunks, n_fft)
        periodograms = np.abs(fft(chunks, n_fft)) ** 2 / n_fft
        return periodograms.mean(axis=0)[:n_fft // 2 + 1]

    return PsdVector(np.concatenate([band_psd(seg.low), band_psd(seg.high)]),
                     n_fft)


# ---------------------------------------------------------------------------
# File output: full-precision CSV for training, 8-bit P5 graymap for eyes.

def write_feature_csv(fmap: FeatureMap, path: Path | str) -> None:
    np.savetxt(path, fmap.values, delimiter=",", fmt="%.17g")


def read_feature_csv(path: Path | str) -> FeatureMap:
    values = np.loadtxt(path, delimiter=",")
    scale = "minmax-normalized" if values.min() >= 0 and values.max() <= 1 \
        else "linear-magnitude"
    return FeatureMap(values, scale)


def write_pgm(fmap: FeatureMap, path: Path | str) -> None:
    v = fmap.values
    lo, hi = v.min(), v.max()
    levels = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    data = np.round(levels * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_psd_csv(vec: PsdVector, path: Path | str) -> None:
    np.savetxt(path, vec.values[None, :], delimiter=",", fmt="%.17g")


def read_psd_csv(path: Path | str, n_fft: int = MAP_SIZE) -> PsdVector:
    return PsdVector(np.loadtxt(path, delimiter=","), n_fft)
