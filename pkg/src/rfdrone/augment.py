"""Coexistence data generation by additive mixing of single-drone captures.

Two drones transmitting simultaneously superpose at the receiver, so a
coexistence segment is the element-wise sum of two single-drone segments,
band by band. No rescaling is applied after the sum; any normalization is
the feature stage's business. Only on-and-connected captures are mixed
(the one mode all three types share), and each type pair is expanded to the
full cross product of its sources, so 21 x 21 sources yield 441 mixes.
"""

from __future__ import annotations

from typing import Iterator

from .errors import LengthMismatch, MissingSourceClass
from .signals import (
    BuiLabel,
    DatasetManifest,
    DualBandSegment,
    ManifestEntry,
    ON_CONNECTED_BUI,
    check_rates,
    load_segment,
    parse_bui,
)

#: Canonical type pair -> coexistence BUI.
PAIR_BUI = {
    ("bebop", "ar"): "20000",
    ("bebop", "phantom"): "20100",
    ("ar", "phantom"): "21000",
}


def pair_bui(pair: tuple[str, str]) -> BuiLabel:
    """Coexistence BUI for a drone-type pair, accepting either order."""
    key = pair if pair in PAIR_BUI else (pair[1], pair[0])
    if key not in PAIR_BUI:
        raise MissingSourceClass(f"no coexistence class for pair {pair!r}")
    return parse_bui(PAIR_BUI[key])


def mix_segments(a: DualBandSegment, b: DualBandSegment) -> DualBandSegment:
    """Element-wise sum of two segments, per band."""
    if a.length != b.length:
        raise LengthMismatch(
            f"cannot mix segments of lengths {a.length} and {b.length}")
    check_rates(a, b)
    return DualBandSegment(a.low + b.low, a.high + b.high, a.sample_rate)


def _on_connected_entries(manifest: DatasetManifest,
                          drone_type: str) -> list[ManifestEntry]:
    bui = ON_CONNECTED_BUI[drone_type]
    entries = [e for e in manifest.entries if e.bui.digits == bui]
    if not entries:
        raise MissingSourceClass(
            f"manifest has no on-and-connected ({bui}) segments for "
            f"{drone_type!r}")
    return entries


def iter_coexistence_mixes(
        manifest: DatasetManifest,
        pair: tuple[str, str]) -> Iterator[tuple[DualBandSegment, BuiLabel]]:
    """Lazily yield all cross-product mixes for one type pair.

    Output order is lexicographic in the (first-type, second-type) source
    indices, with sources taken in manifest order, so regeneration is
    byte-for-byte reproducible. The second type's segments are held in
    memory across the sweep; the first type's are streamed.
    """
    key = pair if pair in PAIR_BUI else (pair[1], pair[0])
    label = pair_bui(key)
    first = _on_connected_entries(manifest, key[0])
    second = [load_segment(e) for e in _on_connected_entries(manifest, key[1])]
    for ea in first:
        seg_a = load_segment(ea)
        for seg_b in second:
            yield mix_segments(seg_a, seg_b), label


def generate_coexistence_set(
        manifest: DatasetManifest,
        pair: tuple[str, str]) -> list[tuple[DualBandSegment, BuiLabel]]:
    """Materialize the full coexistence set for one type pair.

    Convenience wrapper over :func:`iter_coexistence_mixes`; at full capture
    scale prefer the iterator and write each mix out as it is produced.
    """
    return list(iter_coexistence_mixes(manifest, pair))
