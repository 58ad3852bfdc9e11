"""Dual-band segments, BUI label algebra, dataset manifests, and file ingestion.

A capture ("segment") is a pair of simultaneously sampled amplitude series,
one per 40 MHz band. Each segment carries a five-digit BUI class code:

    digit 1   0 = background only, 1 = single drone, 2 = two drones coexisting
    digits 23 drone type (single: 00 Bebop, 01 AR, 10 Phantom;
              coexisting: 00 Bebop&AR, 01 Bebop&Phantom, 10 AR&Phantom)
    digits 45 function mode (00 on-and-connected, 01 hovering,
              10 flying, 11 video recording)

Only the 13 codes in ``BUI_CATALOG`` name real classes; everything else is
rejected. On-disk contract: a band is a CSV of decimal reals (single line or
newline separated), named ``<BUI><L|H>_<index>.csv``.
"""

from __future__ import annotations

import csv
import enum
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidBui, LengthMismatch, NoEntries, ParseError, RateMismatch

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 40e6
#: Desk-scale default samples per band; full-scale captures carry 1e7.
DEFAULT_SEGMENT_LENGTH = 1_000_000

BEBOP = "bebop"
AR = "ar"
PHANTOM = "phantom"

MODE_NAMES = {
    "00": "on-and-connected",
    "01": "hovering",
    "10": "flying",
    "11": "video-recording",
}

#: BUI -> (kind, type names, mode code, nominal sample count).
#: Row order follows the dataset summary table; counts are the published ones.
BUI_CATALOG = {
    "00000": ("none", (), None, 41),
    "10000": ("single", (BEBOP,), "00", 21),
    "10001": ("single", (BEBOP,), "01", 21),
    "10010": ("single", (BEBOP,), "10", 21),
    "10011": ("single", (BEBOP,), "11", 21),
    "10100": ("single", (AR,), "00", 21),
    "10101": ("single", (AR,), "01", 21),
    "10110": ("single", (AR,), "10", 21),
    "10111": ("single", (AR,), "11", 18),
    "11000": ("single", (PHANTOM,), "00", 21),
    "20000": ("coexisting", (BEBOP, AR), "00", 441),
    "20100": ("coexisting", (BEBOP, PHANTOM), "00", 441),
    "21000": ("coexisting", (AR, PHANTOM), "00", 441),
}

#: On-and-connected source BUI per single drone type (the only mixable mode).
ON_CONNECTED_BUI = {BEBOP: "10000", AR: "10100", PHANTOM: "11000"}

TABLE_COUNTS = {bui: row[3] for bui, row in BUI_CATALOG.items()}


@dataclass(frozen=True)
class BuiLabel:
    """Validated five-digit class code plus its decoded meaning."""

    digits: str

    @property
    def kind(self) -> str:
        """'none', 'single', or 'coexisting'."""
        return BUI_CATALOG[self.digits][0]

    @property
    def drone_types(self) -> tuple[str, ...]:
        return BUI_CATALOG[self.digits][1]

    @property
    def mode(self) -> str | None:
        return BUI_CATALOG[self.digits][2]

    @property
    def mode_name(self) -> str | None:
        code = self.mode
        return None if code is None else MODE_NAMES[code]

    def __str__(self) -> str:
        return self.digits


def parse_bui(text: str) -> BuiLabel:
    """Parse and validate a five-digit BUI string.

    Raises InvalidBui for wrong length, an illegal digit, or a digit-wise
    legal code that names no real class (e.g. a Phantom flying mode).
    """
    if not isinstance(text, str) or len(text) != 5:
        raise InvalidBui(f"BUI must be a 5-character string, got {text!r}")
    if text[0] not in "012" or any(c not in "01" for c in text[1:]):
        raise InvalidBui(f"illegal digit in BUI {text!r}")
    if text not in BUI_CATALOG:
        raise InvalidBui(f"BUI {text!r} names no class in the catalog")
    return BuiLabel(text)


class Case(enum.Enum):
    """The five classification tasks, identified by their class structure."""

    I = "I"
    II_A = "II-A"
    II_B = "II-B"
    II_C = "II-C"
    III = "III"

    @classmethod
    def from_string(cls, text: str) -> "Case":
        for case in cls:
            if case.value == text:
                return case
        raise ValueError(f"unknown case {text!r}; expected one of "
                         f"{[c.value for c in cls]}")

    @property
    def num_classes(self) -> int:
        return {Case.I: 2, Case.II_A: 4, Case.II_B: 3,
                Case.II_C: 7, Case.III: 10}[self]

    def class_names(self) -> list[str]:
        single = ["none", "bebop", "ar", "phantom"]
        pairs = ["bebop&ar", "bebop&phantom", "ar&phantom"]
        if self is Case.I:
            return ["no-drone", "drone"]
        if self is Case.II_A:
            return single
        if self is Case.II_B:
            return pairs
        if self is Case.II_C:
            return single + pairs
        # Case III: none + the nine single-drone rows in catalog order.
        names = ["none"]
        for bui, (kind, types, mode, _) in BUI_CATALOG.items():
            if kind == "single":
                names.append(f"{types[0]}:{MODE_NAMES[mode]}")
        return names


_TYPE_INDEX = {BEBOP: 1, AR: 2, PHANTOM: 3}
_PAIR_INDEX = {(BEBOP, AR): 0, (BEBOP, PHANTOM): 1, (AR, PHANTOM): 2}
_SINGLE_ROW_INDEX = {
    bui: i for i, bui in enumerate(
        b for b, row in BUI_CATALOG.items() if row[0] == "single")
}


def bui_to_class(case: Case, bui: BuiLabel) -> int | None:
    """Map a label to the case's class index, or None when out of universe.

    None is a silent filter value, not an error; class 0 is a valid index,
    so callers must test ``is None`` rather than truthiness.
    """
    kind = bui.kind
    if case is Case.I:
        return 0 if kind == "none" else 1
    if case is Case.II_A:
        if kind == "none":
            return 0
        if kind == "single":
            return _TYPE_INDEX[bui.drone_types[0]]
        return None
    if case is Case.II_B:
        if kind == "coexisting":
            return _PAIR_INDEX[bui.drone_types]
        return None
    if case is Case.II_C:
        if kind == "none":
            return 0
        if kind == "single":
            return _TYPE_INDEX[bui.drone_types[0]]
        return 4 + _PAIR_INDEX[bui.drone_types]
    # Case III covers only the ten raw-dataset classes.
    if kind == "none":
        return 0
    if kind == "single":
        return 1 + _SINGLE_ROW_INDEX[bui.digits]
    return None


@dataclass(frozen=True)
class DualBandSegment:
    """One capture: low-band and high-band amplitude series of equal length.

    Arrays are float64 and frozen read-only after construction, so segments
    are safe to share across workers.
    """

    low: np.ndarray
    high: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        low = np.ascontiguousarray(self.low, dtype=np.float64)
        high = np.ascontiguousarray(self.high, dtype=np.float64)
        if low.ndim != 1 or high.ndim != 1:
            raise LengthMismatch("bands must be 1-D sample series")
        if low.shape != high.shape:
            raise LengthMismatch(
                f"band lengths differ: low {low.size}, high {high.size}")
        if low.size == 0:
            raise LengthMismatch("segment must contain at least one sample")
        if not (np.isfinite(low).all() and np.isfinite(high).all()):
            raise ParseError("segment contains NaN or infinite samples")
        low.setflags(write=False)
        high.setflags(write=False)
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def length(self) -> int:
        return self.low.size


@dataclass(frozen=True)
class ManifestEntry:
    low_path: Path
    high_path: Path
    bui: BuiLabel


@dataclass
class DatasetManifest:
    """Ordered list of segment file pairs with their labels."""

    entries: list[ManifestEntry]
    unpaired: list[Path] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            for p in (e.low_path, e.high_path):
                if p in seen:
                    raise ValueError(f"duplicate path in manifest: {p}")
                seen.add(p)

    def __len__(self) -> int:
        return len(self.entries)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.bui.digits] = out.get(e.bui.digits, 0) + 1
        return out

    def save(self, path: Path | str) -> None:
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["low_path", "high_path", "bui"])
            for e in self.entries:
                w.writerow([str(e.low_path), str(e.high_path), e.bui.digits])

    @classmethod
    def load(cls, path: Path | str) -> "DatasetManifest":
        path = Path(path)
        entries = []
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r, None)
            if header != ["low_path", "high_path", "bui"]:
                raise ParseError(f"{path}: bad manifest header {header!r}")
            for row in r:
                if not row:
                    continue
                if len(row) != 3:
                    raise ParseError(f"{path}: bad manifest row {row!r}")
                entries.append(ManifestEntry(
                    Path(row[0]), Path(row[1]), parse_bui(row[2])))
        return cls(entries)


def _read_band(path: Path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    tokens = re.split(r"[,\s]+", text.strip())
    if not tokens or tokens == [""]:
        raise ParseError(f"{path}: empty segment file")
    try:
        values = np.array(tokens, dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric token ({exc})") from None
    if not np.isfinite(values).all():
        raise ParseError(f"{path}: non-finite sample value")
    return values


#: Largest tolerated relative length difference between the two band files.
LENGTH_TOLERANCE = 0.01


def load_segment(entry: ManifestEntry,
                 sample_rate: float = DEFAULT_SAMPLE_RATE) -> DualBandSegment:
    """Load both band files of a manifest entry.

    Lengths within ``LENGTH_TOLERANCE`` of each other are equalized by
    truncating the longer band (with a warning); a larger gap means the
    capture is misaligned and is rejected.
    """
    low = _read_band(entry.low_path)
    high = _read_band(entry.high_path)
    if low.size != high.size:
        longer = max(low.size, high.size)
        if (longer - min(low.size, high.size)) / longer > LENGTH_TOLERANCE:
            raise LengthMismatch(
                f"{entry.low_path} / {entry.high_path}: lengths {low.size} vs "
                f"{high.size} differ by more than {LENGTH_TOLERANCE:.0%}")
        n = min(low.size, high.size)
        log.warning("truncating %s/%s from (%d, %d) to %d samples",
                    entry.low_path.name, entry.high_path.name,
                    low.size, high.size, n)
        low, high = low[:n], high[:n]
    return DualBandSegment(low, high, sample_rate)


def save_segment(seg: DualBandSegment, low_path: Path | str,
                 high_path: Path | str) -> None:
    """Write both bands as single-line CSVs that round-trip at full precision."""
    for path, band in ((low_path, seg.low), (high_path, seg.high)):
        with open(path, "w") as f:
            np.savetxt(f, band[None, :], delimiter=",", fmt="%.17g")


_SEGMENT_FILE = re.compile(r"^([012][01]{4})([LH])_(\d+)\.csv$")


def scan_dataset(root: Path | str) -> DatasetManifest:
    """Recursively pair `<BUI><L|H>_<index>.csv` files under ``root``.

    Files are paired by (directory, BUI, index). Files with no partner or
    with an invalid BUI are collected in ``manifest.unpaired`` and logged,
    never silently dropped.
    """
    root = Path(root)
    found: dict[tuple[Path, str, int], dict[str, Path]] = {}
    unpaired: list[Path] = []
    for path in sorted(root.rglob("*.csv")):
        m = _SEGMENT_FILE.match(path.name)
        if not m:
            continue
        digits, band, index = m.group(1), m.group(2), int(m.group(3))
        if digits not in BUI_CATALOG:
            log.warning("skipping %s: BUI %s not in catalog", path, digits)
            unpaired.append(path)
            continue
        found.setdefault((path.parent, digits, index), {})[band] = path
    entries = []
    for (_, digits, _index), bands in sorted(
            found.items(), key=lambda kv: (kv[0][1], kv[0][2], str(kv[0][0]))):
        if "L" in bands and "H" in bands:
            entries.append(ManifestEntry(bands["L"], bands["H"],
                                         BuiLabel(digits)))
        else:
            for path in bands.values():
                log.warning("unpaired segment file: %s", path)
                unpaired.append(path)
    if not entries:
        raise NoEntries(f"no segment pairs found under {root}")
    return DatasetManifest(entries, unpaired)


def segment_filenames(bui: BuiLabel, index: int) -> tuple[str, str]:
    """Low/high filenames for one segment under the dataset naming contract."""
    return f"{bui.digits}L_{index}.csv", f"{bui.digits}H_{index}.csv"


def check_rates(a: DualBandSegment, b: DualBandSegment) -> None:
    if a.sample_rate != b.sample_rate:
        raise RateMismatch(
            f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")
