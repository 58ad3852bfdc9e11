"""RF drone detection and identification at desk scale.

Submodules:
    signals   segments, BUI labels, classification cases, manifests, file IO
    augment   additive coexistence mixing
    features  STFT / SCU maps and PSD vectors
    nn        numpy layer engine: conv, batch norm, losses, Adam, grad check
    models    ResNet map classifier, 1-D PSD baseline, checkpoints
    harness   splits, training loop, metrics, repeated experiments
    synth     deterministic synthetic dataset generator
    cli       the `rfdrone` executable
"""

from .signals import (  # noqa: F401
    BuiLabel,
    Case,
    DatasetManifest,
    DualBandSegment,
    ManifestEntry,
    bui_to_class,
    load_segment,
    parse_bui,
    save_segment,
    scan_dataset,
)

__version__ = "0.1.0"
