"""Network assembly: the dual-band map ResNet and the 1-D PSD baseline.

The map classifier is a three-stage residual network. Each stage opens with
a stride-2 block whose shortcut is a 1x1 stride-2 projection (plus batch
norm), then continues with identity blocks; block bodies are the basic
conv3x3-BN-ReLU-conv3x3-BN with the shortcut added before the final ReLU.
A 3x3 stride-1 stem precedes stage one and a 1x1 convolution to num_classes
followed by global average pooling replaces a dense head, so logits come
straight out of the pooling.

Layer accounting follows the usual residual-network naming convention:
count the weighted layers on the main path (stem conv, two convs per block,
the 1x1 head) and leave the shortcut projections out. The full-size profile
uses stage widths (128, 256, 512) with (12, 12, 11) blocks, which counts
1 + 2*35 + 1 = 72. The `tiny` profile (16/32/64 widths, 2 blocks per stage)
is the desk-scale default for end-to-end runs.

The baseline consumes the one-sided dual-band PSD vector with three 1-D
conv blocks (kernel 5, stride 2, widths 32/64/64, each with BN and ReLU),
global average pooling, and a dense softmax head. 1-D convolutions are
realized as 2-D convolutions over (N, C, 1, L).

Classifier heads are zero-initialized in both models, so a fresh model
predicts the uniform distribution; body convs use He-uniform fan-in init.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidSpec, NoForwardCache, ShapeMismatch
from .features import MAP_SIZE, FeatureMap, PsdVector
from .nn import (
    Adam,
    BatchNorm,
    Conv2d,
    GlobalAvgPool,
    Layer,
    Linear,
    ReLU,
    Sequential,
    Tensor,
    kaiming_uniform,
    softmax,
)

CHECKPOINT_FORMAT_VERSION = 1

_VALID_NUM_CLASSES = (2, 3, 4, 7, 10)

PAPER_STAGE_CHANNELS = (128, 256, 512)
PAPER_BLOCKS = (12, 12, 11)
TINY_STAGE_CHANNELS = (16, 32, 64)
TINY_BLOCKS = (2, 2, 2)


@dataclass(frozen=True)
class ModelSpec:
    """Declarative shape of a map ResNet."""

    profile: str
    num_classes: int
    stage_channels: tuple[int, ...] = PAPER_STAGE_CHANNELS
    blocks_per_stage: tuple[int, ...] = PAPER_BLOCKS
    stem_channels: int = 64

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "blocks_per_stage",
                           tuple(self.blocks_per_stage))
        if self.num_classes not in _VALID_NUM_CLASSES:
            raise InvalidSpec(
                f"num_classes must be one of {_VALID_NUM_CLASSES}, "
                f"got {self.num_classes}")
        if len(self.stage_channels) != len(self.blocks_per_stage) \
                or not self.stage_channels:
            raise InvalidSpec("stage_channels and blocks_per_stage must be "
                              "non-empty and equally long")
        if any(b < 1 for b in self.blocks_per_stage) \
                or any(c < 1 for c in self.stage_channels) \
                or self.stem_channels < 1:
            raise InvalidSpec("channel and block counts must be positive")
        if self.profile == "paper":
            if (self.stage_channels != PAPER_STAGE_CHANNELS
                    or self.blocks_per_stage != PAPER_BLOCKS
                    or self.stem_channels != 64):
                raise InvalidSpec("profile 'paper' is fixed to stage widths "
                                  f"{PAPER_STAGE_CHANNELS} with blocks "
                                  f"{PAPER_BLOCKS} and a 64-channel stem")
        elif self.profile == "tiny":
            if (self.stage_channels != TINY_STAGE_CHANNELS
                    or self.blocks_per_stage != TINY_BLOCKS
                    or self.stem_channels != 16):
                raise InvalidSpec("profile 'tiny' is fixed to stage widths "
                                  f"{TINY_STAGE_CHANNELS} with blocks "
                                  f"{TINY_BLOCKS} and a 16-channel stem")
        elif self.profile != "custom":
            raise InvalidSpec(f"unknown profile {self.profile!r}")

    @classmethod
    def paper(cls, num_classes: int) -> "ModelSpec":
        return cls("paper", num_classes)

    @classmethod
    def tiny(cls, num_classes: int) -> "ModelSpec":
        return cls("tiny", num_classes, TINY_STAGE_CHANNELS, TINY_BLOCKS, 16)


@dataclass(frozen=True)
class BaselineSpec:
    """Declarative shape of the 1-D PSD baseline."""

    num_classes: int
    psd_len: int
    channels: tuple[int, ...] = (32, 64, 64)
    kernel: int = 5
    stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.num_classes not in _VALID_NUM_CLASSES:
            raise InvalidSpec(
                f"num_classes must be one of {_VALID_NUM_CLASSES}, "
                f"got {self.num_classes}")
        if self.psd_len < 16:
            raise InvalidSpec(f"psd_len must be >= 16, got {self.psd_len}")


@dataclass(frozen=True)
class ResBlockSpec:
    """One residual block: projection shortcut iff shape changes."""

    in_channels: int
    out_channels: int
    stride: int

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise InvalidSpec(f"block stride must be 1 or 2, got {self.stride}")

    @property
    def needs_projection(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


def block_specs(spec: ModelSpec) -> list[ResBlockSpec]:
    """Flat block list: every stage opens with a stride-2 block."""
    blocks = []
    in_ch = spec.stem_channels
    for channels, count in zip(spec.stage_channels, spec.blocks_per_stage):
        blocks.append(ResBlockSpec(in_ch, channels, stride=2))
        blocks.extend(ResBlockSpec(channels, channels, stride=1)
                      for _ in range(count - 1))
        in_ch = channels
    return blocks


def count_weighted_layers(spec: ModelSpec) -> int:
    """Main-path weighted layers: stem + 2 per block + 1x1 head."""
    return 1 + 2 * sum(spec.blocks_per_stage) + 1


class ResidualBlock(Layer):
    """conv3x3 -> BN -> ReLU -> conv3x3 -> BN, add shortcut, ReLU."""

    def __init__(self, block: ResBlockSpec, rng: np.random.Generator):
        def conv3x3(cin, cout, stride):
            w = kaiming_uniform(rng, (cout, cin, 3, 3), fan_in=cin * 9)
            return Conv2d(w, stride=stride, padding=1)

        self.spec = block
        self.body = Sequential([
            conv3x3(block.in_channels, block.out_channels, block.stride),
            BatchNorm(block.out_channels),
            ReLU(),
            conv3x3(block.out_channels, block.out_channels, 1),
            BatchNorm(block.out_channels),
        ])
        if block.needs_projection:
            w = kaiming_uniform(
                rng, (block.out_channels, block.in_channels, 1, 1),
                fan_in=block.in_channels)
            self.shortcut = Sequential([
                Conv2d(w, stride=block.stride, padding=0),
                BatchNorm(block.out_channels),
            ])
        else:
            self.shortcut = None
        self._mask = None

    def params(self):
        out = self.body.params()
        if self.shortcut is not None:
            out.extend(self.shortcut.params())
        return out

    def named_params(self, prefix=""):
        out = self.body.named_params(prefix + "body.")
        if self.shortcut is not None:
            out.extend(self.shortcut.named_params(prefix + "shortcut."))
        return out

    def named_buffers(self, prefix=""):
        out = self.body.named_buffers(prefix + "body.")
        if self.shortcut is not None:
            out.extend(self.shortcut.named_buffers(prefix + "shortcut."))
        return out

    def out_shape(self, shape):
        main = self.body.out_shape(shape)
        skip = shape if self.shortcut is None else self.shortcut.out_shape(shape)
        if main != skip:
            raise ShapeMismatch(
                f"residual add mismatch: body {main} vs shortcut {skip}")
        return main

    def forward(self, x, train=False):
        out = self.body.forward(x, train)
        skip = x if self.shortcut is None else self.shortcut.forward(x, train)
        if out.shape != skip.shape:
            raise ShapeMismatch(
                f"residual add mismatch: body {out.shape} vs shortcut "
                f"{skip.shape}")
        total = out + skip
        self._mask = total > 0
        return np.where(self._mask, total, 0.0)

    def backward(self, dout):
        if self._mask is None:
            raise NoForwardCache("ResidualBlock.backward before forward")
        mask, self._mask = self._mask, None
        dsum = np.where(mask, dout, 0.0)
        dx = self.body.backward(dsum)
        if self.shortcut is None:
            return dx + dsum
        return dx + self.shortcut.backward(dsum)


class Model:
    """A built network plus the metadata needed to rebuild and feed it."""

    def __init__(self, net: Sequential, kind: str, spec, sample_shape: tuple,
                 init_meta: dict):
        self.net = net
        self.kind = kind
        self.spec = spec
        self.sample_shape = tuple(sample_shape)  # per-sample (C, H, W)
        self.init_meta = dict(init_meta)

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def params(self):
        return self.net.params()

    def named_params(self):
        return self.net.named_params()

    def named_buffers(self):
        return self.net.named_buffers()

    def zero_grad(self):
        self.net.zero_grad()

    def out_shape(self, shape):
        return self.net.out_shape(shape)

    def forward(self, x, train=False):
        return self.net.forward(x, train)

    def backward(self, dout):
        return self.net.backward(dout)

    def astype(self, dtype) -> "Model":
        """Cast every parameter, gradient, and buffer in place.

        Training runs in single precision for speed; gradient checks and
        the numeric oracles stay in double (the default build dtype).
        """
        for _, tensor in self.named_params():
            tensor.astype(dtype)
        for layer in self._walk(self.net):
            if isinstance(layer, BatchNorm):
                layer.running_mean = layer.running_mean.astype(dtype)
                layer.running_var = layer.running_var.astype(dtype)
        return self

    @staticmethod
    def _walk(layer):
        yield layer
        for child in getattr(layer, "layers", []):
            yield from Model._walk(child)
        for attr in ("body", "shortcut"):
            child = getattr(layer, attr, None)
            if child is not None:
                yield from Model._walk(child)


def build_resnet_stft(spec: ModelSpec, seed: int = 0) -> Model:
    """Assemble the dual-band map classifier; init is deterministic in seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5e5]))
    stem_w = kaiming_uniform(rng, (spec.stem_channels, 1, 3, 3), fan_in=9)
    layers: list[Layer] = [
        Conv2d(stem_w, stride=1, padding=1),
        BatchNorm(spec.stem_channels),
        ReLU(),
    ]
    for block in block_specs(spec):
        layers.append(ResidualBlock(block, rng))
    head_in = spec.stage_channels[-1]
    layers.append(Conv2d(np.zeros((spec.num_classes, head_in, 1, 1))))
    layers.append(GlobalAvgPool())
    return Model(Sequential(layers), "resnet-stft", spec,
                 (1, MAP_SIZE, MAP_SIZE),
                 {"scheme": "kaiming-uniform(fan_in), zero head", "seed": seed})


def build_1d_psd_baseline(num_classes: int, psd_len: int,
                          seed: int = 0,
                          spec: BaselineSpec | None = None) -> Model:
    """Assemble the PSD-vector baseline; init is deterministic in seed."""
    if spec is None:
        spec = BaselineSpec(num_classes, psd_len)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xb5d]))
    layers: list[Layer] = []
    in_ch = 1
    for ch in spec.channels:
        w = kaiming_uniform(rng, (ch, in_ch, 1, spec.kernel),
                            fan_in=in_ch * spec.kernel)
        layers.extend([
            Conv2d(w, stride=(1, spec.stride),
                   padding=(0, spec.kernel // 2)),
            BatchNorm(ch),
            ReLU(),
        ])
        in_ch = ch
    layers.append(GlobalAvgPool())
    layers.append(Linear(np.zeros((in_ch, spec.num_classes)),
                         np.zeros(spec.num_classes)))
    return Model(Sequential(layers), "psd-1d", spec, (1, 1, spec.psd_len),
                 {"scheme": "kaiming-uniform(fan_in), zero head", "seed": seed})


def _as_batch(model: Model, feature) -> np.ndarray:
    if isinstance(feature, FeatureMap):
        arr = feature.values
    elif isinstance(feature, PsdVector):
        arr = feature.values
    else:
        arr = np.asarray(feature, dtype=np.float64)
    want = model.sample_shape
    if arr.shape == want:
        return arr[None]
    flat_len = int(np.prod(want))
    if arr.ndim == 1 and arr.size == flat_len:
        return arr.reshape((1,) + want)
    if arr.ndim == 2 and arr.shape == want[-2:] and want[0] == 1:
        return arr[None, None]
    if arr.ndim == 4 and arr.shape[1:] == want:
        return arr
    raise ShapeMismatch(
        f"feature shape {arr.shape} does not fit model input {want}")


def predict(model: Model, feature) -> tuple[int, np.ndarray]:
    """Class index and probability vector; ties go to the lowest index."""
    batch = _as_batch(model, feature)
    if batch.shape[0] != 1:
        raise ShapeMismatch("predict() scores one feature at a time")
    probs = softmax(model.forward(batch, train=False))[0]
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# Checkpoints: one .npz holding a JSON manifest plus parameter, buffer, and
# optimizer arrays. Layout (format version 1):
#   meta            JSON: version, kind, spec, init metadata, array names
#   param:<name>    one array per learnable tensor, in named_params order
#   buffer:<name>   running statistics and other non-learnable state
#   adam:m<i>/v<i>  optimizer moments, present only when saved with state

def save_checkpoint(path, model: Model, adam: Adam | None = None,
                    extra: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in model.named_params():
        arrays[f"param:{name}"] = tensor.data
    for name, buf in model.named_buffers():
        arrays[f"buffer:{name}"] = buf
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": model.kind,
        "spec": asdict(model.spec),
        "sample_shape": list(model.sample_shape),
        "init": model.init_meta,
        "params": [name for name, _ in model.named_params()],
        "buffers": [name for name, _ in model.named_buffers()],
        "adam": None,
        "extra": extra or {},
    }
    if adam is not None:
        state = adam.state_dict()
        meta["adam"] = state["scalars"]
        for key, arr in state["arrays"].items():
            arrays[f"adam:{key}"] = arr
    np.savez(path, meta=np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def _rebuild(meta: dict) -> Model:
    kind = meta["kind"]
    if kind == "resnet-stft":
        return build_resnet_stft(ModelSpec(**meta["spec"]),
                                 seed=meta["init"].get("seed", 0))
    if kind == "psd-1d":
        spec = BaselineSpec(**meta["spec"])
        return build_1d_psd_baseline(spec.num_classes, spec.psd_len,
                                     seed=meta["init"].get("seed", 0),
                                     spec=spec)
    raise InvalidSpec(f"unknown model kind {kind!r} in checkpoint")


def load_checkpoint(path) -> tuple[Model, Adam | None, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise InvalidSpec(
                f"unsupported checkpoint format {meta['format_version']}")
        model = _rebuild(meta)
        named = dict(model.named_params())
        if list(named) != meta["params"]:
            raise InvalidSpec("checkpoint parameter list does not match the "
                              "rebuilt architecture")
        for name in meta["params"]:
            arr = data[f"param:{name}"]
            if arr.shape != named[name].data.shape:
                raise ShapeMismatch(
                    f"checkpoint param {name} has shape {arr.shape}, "
                    f"model expects {named[name].data.shape}")
            named[name].data = np.array(arr)
        buffers = dict(model.named_buffers())
        for name in meta["buffers"]:
            buffers[name][...] = data[f"buffer:{name}"]
        adam = None
        if meta["adam"] is not None:
            adam = Adam(model.params())
            adam.load_state_dict({
                "scalars": meta["adam"],
                "arrays": {key.split(":", 1)[1]: data[key]
                           for key in data.files if key.startswith("adam:")},
            })
    return model, adam, meta
