"""Dataset splitting, the training loop, and metric reporting.

A run is: stratified 80/10/10 split, fixed-epoch Adam training over
shuffled mini-batches (no early stopping), then one-vs-rest evaluation on
the held-out slice. Experiments repeat the whole run with shifted seeds and
report the plain mean of the per-run metrics.

Incomplete trailing mini-batches are dropped, which keeps batch statistics
well-defined and makes iteration counts exact: a 1550-segment seven-class
set at batch 32 trains 38 iterations per epoch, 190 over 5 epochs.

Metrics come from the confusion matrix (rows = true class, columns =
predicted): per-class one-vs-rest precision TP/(TP+FP) and recall TP/P,
macro-averaged without weights; the headline F1 is the harmonic mean of the
macro precision and macro recall. A class with an empty denominator scores
zero. Accuracy is trace/total exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ClassTooSmall,
    DivergedLoss,
    EmptyTestSet,
    EmptyTrainSet,
    InvalidSpec,
)
from .features import (
    DESK_STFT,
    MAP_SIZE,
    StftConfig,
    psd_feature,
    scu_feature,
    spectrogram_feature,
)
from .models import (
    Model,
    ModelSpec,
    build_1d_psd_baseline,
    build_resnet_stft,
)
from .nn import Adam, softmax_cross_entropy
from .signals import BuiLabel, Case, DatasetManifest, bui_to_class, load_segment


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test fractions plus the shuffling seed."""

    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(self.fractions))
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise InvalidSpec("fractions must be three nonnegative numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise InvalidSpec(f"fractions must sum to 1, got {self.fractions}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; presets mirror the two experiment scales."""

    batch_size: int
    max_epochs: int
    lr: float = 1e-4
    l2: float = 1e-4
    seed: int = 0
    repeats: int = 5

    def __post_init__(self):
        if self.batch_size < 2:
            raise InvalidSpec("batch_size must be >= 2 (batch statistics)")
        if self.max_epochs < 1 or self.repeats < 1:
            raise InvalidSpec("max_epochs and repeats must be positive")

    @classmethod
    def raw_preset(cls, **kw) -> "TrainConfig":
        return cls(batch_size=8, max_epochs=50, **kw)

    @classmethod
    def extended_preset(cls, **kw) -> "TrainConfig":
        return cls(batch_size=32, max_epochs=5, **kw)


@dataclass
class Curves:
    """Per-iteration training and per-epoch validation trajectories."""

    iterations: list[tuple[int, float, float]] = field(default_factory=list)
    epochs: list[tuple[int, float, float]] = field(default_factory=list)


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    confusion: np.ndarray


@dataclass
class TrainResult:
    model: Model
    adam: Adam
    curves: Curves


@dataclass
class RunRecord:
    run: int
    report: EvalReport
    curves: Curves
    model: Model | None = None
    adam: Adam | None = None


@dataclass
class ExperimentResult:
    case: Case
    model_kind: str
    runs: list[RunRecord]

    def mean_metrics(self) -> dict[str, float]:
        keys = ("accuracy", "precision", "recall", "f1")
        return {k: float(np.mean([getattr(r.report, k) for r in self.runs]))
                for k in keys}

    def total_confusion(self) -> np.ndarray:
        return np.sum([r.report.confusion for r in self.runs], axis=0)


def case_classes(buis: Sequence[BuiLabel], case: Case) -> list[int | None]:
    return [bui_to_class(case, b) for b in buis]


def _allocate(n: int, fractions) -> tuple[int, int, int]:
    n_train = int(np.floor(fractions[0] * n + 0.5))
    n_val = int(np.floor(fractions[1] * n + 0.5))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_dataset(buis, case: Case, spec: SplitSpec = SplitSpec()):
    """Index sets (train, val, test) over the samples the case covers.

    ``buis`` may be a DatasetManifest or a sequence of BuiLabels. Samples
    outside the case's universe are silently excluded; returned indices
    refer to positions in the original sequence. With stratification every
    covered class needs at least three samples and is split separately, so
    small classes cannot vanish from the training slice.
    """
    if isinstance(buis, DatasetManifest):
        buis = [e.bui for e in buis.entries]
    classes = case_classes(buis, case)
    included = [i for i, c in enumerate(classes) if c is not None]
    rng = np.random.default_rng(spec.seed)
    train: list[int] = []
    val: list[int] = []
    test: list[int] = []
    if spec.stratified:
        by_class: dict[int, list[int]] = {}
        for i in included:
            by_class.setdefault(classes[i], []).append(i)
        for cls in sorted(by_class):
            members = np.array(by_class[cls])
            if members.size < 3:
                raise ClassTooSmall(
                    f"class {cls} has {members.size} samples; stratified "
                    f"splitting needs >= 3")
            perm = members[rng.permutation(members.size)]
            n_tr, n_va, _ = _allocate(members.size, spec.fractions)
            train.extend(perm[:n_tr])
            val.extend(perm[n_tr:n_tr + n_va])
            test.extend(perm[n_tr + n_va:])
    else:
        perm = np.array(included)[rng.permutation(len(included))]
        n_tr, n_va, _ = _allocate(len(included), spec.fractions)
        train = list(perm[:n_tr])
        val = list(perm[n_tr:n_tr + n_va])
        test = list(perm[n_tr + n_va:])
    return sorted(train), sorted(val), sorted(test)


def _forward_batched(model: Model, x: np.ndarray,
                     batch: int = 64) -> np.ndarray:
    outs = [model.forward(x[i:i + batch], train=False)
            for i in range(0, x.shape[0], batch)]
    return np.concatenate(outs, axis=0)


def _eval_loss_acc(model: Model, x: np.ndarray,
                   y: np.ndarray) -> tuple[float, float]:
    logits = _forward_batched(model, x)
    loss, probs, _ = softmax_cross_entropy(logits, y)
    return float(loss), float(np.mean(probs.argmax(axis=1) == y))


def train(model: Model, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          val_x: np.ndarray | None = None,
          val_y: np.ndarray | None = None,
          shuffle_seed: int | None = None) -> TrainResult:
    """Fixed-epoch mini-batch training; validation is monitoring only.

    Records (iteration, loss, accuracy) per training batch before the
    update, and (epoch, loss, accuracy) on the validation set after each
    epoch. Raises DivergedLoss the moment the loss stops being finite.
    """
    n = x.shape[0]
    if n == 0:
        raise EmptyTrainSet("no training samples")
    if cfg.batch_size > n:
        raise EmptyTrainSet(
            f"batch size {cfg.batch_size} exceeds training set of {n}")
    seed = cfg.seed if shuffle_seed is None else shuffle_seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7a11]))
    adam = Adam(model.params(), lr=cfg.lr, weight_decay=cfg.l2)
    curves = Curves()
    iteration = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            model.zero_grad()
            logits = model.forward(xb, train=True)
            loss, probs, dlogits = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss} at iteration {iteration}")
            model.backward(dlogits.astype(x.dtype))
            adam.step()
            iteration += 1
            curves.iterations.append(
                (iteration, float(loss),
                 float(np.mean(probs.argmax(axis=1) == yb))))
        if val_x is not None and val_x.shape[0]:
            vloss, vacc = _eval_loss_acc(model, val_x, val_y)
            curves.epochs.append((epoch, vloss, vacc))
    return TrainResult(model, adam, curves)


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray,
                     num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
        cm[int(t), int(p)] += 1
    return cm


def metrics_from_confusion(cm: np.ndarray) -> EvalReport:
    cm = np.asarray(cm)
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, tp / col, 0.0)
        recall = np.where(row > 0, tp / row, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    macro_p = float(precision.mean())
    macro_r = float(recall.mean())
    macro_f1 = 0.0 if macro_p + macro_r == 0 \
        else 2.0 * macro_p * macro_r / (macro_p + macro_r)
    accuracy = float(tp.sum() / total) if total else 0.0
    return EvalReport(accuracy, macro_p, macro_r, macro_f1,
                      precision, recall, f1, cm)


def evaluate(model: Model, x: np.ndarray, y: np.ndarray) -> EvalReport:
    if x.shape[0] == 0:
        raise EmptyTestSet("no test samples")
    logits = _forward_batched(model, x)
    preds = logits.argmax(axis=1)
    return metrics_from_confusion(
        confusion_matrix(y, preds, model.num_classes))


# ---------------------------------------------------------------------------
# Dataset -> feature arrays

def extract_features(dataset, method: str,
                     stft_cfg: StftConfig = DESK_STFT,
                     psd_nfft: int = MAP_SIZE,
                     threads: int = 1):
    """Featurize every sample of a manifest or (segment, bui) sequence.

    Returns (features, buis): maps come back as (n, 1, 128, 128), PSD
    vectors as (n, 1, 1, len). Extraction order (and thus output order) is
    the dataset order regardless of thread count.
    """
    if isinstance(dataset, DatasetManifest):
        items: Iterable = dataset.entries
        get = lambda e: (load_segment(e), e.bui)  # noqa: E731
    else:
        items = dataset
        get = lambda pair: pair  # noqa: E731

    def featurize(item):
        seg, bui = get(item)
        if method == "stft":
            return spectrogram_feature(seg, stft_cfg).values[None], bui
        if method == "scu":
            return scu_feature(seg).values[None], bui
        if method == "psd":
            return psd_feature(seg, psd_nfft).values[None, None], bui
        raise InvalidSpec(f"unknown feature method {method!r}")

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(featurize, items))
    else:
        results = [featurize(item) for item in items]
    features = np.stack([feat for feat, _ in results])
    buis = [bui for _, bui in results]
    return features, buis


def default_method(model_kind: str) -> str:
    return {"resnet-stft": "stft", "psd-1d": "psd"}[model_kind]


def _build_model(model_kind: str, profile: str, num_classes: int,
                 psd_len: int, seed: int) -> Model:
    if model_kind == "resnet-stft":
        spec = ModelSpec.paper(num_classes) if profile == "paper" \
            else ModelSpec.tiny(num_classes)
        return build_resnet_stft(spec, seed=seed)
    if model_kind == "psd-1d":
        return build_1d_psd_baseline(num_classes, psd_len, seed=seed)
    raise InvalidSpec(f"unknown model kind {model_kind!r}")


def run_experiment(dataset, case: Case, model_kind: str, cfg: TrainConfig,
                   split: SplitSpec | None = None, profile: str = "tiny",
                   method: str | None = None,
                   stft_cfg: StftConfig = DESK_STFT,
                   psd_nfft: int = MAP_SIZE,
                   threads: int = 1,
                   features_buis=None,
                   dtype=np.float32) -> ExperimentResult:
    """Repeated split/train/eval over shifted seeds; metrics are averaged.

    Run r uses split seed ``split.seed + r`` and model/shuffle seed
    ``cfg.seed + r``. Pass ``features_buis`` to reuse already-extracted
    features (they are seed-independent). Training runs in single
    precision by default; results stay deterministic for a fixed seed.
    """
    method = method or default_method(model_kind)
    if features_buis is None:
        features, buis = extract_features(dataset, method, stft_cfg,
                                          psd_nfft, threads)
    else:
        features, buis = features_buis
    features = np.ascontiguousarray(features, dtype=dtype)
    if split is None:
        split = SplitSpec(seed=cfg.seed)
    classes = case_classes(buis, case)
    labels = np.array([-1 if c is None else c for c in classes])
    runs = []
    for r in range(cfg.repeats):
        run_split = SplitSpec(split.fractions, split.seed + r, split.stratified)
        tr, va, te = split_dataset(buis, case, run_split)
        model = _build_model(model_kind, profile, case.num_classes,
                             features.shape[-1], seed=cfg.seed + r)
        model.astype(dtype)
        result = train(model, features[tr], labels[tr], cfg,
                       features[va], labels[va], shuffle_seed=cfg.seed + r)
        report = evaluate(model, features[te], labels[te])
        runs.append(RunRecord(r, report, result.curves, model, result.adam))
    return ExperimentResult(case, model_kind, runs)


# ---------------------------------------------------------------------------
# Plain-text reporting

def _fmt(x: float) -> str:
    return repr(float(x))


def write_report_csv(result: ExperimentResult, path: Path | str) -> None:
    mean = result.mean_metrics()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "accuracy", "precision", "recall", "f1"])
        for rec in result.runs:
            rep = rec.report
            w.writerow([rec.run, _fmt(rep.accuracy), _fmt(rep.precision),
                        _fmt(rep.recall), _fmt(rep.f1)])
        w.writerow(["mean", _fmt(mean["accuracy"]), _fmt(mean["precision"]),
                    _fmt(mean["recall"]), _fmt(mean["f1"])])


def write_confusion_csv(result: ExperimentResult, path: Path | str) -> None:
    np.savetxt(path, result.total_confusion(), delimiter=",", fmt="%d")


def _moving_average(values: list[float], window: int = 5) -> list[float]:
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(values[lo:i + 1])))
    return out


def write_curves_csv(result: ExperimentResult, path: Path | str) -> None:
    """Iteration rows carry training columns, epoch rows validation columns.

    The *_ma5 columns are the 5-point trailing moving average of the
    training loss and accuracy.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "iteration", "train_loss", "train_acc",
                    "train_loss_ma5", "train_acc_ma5",
                    "epoch", "val_loss", "val_acc"])
        for rec in result.runs:
            losses = [it[1] for it in rec.curves.iterations]
            accs = [it[2] for it in rec.curves.iterations]
            ma_loss = _moving_average(losses)
            ma_acc = _moving_average(accs)
            for (it, loss, acc), ml, ma in zip(rec.curves.iterations,
                                               ma_loss, ma_acc):
                w.writerow([rec.run, it, _fmt(loss), _fmt(acc),
                            _fmt(ml), _fmt(ma), "", "", ""])
            for epoch, vloss, vacc in rec.curves.epochs:
                w.writerow([rec.run, "", "", "", "", "",
                            epoch, _fmt(vloss), _fmt(vacc)])
