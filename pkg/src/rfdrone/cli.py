"""Single-executable pipeline driver.

Subcommands: synth, ingest, augment, featurize, train, eval, predict.
Exit codes: 0 success, 1 usage error, 2 data error. Every run that writes
outputs also writes ``run_manifest.txt`` with the fully resolved
configuration (all defaults made explicit); timestamps appear only there,
so all other outputs are byte-for-byte reproducible for a fixed seed.

A ``--config`` file holds ``key=value`` lines (dashes or underscores, ``#``
comments); command-line flags win over file values. ``--threads`` (or the
RFDRONE_THREADS environment variable) caps worker threads where a stage
parallelizes.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import augment as aug
from . import features as feat
from . import harness, models, synth
from .errors import RfdroneError
from .signals import (
    Case,
    DatasetManifest,
    DualBandSegment,
    TABLE_COUNTS,
    load_segment,
    parse_bui,
    scan_dataset,
    segment_filenames,
    save_segment,
    ManifestEntry,
)


class UsageError(Exception):
    """Bad invocation; carries the usage text."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("RFDRONE_THREADS", "1")))
    except ValueError:
        return 1


def _add_common(p: _Parser):
    p.add_argument("--config", type=Path, default=None,
                   help="key=value file; flags override its values")
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker-thread cap (env RFDRONE_THREADS)")


def _add_feature_flags(p: _Parser):
    p.add_argument("--method", choices=["stft", "scu", "psd"], default=None)
    p.add_argument("--window-len", type=int, default=feat.DESK_STFT.window_len)
    p.add_argument("--overlap", type=int, default=feat.DESK_STFT.overlap)
    p.add_argument("--nfft", type=int, default=feat.DESK_STFT.n_fft)


def build_parser() -> _Parser:
    parser = _Parser(prog="rfdrone",
                     description="RF drone detection pipeline")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", parents=[], help="generate synthetic segments",
                       add_help=True)
    p.add_argument("--counts", required=True,
                   help="'table1' or 'BUI:N,BUI:N,...'")
    p.add_argument("--length", type=int, default=synth.MIN_LENGTH * 10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="scan a directory into a manifest")
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None,
                   help="manifest path (default <data-dir>/manifest.csv)")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("augment", help="write coexistence mixes")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--pairs", default="all",
                   help="'all' or comma list like bebop-ar,ar-phantom")
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("featurize", help="write feature files")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--manifest", type=Path)
    group.add_argument("--low", type=Path)
    p.add_argument("--high", type=Path)
    _add_feature_flags(p)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="run a training experiment")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--manifest", type=Path)
    group.add_argument("--data-dir", type=Path)
    p.add_argument("--case", required=True,
                   choices=[c.value for c in Case])
    p.add_argument("--model", required=True,
                   choices=["resnet-stft", "psd-1d"])
    p.add_argument("--profile", choices=["paper", "tiny"], default="tiny")
    _add_feature_flags(p)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--manifest", type=Path)
    group.add_argument("--data-dir", type=Path)
    p.add_argument("--case", required=True, choices=[c.value for c in Case])
    _add_feature_flags(p)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one segment or feature file")
    p.add_argument("--checkpoint", type=Path, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--low", type=Path)
    group.add_argument("--feature", type=Path,
                       help="featurized CSV (map or PSD row)")
    p.add_argument("--high", type=Path)
    p.add_argument("--case", choices=[c.value for c in Case], default=None,
                   help="adds the class name to the output")
    _add_feature_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    return parser


# ---------------------------------------------------------------------------
# Config file and run manifest

def _load_config(path: Path) -> dict[str, str]:
    cfg = {}
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: bad config line {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _config_argv(parser: argparse.ArgumentParser, cfg: dict[str, str]) -> list[str]:
    """Turn file entries into flags the subparser understands; skip the rest."""
    known = {}
    for action in parser._actions:  # noqa: SLF001 - argparse has no public API
        for opt in action.option_strings:
            if opt.startswith("--"):
                known[opt[2:].replace("-", "_")] = (opt, action)
    argv = []
    for key, value in cfg.items():
        if key not in known:
            continue
        opt, action = known[key]
        if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            if value.lower() in ("1", "true", "yes"):
                argv.append(opt)
        else:
            argv.extend([opt, value])
    return argv


def _parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    if not argv:
        raise UsageError(parser.format_usage())
    # First pass only to locate --config for the chosen subcommand.
    probe = _Parser(add_help=False)
    probe.add_argument("--config", type=Path, default=None)
    ns, _ = probe.parse_known_args(argv[1:])
    if ns.config is not None:
        sub_map = next(a for a in parser._actions  # noqa: SLF001
                       if isinstance(a, argparse._SubParsersAction)).choices
        if argv[0] not in sub_map:
            raise UsageError(parser.format_usage())
        sub = sub_map[argv[0]]
        cfg_argv = _config_argv(sub, _load_config(ns.config))
        argv = [argv[0]] + cfg_argv + argv[1:]
    return parser.parse_args(argv)


def _write_run_manifest(out_dir: Path, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    lines = [f"timestamp={time.strftime('%Y-%m-%dT%H:%M:%S%z')}",
             f"argv={' '.join(sys.argv[1:]) if sys.argv else ''}"]
    lines += [f"{k}={v}" for k, v in resolved.items()]
    (out_dir / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def _stft_cfg(args) -> feat.StftConfig:
    return feat.StftConfig(window_len=args.window_len, overlap=args.overlap,
                           n_fft=args.nfft)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_synth(args) -> None:
    if args.counts.strip().lower() == "table1":
        counts = dict(TABLE_COUNTS)
    else:
        counts = {}
        for part in args.counts.split(","):
            digits, _, num = part.partition(":")
            if not num:
                raise UsageError(f"bad counts entry {part!r}; want BUI:N")
            counts[digits.strip()] = int(num)
    manifest = synth.synth_dataset(counts, args.length, args.seed,
                                   args.out_dir)
    manifest.save(args.out_dir / "manifest.csv")
    _write_run_manifest(args.out_dir, args)
    print(f"wrote {len(manifest)} segments ({sum(counts.values())} requested) "
          f"to {args.out_dir}")


def cmd_ingest(args) -> None:
    manifest = scan_dataset(args.data_dir)
    out = args.out or (args.data_dir / "manifest.csv")
    manifest.save(out)
    _write_run_manifest(out.parent, args)
    counts = manifest.counts()
    for digits in sorted(counts):
        print(f"{digits}: {counts[digits]}")
    if manifest.unpaired:
        print(f"{len(manifest.unpaired)} unpaired file(s) skipped",
              file=sys.stderr)
    print(f"manifest with {len(manifest)} entries -> {out}")


def _parse_pairs(text: str) -> list[tuple[str, str]]:
    if text.strip().lower() == "all":
        return list(aug.PAIR_BUI)
    pairs = []
    for part in text.split(","):
        a, _, b = part.strip().partition("-")
        if not b:
            raise UsageError(f"bad pair {part!r}; want e.g. bebop-ar")
        pairs.append((a, b))
    return pairs


def cmd_augment(args) -> None:
    manifest = DatasetManifest.load(args.manifest)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    entries = list(manifest.entries)
    total = 0
    for pair in _parse_pairs(args.pairs):
        label = aug.pair_bui(pair)
        for i, (seg, _) in enumerate(aug.iter_coexistence_mixes(manifest, pair)):
            low_name, high_name = segment_filenames(label, i)
            low_path, high_path = args.out_dir / low_name, args.out_dir / high_name
            save_segment(seg, low_path, high_path)
            entries.append(ManifestEntry(low_path, high_path, label))
            total += 1
    extended = DatasetManifest(entries)
    extended.save(args.out_dir / "manifest.csv")
    _write_run_manifest(args.out_dir, args)
    print(f"wrote {total} mixed segments; extended manifest has "
          f"{len(extended)} entries")


def _featurize_one(seg: DualBandSegment, stem: str, args) -> list[Path]:
    method = args.method or "stft"
    out = []
    if method in ("stft", "scu"):
        fmap = feat.spectrogram_feature(seg, _stft_cfg(args)) \
            if method == "stft" else feat.scu_feature(seg, args.nfft)
        csv_path = args.out_dir / f"{stem}_{method}.csv"
        pgm_path = args.out_dir / f"{stem}_{method}.pgm"
        feat.write_feature_csv(fmap, csv_path)
        feat.write_pgm(fmap, pgm_path)
        out += [csv_path, pgm_path]
    else:
        vec = feat.psd_feature(seg, args.nfft)
        psd_path = args.out_dir / f"{stem}_psd.csv"
        feat.write_psd_csv(vec, psd_path)
        out.append(psd_path)
    return out


def cmd_featurize(args) -> None:
    args.out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    if args.manifest is not None:
        manifest = DatasetManifest.load(args.manifest)
        per_bui: dict[str, int] = {}
        for entry in manifest.entries:
            i = per_bui.get(entry.bui.digits, 0)
            per_bui[entry.bui.digits] = i + 1
            jobs.append((entry, f"{entry.bui.digits}_{i}"))
    else:
        if args.high is None:
            raise UsageError("featurize --low needs --high")
        jobs.append(((args.low, args.high), args.low.stem))

    def run(job):
        source, stem = job
        if isinstance(source, ManifestEntry):
            seg = load_segment(source)
        else:
            seg = load_segment(ManifestEntry(source[0], source[1],
                                             parse_bui("00000")))
        return _featurize_one(seg, stem, args)

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            written = [p for paths in pool.map(run, jobs) for p in paths]
    else:
        written = [p for job in jobs for p in run(job)]
    _write_run_manifest(args.out_dir, args)
    print(f"wrote {len(written)} feature file(s) to {args.out_dir}")


def _load_dataset(args) -> DatasetManifest:
    if args.manifest is not None:
        return DatasetManifest.load(args.manifest)
    return scan_dataset(args.data_dir)


def cmd_train(args) -> None:
    manifest = _load_dataset(args)
    case = Case.from_string(args.case)
    cfg = harness.TrainConfig(batch_size=args.batch_size,
                              max_epochs=args.epochs, lr=args.lr, l2=args.l2,
                              seed=args.seed, repeats=args.repeats)
    method = args.method or harness.default_method(args.model)
    result = harness.run_experiment(
        manifest, case, args.model, cfg, profile=args.profile, method=method,
        stft_cfg=_stft_cfg(args), psd_nfft=args.nfft, threads=args.threads)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    harness.write_report_csv(result, args.out_dir / "report.csv")
    harness.write_confusion_csv(result, args.out_dir / "confusion.csv")
    harness.write_curves_csv(result, args.out_dir / "curves.csv")
    extra = {"method": method, "window_len": args.window_len,
             "overlap": args.overlap, "nfft": args.nfft, "case": case.value}
    for rec in result.runs:
        models.save_checkpoint(args.out_dir / f"checkpoint_run{rec.run}.npz",
                               rec.model, rec.adam, extra=extra)
    _write_run_manifest(args.out_dir, args)
    mean = result.mean_metrics()
    print(f"case {case.value} {args.model}: mean accuracy "
          f"{mean['accuracy']:.4f} over {cfg.repeats} run(s)")


def _feature_args_from_checkpoint(args, meta: dict):
    extra = meta.get("extra", {})
    if args.method is None and "method" in extra:
        args.method = extra["method"]
    for key in ("window_len", "overlap", "nfft"):
        if key in extra and getattr(args, key) == getattr(
                feat.DESK_STFT, key if key != "nfft" else "n_fft"):
            setattr(args, key, extra[key])


def cmd_eval(args) -> None:
    model, _, meta = models.load_checkpoint(args.checkpoint)
    _feature_args_from_checkpoint(args, meta)
    manifest = _load_dataset(args)
    case = Case.from_string(args.case)
    method = args.method or harness.default_method(model.kind)
    features, buis = harness.extract_features(
        manifest, method, _stft_cfg(args), args.nfft, args.threads)
    classes = harness.case_classes(buis, case)
    keep = [i for i, c in enumerate(classes) if c is not None]
    labels = np.array([classes[i] for i in keep])
    report = harness.evaluate(model, features[keep], labels)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "report.csv", "w", newline="") as f:
        f.write("accuracy,precision,recall,f1\n")
        f.write(f"{report.accuracy!r},{report.precision!r},"
                f"{report.recall!r},{report.f1!r}\n")
    np.savetxt(args.out_dir / "confusion.csv", report.confusion,
               delimiter=",", fmt="%d")
    _write_run_manifest(args.out_dir, args)
    print(f"accuracy {report.accuracy:.4f} on {len(keep)} samples")


def cmd_predict(args) -> None:
    model, _, meta = models.load_checkpoint(args.checkpoint)
    _feature_args_from_checkpoint(args, meta)
    method = args.method or harness.default_method(model.kind)
    if args.feature is not None:
        if model.kind == "psd-1d":
            feature = feat.read_psd_csv(args.feature, args.nfft)
        else:
            feature = feat.read_feature_csv(args.feature)
    else:
        if args.high is None:
            raise UsageError("predict --low needs --high")
        seg = load_segment(ManifestEntry(args.low, args.high,
                                         parse_bui("00000")))
        if method == "stft":
            feature = feat.spectrogram_feature(seg, _stft_cfg(args))
        elif method == "scu":
            feature = feat.scu_feature(seg, args.nfft)
        else:
            feature = feat.psd_feature(seg, args.nfft)
    cls, probs = models.predict(model, feature)
    name = ""
    if args.case is not None:
        names = Case.from_string(args.case).class_names()
        if cls < len(names):
            name = f" ({names[cls]})"
    print(f"class {cls}{name}")
    print("probs " + ",".join(f"{p:.6f}" for p in probs))


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = _parse(argv)
        args.func(args)
        return 0
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (RfdroneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
