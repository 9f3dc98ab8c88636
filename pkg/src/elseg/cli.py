"""Command-line entry point: synth, prepare, train, cv, predict, evaluate, analyze.

Every subcommand reads an optional JSON run configuration (``--config``)
and applies command-line overrides on top. Exit codes: 0 ok, 2 usage,
3 validation, 4 I/O, 5 numeric.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import analyze as A
from . import data as D
from . import evaluate as E
from . import synth as S
from . import train as TR
from . import unet as U

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4, 5
_KIND = {EXIT_USAGE: "usage", EXIT_VALIDATION: "validation", EXIT_IO: "io", EXIT_NUMERIC: "numeric"}

log = logging.getLogger("elseg")


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    seed: int = 0
    classes: List[str] = field(default_factory=lambda: list(D.DEFAULT_CLASSES))
    threshold: float = 0.5
    jobs: int = 1
    mean: List[float] = field(default_factory=lambda: list(D.IMAGENET_MEAN))
    std: List[float] = field(default_factory=lambda: list(D.IMAGENET_STD))
    synth: S.SynthConfig = field(default_factory=S.SynthConfig)
    model: U.UNetConfig = field(default_factory=U.UNetConfig)
    train: TR.TrainConfig = field(default_factory=TR.TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"synth": S.SynthConfig, "model": U.UNetConfig, "train": TR.TrainConfig}


def _build_section(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise CLIError(EXIT_VALIDATION, f"config section {where!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise CLIError(EXIT_VALIDATION, f"unknown key {where}.{unknown[0]}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise CLIError(EXIT_VALIDATION, f"config section {where}: {exc}") from None


def load_run_config(path: Optional[str]) -> RunConfig:
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise CLIError(EXIT_IO, f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise CLIError(EXIT_VALIDATION, f"{path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise CLIError(EXIT_VALIDATION, f"{path}: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise CLIError(EXIT_VALIDATION, f"unknown config key {unknown[0]!r}")
    seed = raw.get("seed", 0)
    env_seed = os.environ.get("MSS_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise CLIError(EXIT_VALIDATION, f"MSS_SEED must be an integer, got {env_seed!r}") from None
    kwargs = {k: v for k, v in raw.items() if k not in _SECTIONS}
    kwargs["seed"] = seed
    for name, cls in _SECTIONS.items():
        section = dict(raw.get(name, {}))
        if "seed" in {f.name for f in fields(cls)}:
            section.setdefault("seed", seed)
            if env_seed is not None:
                section["seed"] = seed
        kwargs[name] = _build_section(cls, section, name)
    try:
        cfg = RunConfig(**kwargs)
        D.ClassSet(cfg.classes)
    except (TypeError, ValueError) as exc:
        raise CLIError(EXIT_VALIDATION, f"config: {exc}") from None
    if cfg.model.out_channels != len(cfg.classes):
        raise CLIError(EXIT_VALIDATION,
                       f"model.out_channels={cfg.model.out_channels} but {len(cfg.classes)} classes")
    if cfg.jobs < 1:
        raise CLIError(EXIT_VALIDATION, "jobs must be >= 1")
    return cfg


def _override(cfg: RunConfig, section: str, **values) -> RunConfig:
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    try:
        return replace(cfg, **{section: replace(getattr(cfg, section), **values)})
    except (TypeError, ValueError) as exc:
        raise CLIError(EXIT_VALIDATION, f"{section}: {exc}") from None


def _apply_seed(cfg: RunConfig, seed: Optional[int]) -> RunConfig:
    if seed is None:
        return cfg
    cfg = replace(cfg, seed=seed)
    cfg = _override(cfg, "synth", seed=seed)
    return _override(cfg, "train", seed=seed)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _fresh_dir(path: Path) -> Path:
    if path.exists() and any(path.iterdir()):
        raise CLIError(EXIT_IO, f"output directory {path} is not empty; refusing to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- synth ---------------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    if args.n is not None and args.n < 1:
        raise CLIError(EXIT_USAGE, f"--n must be >= 1, got {args.n}")
    cfg = _override(cfg, "synth", image_size=args.image_size)
    if args.cracks is not None:
        cfg = _override(cfg, "synth", crack_count=(args.cracks, args.cracks))
    out = _fresh_dir(Path(args.out))
    manifest = S.generate_corpus(cfg.synth, args.n or 8, out)
    print(f"synth: {manifest['n']} images in {out} digest={manifest['digest']}")
    return EXIT_OK


# -- prepare -------------------------------------------------------------------------

def _record_stem(record_id: str) -> str:
    return record_id.replace(":", "__")


def load_corpus(corpus: Path, class_set: D.ClassSet, size: int, in_channels: int,
                mean, std, source: str):
    """Parse every annotation in ``corpus/annotations`` into base records."""
    ann_dir = corpus / "annotations"
    if not ann_dir.is_dir():
        raise CLIError(EXIT_IO, f"{ann_dir} does not exist")
    records = []
    for ann_path in sorted(ann_dir.glob("*.json")):
        try:
            ann = D.parse_annotation(ann_path.read_text(), class_set)
        except D.AnnotationError as exc:
            raise CLIError(EXIT_VALIDATION, f"{ann_path}: {exc}") from None
        img_path = corpus / "images" / f"{Path(ann.image).stem}.png"
        try:
            gray = D.load_image(img_path)
        except OSError as exc:
            raise CLIError(EXIT_IO, f"cannot read image {img_path}: {exc}") from None
        if gray.shape != (ann.height, ann.width):
            raise CLIError(EXIT_VALIDATION,
                           f"{ann_path}: image is {gray.shape}, annotation says {(ann.height, ann.width)}")
        mask = D.rasterize(ann, class_set)
        records.append(D.make_record(ann_path.stem, gray, mask, size, source, in_channels, mean, std))
    if not records:
        raise CLIError(EXIT_VALIDATION, f"no annotations found in {ann_dir}")
    return records


def _save_records(records, out: Path) -> List[dict]:
    rec_dir = out / "records"
    rec_dir.mkdir(exist_ok=True)
    entries = []
    for r in records:
        stem = _record_stem(r.id)
        np.save(rec_dir / f"{stem}.npy", r.image.astype(np.float32), allow_pickle=False)
        D.save_mask(r.mask, rec_dir / f"{stem}.mssm")
        entries.append({"id": r.id, "base_id": r.base_id, "variant": r.variant, "source": r.source,
                        "image": f"records/{stem}.npy", "mask": f"records/{stem}.mssm"})
    return entries


def load_prepared(prepared: Path, split: str) -> List[D.SampleRecord]:
    path = prepared / f"{split}.json"
    try:
        entries = json.loads(path.read_text())
    except OSError as exc:
        raise CLIError(EXIT_IO, f"cannot read {path}: {exc.strerror}") from None
    records = []
    for e in entries:
        try:
            image = np.load(prepared / e["image"], allow_pickle=False)
            mask = D.load_mask(prepared / e["mask"])
        except (OSError, D.MaskFormatError, ValueError) as exc:
            raise CLIError(EXIT_IO, f"cannot load record {e['id']}: {exc}") from None
        records.append(D.SampleRecord(e["id"], e["source"], e["base_id"], e["variant"], image, mask))
    return records


def cmd_prepare(args, cfg: RunConfig) -> int:
    cfg = _override(cfg, "model", input_size=args.input_size)
    class_set = D.ClassSet(cfg.classes)
    corpus = Path(args.corpus)
    bases = load_corpus(corpus, class_set, cfg.model.input_size, cfg.model.in_channels,
                        cfg.mean, cfg.std, args.source or corpus.name)
    try:
        tr_ids, va_ids = D.split_dataset([r.base_id for r in bases], (4, 1), cfg.seed)
    except ValueError as exc:
        raise CLIError(EXIT_VALIDATION, str(exc)) from None
    by_id = {r.base_id: r for r in bases}
    train = D.augment_all(by_id[i] for i in sorted(tr_ids))
    val = D.augment_all(by_id[i] for i in sorted(va_ids))
    out = _fresh_dir(Path(args.out))
    entries = {r["id"]: r for r in _save_records(train + val, out)}
    _write_json(out / "train.json", [entries[r.id] for r in train])
    _write_json(out / "val.json", [entries[r.id] for r in val])
    _write_json(out / "bases.json", [entries[f"{b}:none"] for b in sorted(by_id)])
    stats = D.compute_dataset_stats(train + val, class_set)
    _write_json(out / "stats.json", stats.to_dict())
    _write_json(out / "config.json", cfg.to_dict())
    print(f"prepare: {len(bases)} bases -> {len(train)} train / {len(val)} val records in {out}")
    return EXIT_OK


# -- train / cv ----------------------------------------------------------------------

def _train_overrides(cfg: RunConfig, args) -> RunConfig:
    return _override(cfg, "train", lr=args.lr, max_epochs=args.epochs, patience=args.patience,
                     batch_size=args.batch_size)


def _prepared_model_config(cfg: RunConfig, records) -> U.UNetConfig:
    c, s = records[0].image.shape[0], records[0].image.shape[-1]
    try:
        return replace(cfg.model, in_channels=c, input_size=s, out_channels=records[0].mask.shape[0])
    except ValueError as exc:
        raise CLIError(EXIT_VALIDATION, f"model config incompatible with prepared data: {exc}") from None


def cmd_train(args, cfg: RunConfig) -> int:
    cfg = _train_overrides(cfg, args)
    prepared = Path(args.prepared)
    train = load_prepared(prepared, "train")
    val = load_prepared(prepared, "val")
    mcfg = _prepared_model_config(cfg, train)
    if args.init_weights:
        model = U.load_weights(args.init_weights, mcfg)
    else:
        model = U.build_unet(mcfg, cfg.train.seed)
    cfg = replace(cfg, model=mcfg)
    result = TR.fit(model, train, val, cfg.train)
    run = TR.new_run_dir(args.runs)
    TR.write_fit(run, result, cfg.to_dict())
    ev = E.evaluate_corpus(result.model, val, cfg.threshold, cfg.train.batch_size)
    _write_json(run / "val_metrics.json", ev.suite.to_dict())
    print(f"train: best epoch {result.best_epoch} val_loss={result.best_val_loss:.6f} -> {run}")
    return EXIT_OK


def cmd_cv(args, cfg: RunConfig) -> int:
    cfg = _train_overrides(cfg, args)
    cfg = _override(cfg, "train", outer_folds=args.folds, inner_folds=args.inner_folds)
    if args.grid:
        cfg = _override(cfg, "train", lr_grid=tuple(args.grid))
    prepared = Path(args.prepared)
    bases = load_prepared(prepared, "bases")
    mcfg = _prepared_model_config(cfg, bases)
    cfg = replace(cfg, model=mcfg)
    if len(bases) < cfg.train.outer_folds:
        raise CLIError(EXIT_VALIDATION,
                       f"{len(bases)} base images is fewer than {cfg.train.outer_folds} folds")
    res = TR.nested_cv(bases, mcfg, cfg.train, cfg.threshold, cfg.jobs)
    run = TR.new_run_dir(args.runs, "cv")
    _write_json(run / "config.json", cfg.to_dict())
    for f in res.folds:
        TR.write_curves(run / f"fold{f.fold}_curves.csv", f.train_loss, f.val_loss)
    _write_json(run / "folds.json", [f.to_dict() for f in res.folds])
    _write_json(run / "summary.json", res.summary())
    print(f"cv: accuracy {res.accuracy_mean:.6f} +/- {res.accuracy_sd:.6f} "
          f"lr per fold {[f.lr for f in res.folds]} -> {run}")
    return EXIT_OK


# -- predict / evaluate / analyze --------------------------------------------------

def _image_paths(items: List[str]) -> List[Path]:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.png")))
        else:
            paths.append(p)
    if not paths:
        raise CLIError(EXIT_VALIDATION, "no input images")
    return paths


def cmd_predict(args, cfg: RunConfig) -> int:
    model = U.load_weights(args.weights)
    mc = model.config
    if mc.out_channels != len(cfg.classes):
        raise CLIError(EXIT_VALIDATION,
                       f"weights have {mc.out_channels} output channels, config lists {len(cfg.classes)} classes")
    out = _fresh_dir(Path(args.out))
    paths = _image_paths(args.images)
    for path in paths:
        try:
            gray = D.load_image(path)
        except OSError as exc:
            raise CLIError(EXIT_IO, f"cannot read image {path}: {exc}") from None
        img = D.normalize_image(D.to_channels(D.resize_image(gray, mc.input_size), mc.in_channels),
                                cfg.mean, cfg.std)
        probs = U.predict_probabilities(model, img[None])[0]
        if not np.all(np.isfinite(probs)):
            raise TR.NumericError(f"non-finite probabilities for {path}")
        np.save(out / f"{path.stem}.npy", probs.astype(np.float32), allow_pickle=False)
        D.save_mask(D.MultiHotMask(E.binarize(probs, cfg.threshold), tuple(cfg.classes)),
                    out / f"{path.stem}.mssm")
    print(f"predict: {len(paths)} images -> {out}")
    return EXIT_OK


def _load_mask_dir(path: Path, class_set: D.ClassSet):
    if not path.is_dir():
        raise CLIError(EXIT_IO, f"{path} is not a directory")
    masks = {}
    for p in sorted(path.glob("*.mssm")):
        try:
            masks[p.stem] = D.load_mask(p, class_set)
        except D.MaskFormatError as exc:
            raise CLIError(EXIT_VALIDATION, f"{p}: {exc}") from None
    return masks


def _align(preds: dict, gts: dict):
    if not gts:
        raise CLIError(EXIT_VALIDATION, "empty ground-truth corpus")
    if set(preds) != set(gts):
        diff = sorted(set(preds) ^ set(gts))
        raise CLIError(EXIT_VALIDATION, f"prediction/ground-truth ids differ, e.g. {diff[:3]}")
    out = {}
    for k, g in gts.items():
        p = preds[k]
        if g.shape[1:] != p.shape[1:]:
            g = D.resize_mask(g, p.shape[-1])
        out[k] = g
    return out


def cmd_evaluate(args, cfg: RunConfig) -> int:
    class_set = D.ClassSet(cfg.classes)
    gts = _load_mask_dir(Path(args.gt), class_set)
    preds = _load_mask_dir(Path(args.pred), class_set)
    gts = _align(preds, gts)
    ev = E.evaluate_masks(preds, gts)
    text = ev.suite.table()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", ev.to_dict())
        (out / "report.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_analyze(args, cfg: RunConfig) -> int:
    class_set = D.ClassSet(cfg.classes)
    crack = class_set.index(args.cls)
    gts = _load_mask_dir(Path(args.gt), class_set)
    if not gts:
        raise CLIError(EXIT_VALIDATION, "empty ground-truth corpus")
    sources = {}
    for spec in args.pred or []:
        name, _, path = spec.partition("=")
        if not path:
            raise CLIError(EXIT_USAGE, f"--pred expects NAME=DIR, got {spec!r}")
        sources[name] = {k: v.data[crack] for k, v in _load_mask_dir(Path(path), class_set).items()}
    # each source is counted at its own resolution; only the ids must agree
    gt_planes = {k: v.data[crack] for k, v in gts.items()}
    try:
        summary = A.crack_count_summary(gt_planes, sources, args.connectivity, args.min_area)
    except ValueError as exc:
        raise CLIError(EXIT_VALIDATION, str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "crack_summary.json", summary.to_dict())
    A.write_rows(summary.rows, out / "crack_rows.csv")
    for src, st in summary.stats.items():
        print(f"{src:<12s} mean={st['mean']:.3f} median={st['median']:.1f} sd={st['sd']:.3f} n={st['n']}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors use the same one-line prefix as every other failure."""

    def error(self, message):
        self.exit(EXIT_USAGE, f"elseg: error[usage]: {self.prog}: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="elseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help="JSON run configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--jobs", type=int, help="worker processes (default 1, bit-reproducible)")
        return sp

    sp = add("synth", "generate a synthetic EL corpus")
    sp.add_argument("--out", required=True, help="output corpus directory (must be empty)")
    sp.add_argument("--n", type=int, default=None, help="number of images (default 8)")
    sp.add_argument("--image-size", type=int, help="image side length in pixels")
    sp.add_argument("--cracks", type=int, help="force exactly this many cracks per image")
    sp.set_defaults(func=cmd_synth)

    sp = add("prepare", "rasterise, resize, normalise, split 4:1 and flip-augment a corpus")
    sp.add_argument("--corpus", required=True, help="corpus directory with images/ and annotations/")
    sp.add_argument("--out", required=True, help="output directory for prepared tensors (must be empty)")
    sp.add_argument("--input-size", type=int, help="network input side length")
    sp.add_argument("--source", help="source tag stored on every record")
    sp.set_defaults(func=cmd_prepare)

    for name, help_text, func in (("train", "fit one model with early stopping", cmd_train),
                                  ("cv", "nested cross-validation with learning-rate grid search", cmd_cv)):
        sp = add(name, help_text)
        sp.add_argument("--prepared", required=True, help="directory written by 'prepare'")
        sp.add_argument("--runs", required=True, help="parent directory for new run directories")
        sp.add_argument("--lr", type=float, help="learning rate")
        sp.add_argument("--epochs", type=int, help="maximum epochs")
        sp.add_argument("--patience", type=int, help="early-stopping patience")
        sp.add_argument("--batch-size", type=int, help="mini-batch size")
        if name == "train":
            sp.add_argument("--init-weights", help="start from this weights file")
        else:
            sp.add_argument("--folds", type=int, help="outer folds")
            sp.add_argument("--inner-folds", type=int, help="inner folds (1 = single 4:1 split)")
            sp.add_argument("--grid", type=float, nargs="+", help="learning-rate grid")
        sp.set_defaults(func=func)

    sp = add("predict", "write probability maps and binarised masks")
    sp.add_argument("--weights", required=True, help="weights file")
    sp.add_argument("--images", required=True, nargs="+", help="PNG files or directories")
    sp.add_argument("--out", required=True, help="output directory (must be empty)")
    sp.add_argument("--threshold", type=float, help="probability threshold")
    sp.set_defaults(func=cmd_predict)

    sp = add("evaluate", "score predicted masks against ground truth")
    sp.add_argument("--pred", required=True, help="directory of predicted .mssm masks")
    sp.add_argument("--gt", required=True, help="directory of ground-truth .mssm masks")
    sp.add_argument("--out", help="directory for report.json / report.txt")
    sp.set_defaults(func=cmd_evaluate)

    sp = add("analyze", "crack component counts and geometry export")
    sp.add_argument("--gt", required=True, help="directory of ground-truth .mssm masks")
    sp.add_argument("--pred", action="append", metavar="NAME=DIR",
                    help="predicted masks for one model; repeatable")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--class", dest="cls", default="crack", help="class to analyse")
    sp.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    sp.add_argument("--min-area", type=int, default=1, help="drop components smaller than this")
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config)
        cfg = _apply_seed(cfg, args.seed)
        if args.jobs is not None:
            cfg = replace(cfg, jobs=args.jobs)
        if getattr(args, "threshold", None) is not None:
            cfg = replace(cfg, threshold=args.threshold)
        if cfg.jobs < 1:
            raise CLIError(EXIT_USAGE, "--jobs must be >= 1")
        return args.func(args, cfg)
    except CLIError as exc:
        code, msg = exc.code, str(exc)
    except TR.NumericError as exc:
        code, msg = EXIT_NUMERIC, str(exc)
    except (U.WeightsFormatError, U.ShapeAuditError, D.MaskFormatError, D.AnnotationError,
            ValueError) as exc:
        code, msg = EXIT_VALIDATION, str(exc)
    except OSError as exc:
        code, msg = EXIT_IO, f"{exc.filename or ''}: {exc.strerror or exc}".lstrip(": ")
    print(f"elseg: error[{_KIND[code]}]: {' '.join(msg.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
