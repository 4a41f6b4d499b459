"""Command line: ``dmnet gen-data | pretrain | train | eval | predict | plot``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .config import Config, dump_config, load_config, parse_overrides
from .errors import (ConfigError, DataError, EmptyMaskError, NumericalError, ShapeError,
                     SizeError, SpecError)

log = logging.getLogger("dmnet")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    overrides = parse_overrides(getattr(args, "set", None) or [])
    return cfg.replace(**overrides) if overrides else cfg


def cmd_gen_data(args) -> int:
    from .data import AppearanceJitter, SyntheticDatasetSpec, generate_synthetic_dataset
    from .training import write_manifest

    cfg = _config(args)
    d = cfg.data
    out = Path(args.out or d.root)
    spec = SyntheticDatasetSpec(n_images=args.n_images or d.n_images,
                                image_size=args.size or d.image_size,
                                shapes_per_image=(d.min_shapes, d.max_shapes),
                                appearance_jitter=AppearanceJitter(scale=(d.scale_min, d.scale_max)),
                                seed=d.seed if args.seed is None else args.seed)
    meta = generate_synthetic_dataset(spec, out)
    write_manifest(out, cfg, "gen-data", n_images=spec.n_images, image_size=spec.image_size,
                   data_seed=spec.seed)
    print(f"wrote {len(meta['images'])} images to {out}")
    return 0


def cmd_pretrain(args) -> int:
    import torch

    from .data import build_index, load_fold_spec
    from .pretrain import encoder_path, pretrain_encoder
    from .training import write_manifest

    cfg = _config(args)
    fold = load_fold_spec(cfg.data.fold_file, cfg.data.fold)
    index = build_index(cfg.data.root, fold, "train", cfg.data.crop_size)
    encoder = pretrain_encoder(index, cfg.model.stride, args.iters, seed=args.seed,
                               image_size=cfg.data.image_size)
    out = Path(args.out) if args.out else encoder_path(cfg, args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    torch.save(encoder.state_dict(), out)
    write_manifest(out.parent, cfg, "pretrain", iters=args.iters, pretrain_seed=args.seed, weights=str(out))
    print(f"encoder weights -> {out}  (set model.weights = {out})")
    return 0


def cmd_train(args) -> int:
    from .training import train

    cfg = _config(args)
    section = {}
    if args.seed is not None:
        section["seed"] = args.seed
    if args.max_iter is not None:
        section["max_iter"] = args.max_iter
    if args.out:
        section["out_dir"] = args.out
    if section:
        cfg = cfg.replace(train=section)
    out = Path(cfg.train.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.cfg")
    result = train(cfg, out_dir=out, progress=True)
    print(f"checkpoint {result.checkpoint}  final loss {result.losses[-1]:.4f}  "
          f"gradient steps {result.gradient_steps}")
    return 0


def _load_model(args):
    from .training import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    if getattr(args, "config", None) or getattr(args, "set", None):
        # data / eval settings may be redirected; model settings come from the checkpoint
        user = _config(args)
        cfg = cfg.replace(data=user.to_dict()["data"], eval=user.to_dict()["eval"])
    if getattr(args, "data_root", None):
        cfg = cfg.replace(data=dict(root=args.data_root))
    model.cfg = cfg
    return model, cfg


def cmd_eval(args) -> int:
    from .data import build_index, load_fold_spec, materialize_pairs, read_pairs, write_pairs
    from .evaluation import evaluate_fold
    from .training import write_manifest

    model, cfg = _load_model(args)
    fold_id = cfg.data.fold if args.fold is None else args.fold
    fold = load_fold_spec(cfg.data.fold_file, fold_id)
    index = build_index(cfg.data.root, fold, "test", cfg.data.crop_size)
    k = args.k or cfg.eval.k
    seed = cfg.eval.seed if args.seed is None else args.seed
    n_pairs = args.pairs or cfg.eval.n_pairs
    pairs = read_pairs(args.pairs_file) if args.pairs_file else materialize_pairs(index, n_pairs, k, seed)
    report = evaluate_fold(model.predict_masks, index, n_pairs, k, seed, cfg.eval.batch_size, pairs)
    report.class_names = dict(fold.class_names)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"report_fold{fold_id}_{k}shot_seed{seed}"
    txt, table = report.write(stem)
    report.write_records(stem.with_name(stem.name + "_pairs.csv"))
    write_pairs(pairs, stem.with_name(stem.name + "_pairlist.txt"))
    write_manifest(out, cfg.replace(eval=dict(k=k, seed=seed, n_pairs=n_pairs)), "eval",
                   checkpoint=str(args.checkpoint), fold=fold_id, report=str(txt))
    print(f"fold {fold_id} {k}-shot  mIoU {report.percent('miou'):.2f}  "
          f"FB-IoU {report.percent('fb_iou'):.2f}  mAcc {report.percent('macc'):.2f}  -> {txt}")
    return 0


def _read_rgb(path, size=None) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if size is not None and img.size != size:
        img = img.resize(size, Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def _read_binary(path, size=None) -> np.ndarray:
    m = Image.open(path).convert("L")
    if size is not None and m.size != size:
        m = m.resize(size, Image.NEAREST)
    return (np.asarray(m) > 0).astype(np.uint8)


def cmd_predict(args) -> int:
    from .data import Episode
    from .plots import overlay
    from .training import write_manifest

    if len(args.support) != len(args.support_mask):
        raise ConfigError(f"{len(args.support)} support images but {len(args.support_mask)} masks")
    model, cfg = _load_model(args)
    query = _read_rgb(args.query)
    size = (query.shape[1], query.shape[0])
    support = [(_read_rgb(s, size), _read_binary(m, size))
               for s, m in zip(args.support, args.support_mask)]
    for (_, m), path in zip(support, args.support_mask):
        if not m.any():
            raise EmptyMaskError(f"support mask {path} has no foreground")
    episode = Episode(target_class=-1, support=support, query_image=query,
                      query_mask=np.zeros(query.shape[:2], np.uint8),
                      support_ids=[str(s) for s in args.support], query_id=str(args.query))
    mask = model.predict_masks([episode])[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.query).stem
    Image.fromarray((mask * 255).astype(np.uint8)).save(out / f"{stem}_mask.png")
    Image.fromarray(overlay(query, mask)).save(out / f"{stem}_overlay.png")
    write_manifest(out, cfg, "predict", checkpoint=str(args.checkpoint), query=str(args.query),
                   support=[str(s) for s in args.support])
    print(f"foreground {int(mask.sum())} px -> {out / f'{stem}_mask.png'}")
    return 0


def cmd_plot(args) -> int:
    from .plots import plot_per_class, plot_scale

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = Path(args.report)
    table = report.with_suffix(".csv")
    records = Path(args.records) if args.records else report.with_name(report.stem + "_pairs.csv")
    for path in (table, records):
        if not path.exists():
            raise DataError(f"missing evaluation output {path}")
    bars = plot_per_class(table, out / f"{report.stem}_per_class.png")
    scatter = plot_scale(records, out / f"{report.stem}_scale.png", args.image_pixels)
    print(f"wrote {bars} and {scatter}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dmnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="key=value config file with [data] [model] ... sections")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")

    g = sub.add_parser("gen-data", help="render the synthetic-shapes corpus")
    with_config(g)
    g.add_argument("--out")
    g.add_argument("--n-images", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    pt = sub.add_parser("pretrain", help="generic hue-segmentation pretraining of the tiny encoder")
    with_config(pt)
    pt.add_argument("--iters", type=int, default=600)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--out", help="weights file (default: next to the corpus)")
    pt.set_defaults(func=cmd_pretrain)

    t = sub.add_parser("train", help="episodic training; writes checkpoint and loss log")
    with_config(t)
    t.add_argument("--seed", type=int)
    t.add_argument("--max-iter", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="fixed-pair evaluation on the held-out classes of a fold")
    with_config(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--fold", type=int)
    e.add_argument("--k", type=int)
    e.add_argument("--pairs", type=int)
    e.add_argument("--pairs-file", help="reuse a saved pair list instead of sampling")
    e.add_argument("--seed", type=int)
    e.add_argument("--data-root")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="segment one query image from annotated supports")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--query", required=True)
    r.add_argument("--support", nargs="+", required=True)
    r.add_argument("--support-mask", nargs="+", required=True)
    r.add_argument("--out", default="predictions")
    r.set_defaults(func=cmd_predict)

    pl = sub.add_parser("plot", help="per-class bars and size-vs-IoU scatter from an eval report")
    pl.add_argument("--report", required=True, help="report .txt or .csv written by eval")
    pl.add_argument("--records", help="per-pair CSV (defaults to <report>_pairs.csv)")
    pl.add_argument("--image-pixels", type=int, help="normalise target area by this pixel count")
    pl.add_argument("--out", default="plots")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, SizeError, EmptyMaskError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
