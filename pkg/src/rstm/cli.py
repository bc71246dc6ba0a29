"""``rstm`` command line.

Every failure prints a single ``ERROR <CODE>: <message>`` line on stderr
and exits nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import CLASS_NAMES
from . import checkpoint as ckpt_io
from .config import ConfigError, RunConfig, load_config
from .toyfaces import DatasetError, concat_datasets, load_png, read_dataset, save_png, write_dataset

log = logging.getLogger("rstm")


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = 1):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would print usage and exit 2
        raise CliError("USAGE", message, status=2)


# -- helpers ---------------------------------------------------------------------
def _config(path) -> RunConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError("CONFIG", str(exc)) from exc


def _dataset(spec: str):
    dirs = [d.strip() for d in spec.split(",") if d.strip()]
    if not dirs:
        raise CliError("DATASET", "no dataset directory given")
    try:
        parts = [read_dataset(d) for d in dirs]
    except DatasetError as exc:
        raise CliError("DATASET", str(exc)) from exc
    return parts[0] if len(parts) == 1 else concat_datasets(parts)


def _checkpoint(path) -> dict[str, np.ndarray]:
    try:
        return ckpt_io.load(path)
    except ckpt_io.CheckpointError as exc:
        raise CliError("CHECKPOINT", f"{path}: {exc}") from exc


def _generator(state):
    from .training import load_generator

    try:
        G, _ = load_generator(state)
    except (KeyError, ValueError) as exc:
        raise CliError("CHECKPOINT", f"not a stage-1 checkpoint: {exc}") from exc
    return G


def _image_pair(image_path, mask_path, image_size: int, num_classes: int):
    try:
        img = load_png(image_path, "RGB")
        lab = load_png(mask_path, "L")
    except DatasetError as exc:
        raise CliError("IMAGE", str(exc)) from exc
    if img.shape[:2] != lab.shape:
        raise CliError("SHAPE", f"image {image_path} is {img.shape[:2]} but mask {mask_path} is {lab.shape}")
    if img.shape[:2] != (image_size, image_size):
        raise CliError("SHAPE", f"model expects {image_size}x{image_size} inputs, got {img.shape[0]}x{img.shape[1]}")
    if int(lab.max()) >= num_classes:
        raise CliError("MASK", f"{mask_path}: label {int(lab.max())} is outside [0, {num_classes})")
    return img, lab


def _class_table(image_path) -> list[str]:
    """Class names from the meta.json beside the image, else the built-in table."""
    meta = Path(image_path).resolve().parent / "meta.json"
    if meta.is_file():
        try:
            classes = json.loads(meta.read_text()).get("classes")
        except json.JSONDecodeError as exc:
            raise CliError("DATASET", f"{meta}: invalid JSON at byte offset {exc.pos}") from exc
        if classes:
            return list(classes)
    return list(CLASS_NAMES)


def parse_regions(text: str, classes: list[str], present: np.ndarray | None = None) -> list[int]:
    """Comma-separated region names to class ids; ``all`` means every id in ``present``."""
    names = [t.strip() for t in (text or "").split(",") if t.strip()]
    if not names:
        raise CliError("REGION_EMPTY", "empty region set; name at least one region (e.g. --regions hair)")
    if names == ["all"]:
        ids = sorted(int(c) for c in np.unique(present)) if present is not None else list(range(len(classes)))
        return ids
    out = []
    for n in names:
        if n not in classes:
            raise CliError("REGION_UNKNOWN", f"unknown region '{n}'; known: {', '.join(classes)}")
        out.append(classes.index(n))
    return sorted(set(out))


def _nchw(img):
    from .model import to_nchw

    return to_nchw(img[None])


def _write_png(path, img) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_png(path, img)
    except OSError as exc:
        raise CliError("IO", f"cannot write {path}: {exc.strerror}") from exc


# -- subcommands -----------------------------------------------------------------
def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise CliError("USAGE", "--count must be positive", status=2)
    try:
        write_dataset(args.out, args.count, args.seed, args.split, args.size)
    except OSError as exc:
        raise CliError("IO", f"cannot write dataset to {args.out}: {exc.strerror}") from exc
    print(f"wrote {args.count} {args.split} faces to {args.out}")
    return 0


def cmd_train(args) -> int:
    from . import plots
    from .evaluation import reconstruct_images
    from .training import Stage1Trainer, TrainConfig, TrainingError, model_config_from_run

    cfg = _config(args.config)
    dataset = _dataset(cfg.data_dir)
    if dataset.images.shape[1] != cfg.image_size:
        raise CliError("SHAPE", f"dataset images are {dataset.images.shape[1]}px but image_size = {cfg.image_size}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Stage1Trainer(model_config_from_run(cfg), TrainConfig.from_run_config(cfg))
    t0 = time.perf_counter()
    try:
        trainer.run(dataset, log_path=out / "loss_log.csv")
    except TrainingError as exc:
        if exc.state is not None:
            ckpt_io.save(out / "stage1.lastgood.ckpt", exc.state)
        raise CliError("TRAINING_NONFINITE", f"{exc}; last good checkpoint in {out / 'stage1.lastgood.ckpt'}") from exc
    except ValueError as exc:
        raise CliError("DATASET", str(exc)) from exc
    path = ckpt_io.save(out / "stage1.ckpt", trainer.state())
    plots.loss_curves(plots.read_loss_log(out / "loss_log.csv"), out / "loss_curves.png")
    k = min(8, len(dataset))
    recon = reconstruct_images(trainer.G, dataset.images[:k], dataset.labels[:k])
    plots.image_grid([dataset.images[:k], recon], ["input", "recon"], out / "reconstructions.png")
    print(f"stage-1 checkpoint {path} ({trainer.step} steps, {time.perf_counter() - t0:.0f} s)")
    return 0


def cmd_train_rsm(args) -> int:
    from . import plots
    from .training import Stage2Trainer, TrainConfig, TrainingError

    cfg = _config(args.config)
    state = _checkpoint(args.ckpt)
    if not any(k.startswith("G.") for k in state):
        raise CliError("CHECKPOINT", f"{args.ckpt} holds no generator weights")
    dataset = _dataset(cfg.data_dir)
    trainer = Stage2Trainer(state, TrainConfig.from_run_config(cfg), dataset)
    before = trainer.style_frechet()
    try:
        trainer.run()
    except TrainingError as exc:
        raise CliError("TRAINING_NONFINITE", str(exc)) from exc
    after = trainer.style_frechet()
    out = Path(cfg.out_dir)
    path = ckpt_io.save(out / "stage2.ckpt", trainer.state())
    names = ["+".join(CLASS_NAMES[c] for c in g) for g in trainer.rsm.groups]
    plots.frechet_bars(before, after, names, out / "style_frechet.png")
    for n, b, a in zip(names, before, after):
        print(f"{n:<28} frechet {b:10.4f} -> {a:10.4f}")
    print(f"stage-2 checkpoint {path}")
    return 0


def cmd_reconstruct(args) -> int:
    from .model import to_nhwc
    from .tensor import no_grad

    G = _generator(_checkpoint(args.ckpt))
    img, lab = _image_pair(args.image, args.mask, G.cfg.image_size, G.cfg.num_classes)
    with no_grad():
        out = to_nhwc(G.reconstruct(_nchw(img), lab[None]))[0]
    _write_png(args.out, out)
    return 0


def cmd_transfer(args) -> int:
    from .model import to_nhwc
    from .mrsa import RegionError
    from .tensor import no_grad

    G = _generator(_checkpoint(args.ckpt))
    t_img, t_lab = _image_pair(args.target, args.target_mask, G.cfg.image_size, G.cfg.num_classes)
    r_img, r_lab = _image_pair(args.ref, args.ref_mask, G.cfg.image_size, G.cfg.num_classes)
    with no_grad():
        # "all" means every region that survives pooling at the style resolution
        present = np.flatnonzero(G.encode(_nchw(r_img), r_lab[None]).valid[0])
    regions = parse_regions(args.regions, _class_table(args.target), present=present)
    try:
        with no_grad():
            out = to_nhwc(G.transfer(_nchw(t_img), t_lab[None], _nchw(r_img), r_lab[None], regions))[0]
    except RegionError as exc:
        raise CliError("REGION_ABSENT", str(exc)) from exc
    _write_png(args.out, out)
    return 0


def cmd_sample(args) -> int:
    from .evaluation import sample_region_styles
    from .training import load_rsm

    state = _checkpoint(args.ckpt)
    if not any(k.startswith("RSM.") for k in state):
        raise CliError("CHECKPOINT_NO_RSM", f"{args.ckpt} has no mapping-net weights; run train-rsm first")
    G = _generator(state)
    rsm = load_rsm(state)
    img, lab = _image_pair(args.target, args.target_mask, G.cfg.image_size, G.cfg.num_classes)
    regions = parse_regions(args.regions, _class_table(args.target), present=lab)
    if args.num < 1:
        raise CliError("USAGE", "--num must be positive", status=2)
    outs = sample_region_styles(G, rsm, img, lab, regions, args.num, np.random.default_rng(args.seed))
    out_dir = Path(args.out_dir)
    for i, o in enumerate(outs):
        _write_png(out_dir / f"sample_{i:03d}.png", o)
    print(f"wrote {len(outs)} samples to {out_dir}")
    return 0


def _hs_state(clf, report, epochs: int) -> dict[str, np.ndarray]:
    from .training import module_state

    state = module_state(clf, "HS")
    state["hs.auc"] = np.array([report.auc], dtype=np.float32)
    state["hs.epochs"] = np.array([epochs], dtype=np.float32)
    return state


def load_harmony(state: dict[str, np.ndarray]):
    from .metrics import HarmonyClassifier
    from .training import load_module_state

    clf = HarmonyClassifier(np.random.default_rng(0))
    try:
        load_module_state(clf, "HS", state)
    except (KeyError, ValueError) as exc:
        raise CliError("CHECKPOINT", f"not a harmony-classifier checkpoint: {exc}") from exc
    return clf.eval()


def cmd_train_hs(args) -> int:
    from .harmony import build_harmony_set
    from .metrics import train_harmony

    cfg = _config(args.config)
    dataset = _dataset(args.real)
    try:
        ri, rf, ci, cf = build_harmony_set(dataset, args.composites, seed=cfg.seed)
        clf, report = train_harmony(ri, rf, ci, cf, epochs=args.epochs, seed=cfg.seed)
    except ValueError as exc:
        raise CliError("DATASET", str(exc)) from exc
    path = ckpt_io.save(args.out, _hs_state(clf, report, args.epochs))
    summary = {
        "auc": report.auc,
        "train_size": report.train_size,
        "heldout_size": report.heldout_size,
        "final_loss": report.final_loss,
        "epochs": args.epochs,
        "seed": cfg.seed,
    }
    Path(str(path) + ".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"harmony classifier {path}: held-out AUC {report.auc:.4f}")
    return 0


def cmd_eval(args) -> int:
    from . import plots
    from .evaluation import evaluate
    from .training import load_rsm, model_config_from_state

    state = _checkpoint(args.ckpt)
    G = _generator(state)
    clf = load_harmony(_checkpoint(args.hs_ckpt))
    dataset = _dataset(args.data)
    rsm = load_rsm(state) if any(k.startswith("RSM.") for k in state) else None
    echo = {
        "ckpt": str(args.ckpt),
        "hs_ckpt": str(args.hs_ckpt),
        "data": str(args.data),
        "num_images": len(dataset),
        "pairs": args.pairs,
        "targets": args.targets,
        "samples": args.samples,
        "model": {k: v for k, v in vars(model_config_from_state(state)).items()},
        "stage2": rsm is not None,
    }
    try:
        report, extras = evaluate(
            G, clf, dataset, rsm, seed=args.seed, n_pairs=args.pairs, n_targets=args.targets,
            n_samples=args.samples, config_echo=echo,
        )
    except ValueError as exc:
        raise CliError("DATASET", str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    fig_dir = Path(args.figures) if args.figures else out.parent
    fig_dir.mkdir(parents=True, exist_ok=True)
    study = extras["study"]
    plots.eval_summary(
        extras["psnr"], {"model": extras["hs_model"], "naive": extras["hs_naive"]}, fig_dir / "eval_summary.png"
    )
    t = study.pairs[:, 0]
    r = study.pairs[:, 1]
    plots.image_grid(
        [dataset.images[t], dataset.images[r], study.naive_images, study.model_images],
        ["target", "reference", "naive", "model"],
        fig_dir / "hair_transfers.png",
    )
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_grad_check(args) -> int:
    from . import gradsuite

    try:
        results = gradsuite.run(args.module, seed=args.seed)
    except KeyError as exc:
        raise CliError("USAGE", str(exc.args[0]), status=2) from exc
    print(gradsuite.format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CliError("GRADCHECK_FAILED", f"{len(failed)} check(s) above {gradsuite.TOLERANCE:g}: {', '.join(failed)}")
    return 0


# -- parser ------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rstm", description="Regional style transfer on toy segmented faces.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-data", help="write a procedural face dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--split", choices=("studio", "wild"), required=True)
    s.add_argument("--size", type=int, default=64)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="stage 1: reconstruction GAN")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-rsm", help="stage 2: regional style mapping")
    s.add_argument("--config", required=True)
    s.add_argument("--ckpt", required=True)
    s.set_defaults(func=cmd_train_rsm)

    s = sub.add_parser("reconstruct", help="re-synthesize an image from its own styles")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("transfer", help="move region styles from a reference onto a target")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--target-mask", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--ref-mask", required=True)
    s.add_argument("--regions", required=True, help="comma-separated class names, or 'all'")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("sample", help="random region styles from the mapping nets")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--target-mask", required=True)
    s.add_argument("--regions", required=True)
    s.add_argument("--num", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train-hs", help="train the harmony-score classifier")
    s.add_argument("--real", required=True, help="dataset directory (comma-separated for several)")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--composites", type=int, default=None, help="number of negatives (default: one per real)")
    s.set_defaults(func=cmd_train_hs)

    s = sub.add_parser("eval", help="PSNR, Frechet, harmony and diversity report")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--hs-ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pairs", type=int, default=100)
    s.add_argument("--targets", type=int, default=50)
    s.add_argument("--samples", type=int, default=10)
    s.add_argument("--figures", default=None, help="figure directory (default: beside the report)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grad-check", help="finite-difference gradient table")
    s.add_argument("--module", default=None, help="tensor, nn or composed (default: all)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliError("USAGE", "no command given; see rstm --help", status=2)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except CliError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return exc.status


if __name__ == "__main__":
    sys.exit(main())
