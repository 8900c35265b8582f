"""Command-line entry point.

Subcommands cover the full pipeline: dataset synthesis, classifier and GAN
training, attribute discovery, per-image explanations, sufficiency scoring,
the value-difference baseline, the conditioning ablation, self-checks on the
analytic worlds, and report assembly.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 report emitted
with missing sections.  Every artifact-producing command echoes its resolved
configuration to <base>/run/configs/<command>.json and stamps artifacts with
the producing command and the configuration digest.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .attfind import att_find, load_attribute_set, save_attribute_set
from .core import StyleStats, compute_style_stats, digest_of
from .evaluation import ablation_compare, save_report_json, sufficiency, wu_selector
from .explain import independent_topk, render_counterfactual, save_counterfactual_json, subset_greedy
from .losses import LossWeights
from .models import (
    GeneratorSpec,
    ModelBundle,
    load_bundle,
    load_classifier,
    save_classifier,
)
from .report import (
    emit_html_report,
    render_explanation_png,
    render_sufficiency_curve_png,
    write_strip_for_rank,
)
from .training import (
    ClassifierTrainConfig,
    TrainConfig,
    train,
    train_classifier,
    require_classifier_accuracy,
)
from .worlds import (
    ShapesDatasetConfig,
    load_dataset,
    render_shapes_dataset,
    run_oracle_checks,
    save_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


class UsageError(Exception):
    """Raised for bad flag combinations discovered after parsing."""


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage problems; this lab reserves 2 for
    runtime failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _echo_config(base_dir: str, command: str, config: dict) -> str:
    """Write the resolved configuration under <base>/configs and return its
    digest, which artifacts carry in their _meta block."""
    cfg_digest = digest_of(config)
    cfg_dir = os.path.join(base_dir, "configs")
    os.makedirs(cfg_dir, exist_ok=True)
    payload = {"command": command, "config": config, "config_digest": cfg_digest}
    with open(os.path.join(cfg_dir, f"{command}.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return cfg_digest


def _meta(command: str, cfg_digest: str) -> dict:
    return {"command": command, "config_digest": cfg_digest}


def _load_stats(run_dir: str) -> StyleStats:
    path = os.path.join(run_dir, "stats.json")
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"{path} not found; run train-gan first (it writes the style statistics)"
        )
    with open(path) as fh:
        payload = json.load(fh)
    return StyleStats.from_json_dict(payload)


def _save_stats(stats: StyleStats, run_dir: str, meta: dict) -> None:
    payload = stats.to_json_dict()
    payload["_meta"] = meta
    with open(os.path.join(run_dir, "stats.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_run(run_dir: str):
    bundle, manifest = load_bundle(os.path.join(run_dir, "gan.pt"))
    stats = _load_stats(run_dir)
    return bundle, stats, manifest


def _counter_pool(bundle, images: np.ndarray, target_class: int, limit: int) -> tuple[np.ndarray, np.ndarray]:
    """Images whose reconstruction is predicted as some other class.

    Discovery and explanation both operate on replays of the captured
    styles, so the counter-example filter is judged on the replay too.
    """
    preds = []
    for start in range(0, images.shape[0], 128):
        styles = bundle.capture_styles(images[start : start + 128])
        logits = bundle.classify(bundle.generate_from_styles(styles))
        preds.append(np.argmax(logits, axis=1))
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=int)
    idx = np.nonzero(preds != target_class)[0]
    if idx.size == 0:
        raise RuntimeError(
            f"no images have reconstructions predicted counter to class {target_class}"
        )
    idx = idx[:limit]
    return images[idx], idx


# ---------------------------------------------------------------- commands


def cmd_make_dataset(args) -> int:
    config = ShapesDatasetConfig(
        num_images=args.num_images,
        resolution=args.resolution,
        class_rule=args.class_rule,
        confound_strength=args.confound_strength,
        patch_size=args.patch_size,
        patch_contrast=args.patch_contrast,
    )
    cfg_digest = _echo_config(
        args.out, "make-dataset", {**config.to_json_dict(), "seed": args.seed, "out": args.out}
    )
    ds = render_shapes_dataset(config, seed=args.seed)
    save_dataset(ds, args.out, meta=_meta("make-dataset", cfg_digest))
    counts = np.bincount(ds.labels, minlength=2).tolist()
    print(f"wrote {len(ds)} images to {args.out} (class counts {counts})")
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    ds = load_dataset(args.dataset)
    config = ClassifierTrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        val_fraction=args.val_fraction,
        seed=args.seed,
    )
    base = os.path.dirname(os.path.abspath(args.out)) or "."
    cfg_digest = _echo_config(
        base,
        "train-classifier",
        {**config.to_json_dict(), "dataset": args.dataset, "out": args.out, "min_accuracy": args.min_accuracy},
    )
    classifier, accuracy = train_classifier(ds.images, ds.labels, config)
    require_classifier_accuracy(accuracy, args.min_accuracy)
    save_classifier(
        classifier,
        args.out,
        meta={**_meta("train-classifier", cfg_digest), "held_out_accuracy": accuracy},
    )
    print(f"classifier held-out accuracy {accuracy:.4f} -> {args.out}")
    return EXIT_OK


def cmd_train_gan(args) -> int:
    if args.no_cst and args.cls_weight is not None and args.cls_weight > 0:
        raise UsageError("--no-cst cannot be combined with --cls-weight > 0")
    ds = load_dataset(args.dataset)
    classifier, _clf_meta = load_classifier(args.classifier)
    resolution = ds.config.resolution
    layer_channels = tuple(int(c) for c in args.layer_channels.split(","))
    spec = GeneratorSpec(
        image_resolution=resolution,
        layer_channels=layer_channels,
        latent_dim=args.latent_dim,
        num_classes=classifier.num_classes,
    )
    cst_enabled = not args.no_cst
    w_cls = 0.0 if args.no_cst else (1.0 if args.cls_weight is None else args.cls_weight)
    weights = LossWeights(
        w_adv=args.adv_weight,
        w_rec_x=args.rec_weight,
        w_lpips=args.rec_weight,
        w_cls=w_cls,
    )
    config = TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        lr_g=args.lr_g,
        lr_d=args.lr_d,
        weights=weights,
        cst_enabled=cst_enabled,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    cfg_digest = _echo_config(
        args.run_dir,
        "train-gan",
        {
            **config.to_json_dict(),
            "dataset": args.dataset,
            "classifier": args.classifier,
            "spec": spec.to_json_dict(),
        },
    )
    bundle = ModelBundle.create(spec, classifier, seed=args.seed, cst_enabled=cst_enabled)
    bundle, reports = train(bundle, ds, config, run_dir=args.run_dir)

    stats_count = min(args.stats_images, len(ds))
    styles = []
    for start in range(0, stats_count, 128):
        styles.append(bundle.capture_styles(ds.images[start : start + 128]))
    stats = compute_style_stats(np.concatenate(styles, axis=0))
    _save_stats(stats, args.run_dir, _meta("train-gan", cfg_digest))

    last = reports[-1] if reports else None
    if last is not None:
        print(f"trained {len(reports)} steps; final total loss {last.total:.4f}")
    else:
        print("trained 0 steps")
    print(f"bundle -> {os.path.join(args.run_dir, 'gan.pt')}")
    return EXIT_OK


def cmd_attfind(args) -> int:
    bundle, stats, _ = _load_run(args.run_dir)
    ds = load_dataset(args.dataset)
    cfg_digest = _echo_config(
        args.run_dir,
        "attfind",
        {
            "class": args.target_class,
            "M": args.max_attributes,
            "t": args.threshold,
            "alpha": args.alpha,
            "dataset": args.dataset,
            "max_images": args.max_images,
            "strip_count": args.strip_count,
        },
    )
    pool, pool_idx = _counter_pool(bundle, ds.images, args.target_class, args.max_images)
    attrs = att_find(
        bundle,
        pool,
        target_class=args.target_class,
        max_attributes=args.max_attributes,
        threshold=args.threshold,
        stats=stats,
        alpha=args.alpha,
    )
    out = os.path.join(args.run_dir, "attributes", f"class_{args.target_class}.json")
    save_attribute_set(attrs, out, meta={**_meta("attfind", cfg_digest), "pool_indices": pool_idx.tolist()})
    for rank in range(len(attrs.attributes)):
        write_strip_for_rank(bundle, pool, attrs, rank, stats, args.run_dir, count=args.strip_count)
    print(f"found {len(attrs.attributes)} attributes for class {args.target_class} -> {out}")
    for a in attrs.attributes:
        sign = "+" if a.direction > 0 else "-"
        print(
            f"  rank {a.rank}: layer {a.coord.layer_index} channel {a.coord.channel_index} "
            f"({sign}1) mean delta {a.mean_delta:.4f}, explains {a.images_explained}"
        )
    if attrs.flags:
        print(f"  flags: {', '.join(attrs.flags)}")
    return EXIT_OK


def cmd_explain(args) -> int:
    if not args.image_index:
        raise UsageError("pass at least one --image-index")
    bundle, stats, _ = _load_run(args.run_dir)
    ds = load_dataset(args.dataset)
    attrs = load_attribute_set(
        os.path.join(args.run_dir, "attributes", f"class_{args.target_class}.json")
    )
    k = args.k if args.k is not None else len(attrs.attributes)
    cfg_digest = _echo_config(
        args.run_dir,
        "explain",
        {
            "class": args.target_class,
            "image_index": list(args.image_index),
            "strategy": args.strategy,
            "k": k,
            "dataset": args.dataset,
        },
    )
    out_dir = os.path.join(args.run_dir, "explanations")
    os.makedirs(out_dir, exist_ok=True)
    width = max(5, len(str(len(ds) - 1)))
    for index in args.image_index:
        if not 0 <= index < len(ds):
            raise UsageError(f"--image-index {index} out of range for a dataset of {len(ds)}")
        image = ds.images[index]
        if args.strategy == "subset":
            result = subset_greedy(bundle, image, attrs, k_max=k, stats=stats)
        else:
            ranked = independent_topk(bundle, image, attrs, k=min(k, len(attrs.attributes)), stats=stats)
            best = [ranked[0][0]] if ranked else []
            result = render_counterfactual(bundle, image, attrs, stats, subset=best)
        stem = f"img_{index:0{width}d}"
        save_counterfactual_json(
            result,
            os.path.join(out_dir, f"{stem}.json"),
            meta={**_meta("explain", cfg_digest), "strategy": args.strategy, "image_index": index},
        )
        render_explanation_png(result, os.path.join(out_dir, f"{stem}.png"))
        flip = "flipped" if result.flipped else "not flipped"
        print(f"{stem}: {len(result.applied)} edits, {flip}")
    return EXIT_OK


def cmd_eval_sufficiency(args) -> int:
    bundle, stats, _ = _load_run(args.run_dir)
    ds = load_dataset(args.dataset)
    suffix = "" if args.selector == "attfind" else "_wu"
    attrs = load_attribute_set(
        os.path.join(args.run_dir, "attributes", f"class_{args.target_class}{suffix}.json")
    )
    cfg_digest = _echo_config(
        args.run_dir,
        "eval-sufficiency",
        {
            "class": args.target_class,
            "k_max": args.k_max,
            "selector": args.selector,
            "dataset": args.dataset,
            "max_images": args.max_images,
        },
    )
    pool, _ = _counter_pool(bundle, ds.images, args.target_class, args.max_images)
    report = sufficiency(bundle, pool, attrs, stats, k_max=args.k_max)

    table_path = os.path.join(args.run_dir, "tables", "sufficiency.json")
    entries = []
    if os.path.exists(table_path):
        with open(table_path) as fh:
            existing = json.load(fh)
        entries = existing if isinstance(existing, list) else [existing]
        entries = [e for e in entries if e.get("selector") != report.selector]
    payload = report.to_json_dict()
    payload["_meta"] = _meta("eval-sufficiency", cfg_digest)
    entries.append(payload)
    entries.sort(key=lambda e: str(e.get("selector")))
    save_report_json(entries, table_path)
    render_sufficiency_curve_png(entries, os.path.join(args.run_dir, "sufficiency_curve.png"))
    print(
        f"selector {report.selector}: flip fraction {report.flip_fraction:.4f} "
        f"over {report.num_images} images (k_max {report.k_max})"
    )
    print("per-k:", " ".join(f"{v:.4f}" for v in report.per_k_fractions))
    return EXIT_OK


def cmd_baseline_wu(args) -> int:
    bundle, stats, _ = _load_run(args.run_dir)
    ds = load_dataset(args.dataset)
    cfg_digest = _echo_config(
        args.run_dir,
        "baseline-wu",
        {
            "class": args.target_class,
            "M": args.max_attributes,
            "dataset": args.dataset,
            "max_images": args.max_images,
        },
    )
    images = ds.images[: args.max_images]
    attrs = wu_selector(
        bundle,
        images,
        target_class=args.target_class,
        max_attributes=args.max_attributes,
        stats=stats,
        alpha=args.alpha,
    )
    out = os.path.join(args.run_dir, "attributes", f"class_{args.target_class}_wu.json")
    save_attribute_set(attrs, out, meta=_meta("baseline-wu", cfg_digest))
    print(f"value-difference baseline picked {len(attrs.attributes)} coordinates -> {out}")
    for a in attrs.attributes:
        sign = "+" if a.direction > 0 else "-"
        print(
            f"  rank {a.rank}: layer {a.coord.layer_index} channel {a.coord.channel_index} "
            f"({sign}1) score {a.mean_delta:.4f}"
        )
    return EXIT_OK


def cmd_ablation_compare(args) -> int:
    bundle, stats, _ = _load_run(args.run_dir)
    no_cst_bundle, _ = load_bundle(os.path.join(args.no_cst_run, "gan.pt"))
    ds = load_dataset(args.dataset)
    cfg_digest = _echo_config(
        args.run_dir,
        "ablation-compare",
        {
            "class": args.target_class,
            "no_cst_run": args.no_cst_run,
            "dataset": args.dataset,
            "M": args.max_attributes,
            "t": args.threshold,
            "k_max": args.k_max,
            "max_images": args.max_images,
            "dataset_name": args.dataset_name,
        },
    )
    pool, _ = _counter_pool(bundle, ds.images, args.target_class, args.max_images)
    comparison = ablation_compare(
        bundle,
        no_cst_bundle,
        pool,
        target_class=args.target_class,
        max_attributes=args.max_attributes,
        threshold=args.threshold,
        k_max=args.k_max,
        dataset_name=args.dataset_name or os.path.basename(os.path.normpath(args.dataset)),
        stats_images=ds.images[: args.max_images],
    )
    out = os.path.join(args.run_dir, "tables", "ablation.json")
    save_report_json(comparison.to_json_dict(), out, meta=_meta("ablation-compare", cfg_digest))
    print(comparison.render_text())
    print(f"table -> {out}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    results = run_oracle_checks(seed=args.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        detail = f" ({r.detail})" if (r.detail and not r.passed) else ""
        print(f"{mark} {r.name}{detail}")
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_report(args) -> int:
    path, complete = emit_html_report(args.run_dir)
    print(f"report -> {path}")
    if not complete:
        print("report is missing sections or images; see placeholders", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="counterstyle", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="render the procedural shapes dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--num-images", type=int, default=5000)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--class-rule", choices=("hue", "patch"), default="hue")
    p.add_argument("--confound-strength", type=float, default=0.0)
    p.add_argument("--patch-size", type=int, default=4)
    p.add_argument("--patch-contrast", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train-classifier", help="train and freeze the classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="classifier checkpoint path")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--min-accuracy", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train-gan", help="train the conditioned generator")
    p.add_argument("--dataset", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr-g", type=float, default=2e-3)
    p.add_argument("--lr-d", type=float, default=2e-3)
    p.add_argument("--layer-channels", default="128,128,64,64", help="comma-separated style widths")
    p.add_argument("--latent-dim", type=int, default=128)
    p.add_argument("--no-cst", action="store_true", help="train without classifier conditioning")
    p.add_argument("--cls-weight", type=float, default=None, help="weight of the classifier KL term")
    p.add_argument("--adv-weight", type=float, default=1.0, help="weight of the adversarial terms")
    p.add_argument(
        "--rec-weight",
        type=float,
        default=1.0,
        help="weight of the pixel and perceptual reconstruction terms",
    )
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--stats-images", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("attfind", help="discover classifier-driving style coordinates")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    p.add_argument("--M", dest="max_attributes", type=int, default=10)
    p.add_argument("--t", dest="threshold", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=3.0)
    p.add_argument("--max-images", type=int, default=256)
    p.add_argument("--strip-count", type=int, default=6)
    p.set_defaults(func=cmd_attfind)

    p = sub.add_parser("explain", help="render per-image counterfactuals")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    p.add_argument("--image-index", type=int, action="append", default=[])
    p.add_argument("--strategy", choices=("subset", "independent"), default="subset")
    p.add_argument("--k", type=int, default=None, help="edit budget (default: all attributes)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("eval-sufficiency", help="flip fraction against edit budget")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--selector", choices=("attfind", "wu"), default="attfind")
    p.add_argument("--max-images", type=int, default=256)
    p.set_defaults(func=cmd_eval_sufficiency)

    p = sub.add_parser("baseline-wu", help="value-difference coordinate baseline")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    p.add_argument("--M", dest="max_attributes", type=int, default=10)
    p.add_argument("--alpha", type=float, default=3.0)
    p.add_argument("--max-images", type=int, default=256)
    p.set_defaults(func=cmd_baseline_wu)

    p = sub.add_parser("ablation-compare", help="conditioned vs unconditioned vs baseline")
    p.add_argument("--run-dir", required=True, help="run directory of the conditioned model")
    p.add_argument("--no-cst-run", required=True, help="run directory of the unconditioned model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    p.add_argument("--M", dest="max_attributes", type=int, default=10)
    p.add_argument("--t", dest="threshold", type=float, default=1.0)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--max-images", type=int, default=256)
    p.add_argument("--dataset-name", default="")
    p.set_defaults(func=cmd_ablation_compare)

    p = sub.add_parser("oracle-check", help="self-check discovery on analytic worlds")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("report", help="assemble report.html from run artifacts")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"counterstyle {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - the CLI boundary maps everything to exit 2
        print(f"counterstyle {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
