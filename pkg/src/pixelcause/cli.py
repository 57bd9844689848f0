"""Command line front end.

Subcommands cover the full workflow: `generate` a synthetic dataset,
`train` the pooled-feature desk classifier, `explain` one image against
its contrast, `evaluate` saliency quality over an annotated dataset,
and `sweep` the IoU intensity threshold. Failures map to distinct exit
codes: 2 for configuration problems, 3 for missing or malformed files,
4 for classifier failures, 1 for other engine errors.

The worker pool size for perturbation evaluation comes from the
PIXELCAUSE_WORKERS environment variable (default 1).
"""

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .classifiers import (SubprocessClassifier, load_classifier,
                          save_classifier, train_desk_classifier)
from .config import (RunConfig, config_from_mapping, engine_settings,
                     load_mapping, parse_flat_config, save_resolved_config)
from .errors import (ClassifierError, ConfigError, InputError,
                     NotPositiveClass, PixelCauseError, ZeroSaliency)
from .evaluation import (SWEEP_PERCENTS, ImageScore, aggregate,
                         aggregate_scores, iou, pointing_game,
                         save_aggregate_json, save_bar_chart_svg,
                         save_scores_csv, threshold_sweep)
from .explanation import explain, saliency_map, save_explanation_json, save_report
from .imaging import (load_png, load_saliency, save_saliency_json,
                      save_saliency_png)
from .perturbation import save_records_csv
from .segmentation import save_segment_map_json, save_segment_map_png
from .synthetic import DISEASED, load_dataset, random_dataset, save_dataset

WORKERS_ENV = "PIXELCAUSE_WORKERS"


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def _build_config(args) -> RunConfig:
    mapping = {}
    if getattr(args, "config", None):
        mapping.update(load_mapping(args.config))
    for override in getattr(args, "set", None) or []:
        parsed = parse_flat_config(override)
        if not parsed:
            raise ConfigError(f"--set needs KEY=VALUE, got {override!r}")
        mapping.update(parsed)
    if getattr(args, "seed", None) is not None:
        mapping["seed"] = args.seed
    return config_from_mapping(mapping)


def _load_image(path) -> np.ndarray:
    p = Path(path)
    try:
        return load_png(p)
    except FileNotFoundError as exc:
        raise InputError(f"image file not found: {p}") from exc
    except OSError as exc:
        raise InputError(f"cannot read image {p}: {exc}") from exc


def _make_classifier(args, input_size):
    if getattr(args, "classifier_cmd", None):
        return SubprocessClassifier(args.classifier_cmd, input_size=input_size)
    return load_classifier(args.classifier)


def _close(m) -> None:
    if hasattr(m, "close"):
        m.close()


# --- subcommands -----------------------------------------------------------

def cmd_generate(args) -> int:
    config = _build_config(args)
    if args.count < 1:
        raise ConfigError(f"--count must be >= 1, got {args.count}")
    if not 0.0 <= args.disease_ratio <= 1.0:
        raise ConfigError(
            f"--disease-ratio must lie in [0, 1], got {args.disease_ratio}")
    items = random_dataset(args.count, config.seed,
                           disease_ratio=args.disease_ratio, size=args.size)
    out = Path(args.out)
    save_dataset(items, out)
    save_resolved_config(config, out / "resolved_config.json")
    n_diseased = sum(1 for _, _, _, truth in items if truth.label == DISEASED)
    print(f"wrote {len(items)} image pairs ({n_diseased} diseased) to {out}")
    return 0


def cmd_train(args) -> int:
    config = _build_config(args)
    if not 0.0 < args.val_fraction < 1.0:
        raise ConfigError(
            f"--val-fraction must lie in (0, 1), got {args.val_fraction}")
    items = load_dataset(args.dataset)
    pairs = [(item.x, item.truth.label) for item in items]
    if len(pairs) < 2:
        raise ConfigError("training needs at least 2 images")
    order = np.random.default_rng(config.seed).permutation(len(pairs))
    n_valid = max(1, int(round(args.val_fraction * len(pairs))))
    if n_valid >= len(pairs):
        n_valid = len(pairs) - 1
    valid = [pairs[i] for i in order[:n_valid]]
    train = [pairs[i] for i in order[n_valid:]]
    handle = train_desk_classifier(train, valid, seed=config.seed,
                                   model=args.model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_classifier(handle, out)
    print(f"trained {handle.metadata}")
    print(f"saved classifier to {out}")
    return 0


def cmd_explain(args) -> int:
    config = _build_config(args)
    x = _load_image(args.image)
    x_prime = _load_image(args.contrast)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = _make_classifier(args, input_size=x.shape)
    try:
        result = explain(x, x_prime, m, workers=_workers(),
                         **engine_settings(config, x.shape))
    finally:
        _close(m)
    save_explanation_json(result, out / "explanation.json")
    save_report(result, out / "report.txt")
    heat = saliency_map(result)
    save_saliency_png(heat, x, out / "saliency.png")
    save_saliency_json(heat, out / "saliency.json")
    save_segment_map_png(result.segments, out / "segment_map.png")
    save_segment_map_json(result.segments, out / "segment_map.json")
    save_records_csv(result.records, out / "perturbations.csv")
    save_resolved_config(config, out / "resolved_config.json")
    print(f"{result.original_label} (p = {result.original_probability:.4g}), "
          f"{result.segments.n} segments, "
          f"{len(result.counterfactuals)} counterfactuals -> {out}")
    for warning in result.warnings:
        print(f"warning: {warning}")
    return 0


def _diseased_items(dataset_dir):
    root = Path(dataset_dir)
    if root.is_dir() and not (root / "dataset.json").exists() \
            and not any(root.iterdir()):
        raise ConfigError(f"dataset directory {root} is empty")
    items = load_dataset(root)
    if not items:
        raise ConfigError(f"dataset {root} lists no items")
    diseased = [item for item in items if item.truth.label == DISEASED]
    if not diseased:
        raise ConfigError(f"dataset {root} has no diseased items to evaluate")
    return diseased


def _saliency_per_item(args, config, items):
    """Pairs (item, saliency map) plus ids skipped by the classifier."""
    heats, skipped = [], []
    if getattr(args, "saliency_dir", None):
        root = Path(args.saliency_dir)
        for item in items:
            for candidate in (root / f"{item.item_id}.json",
                              root / f"{item.item_id}.png"):
                if candidate.exists():
                    heats.append((item, load_saliency(candidate)))
                    break
            else:
                raise InputError(
                    f"no saliency map for item {item.item_id} in {root}")
        return heats, skipped
    m = _make_classifier(args, input_size=items[0].x.shape)
    workers = _workers()
    try:
        for item in items:
            settings = engine_settings(config, item.x.shape)
            try:
                result = explain(item.x, item.x_prime, m, workers=workers,
                                 **settings)
            except NotPositiveClass:
                skipped.append({"item_id": item.item_id,
                                "reason": "not positive class"})
                continue
            heats.append((item, saliency_map(result)))
    finally:
        _close(m)
    return heats, skipped


def cmd_evaluate(args) -> int:
    config = _build_config(args)
    items = _diseased_items(args.dataset)
    heats, skipped = _saliency_per_item(args, config, items)
    rows = []
    for item, heat in heats:
        masks = [target.mask for target in item.truth.targets]
        try:
            row = ImageScore(item_id=item.item_id,
                             pointing=pointing_game(heat, masks),
                             iou=iou(heat, masks))
        except ZeroSaliency:
            skipped.append({"item_id": item.item_id,
                            "reason": "no positive saliency"})
            continue
        rows.append(row)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scores_csv(rows, out / "scores.csv")
    payload = aggregate_scores(rows)
    payload["skipped"] = skipped
    save_aggregate_json(payload, out / "aggregate.json")
    save_resolved_config(config, out / "resolved_config.json")
    if args.chart:
        save_bar_chart_svg(
            [("pointing", payload["pointing_game"]["mean"],
              payload["pointing_game"]["ci95"]),
             ("iou", payload["iou"]["mean"], payload["iou"]["ci95"])],
            out / "chart.svg")
    print(f"evaluated {len(rows)} images ({len(skipped)} skipped)")
    print(f"pointing game: {payload['pointing_game']['mean']:.4f} "
          f"+/- {payload['pointing_game']['ci95']:.4f}")
    print(f"iou: {payload['iou']['mean']:.4f} "
          f"+/- {payload['iou']['ci95']:.4f}")
    return 0


def cmd_sweep(args) -> int:
    config = _build_config(args)
    try:
        percents = tuple(int(p) for p in args.percents.split(","))
    except ValueError:
        raise ConfigError(
            f"--percents must be comma-separated integers, got {args.percents!r}")
    if not percents or not all(0 < p < 100 for p in percents):
        raise ConfigError(f"--percents must lie in (0, 100), got {percents}")
    items = _diseased_items(args.dataset)
    heats, skipped = _saliency_per_item(args, config, items)
    per_item = []
    for item, heat in heats:
        masks = [target.mask for target in item.truth.targets]
        try:
            sweep = threshold_sweep(heat, masks, percents)
        except ZeroSaliency:
            skipped.append({"item_id": item.item_id,
                            "reason": "no positive saliency"})
            continue
        per_item.append((item.item_id, sweep))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    by_percent = {}
    for pct in sorted(percents):
        mean, ci = aggregate([sweep[pct] for _, sweep in per_item])
        by_percent[str(pct)] = {"mean": mean, "ci95": ci}
    best = max(sorted(by_percent), key=lambda p: by_percent[p]["mean"])
    payload = {"percents": by_percent, "best_percent": int(best),
               "n": len(per_item), "skipped": skipped}
    save_aggregate_json(payload, out / "sweep.json")
    _save_sweep_csv(per_item, sorted(percents), out / "sweep.csv")
    save_resolved_config(config, out / "resolved_config.json")
    print(f"swept {len(per_item)} images; best threshold {best}% "
          f"(mean IoU {by_percent[best]['mean']:.4f})")
    return 0


def _save_sweep_csv(per_item, percents, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id"] + [f"iou_{p}" for p in percents])
        for item_id, sweep in per_item:
            writer.writerow([item_id] + [repr(sweep[p]) for p in percents])


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pixelcause",
        description="Contrastive counterfactual explanations for black-box "
                    "image classifiers.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (JSON or key = value lines)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a single config key (repeatable)")
    common.add_argument("--seed", type=int, help="override the config seed")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="generate a synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--disease-ratio", type=float, default=0.5)
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common],
                       help="train the desk classifier on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=("logistic", "mlp"), default="logistic")
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.set_defaults(func=cmd_train)

    def add_classifier_group(sp, required):
        group = sp.add_mutually_exclusive_group(required=required)
        group.add_argument("--classifier", help="trained classifier JSON file")
        group.add_argument("--classifier-cmd",
                           help="external classifier command (line protocol)")
        return group

    p = sub.add_parser("explain", parents=[common],
                       help="explain one image against its contrast image")
    p.add_argument("--image", required=True)
    p.add_argument("--contrast", required=True)
    p.add_argument("--out", required=True)
    add_classifier_group(p, required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score saliency maps against dataset annotations")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    group = add_classifier_group(p, required=False)
    group.add_argument("--saliency-dir",
                       help="directory of <item_id>.json/.png saliency maps")
    p.add_argument("--chart", action="store_true",
                   help="also write an SVG bar chart")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common],
                       help="sweep the IoU intensity threshold")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--percents",
                   default=",".join(str(pct) for pct in SWEEP_PERCENTS))
    group = add_classifier_group(p, required=False)
    group.add_argument("--saliency-dir",
                       help="directory of <item_id>.json/.png saliency maps")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("evaluate", "sweep") and not (
            getattr(args, "classifier", None)
            or getattr(args, "classifier_cmd", None)
            or getattr(args, "saliency_dir", None)):
        print("error: one of --classifier, --classifier-cmd, --saliency-dir "
              "is required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ClassifierError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except PixelCauseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
