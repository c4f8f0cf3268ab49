"""Command-line entry points.

Subcommands: gen-data, train, eval, predict, serve.
Exit codes: 0 success, 1 usage error, 2 runtime error.
DERMO_LOG in {error, info, debug} controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _hw(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        return (h, w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")


def build_parser() -> _Parser:
    p = _Parser(prog="dermoscan",
                description="skin-lesion detection and recognition")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[], description="generate a "
                       "synthetic dermoscopy-like dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--classes", type=int, required=True, choices=(2, 3))
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--hw", type=_hw, default=(192, 256),
                   help="image size as HxW (default 192x256)")
    g.add_argument("--class-counts", default=None,
                   help="comma-separated per-class counts (sums to --n)")
    g.add_argument("--no-artifacts", action="store_true",
                   help="skip hair/ruler overlays")

    t = sub.add_parser("train", description="train a network on a dataset dir")
    t.add_argument("--mode", required=True,
                   choices=("segmentation", "recognition", "joint"))
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output .ddwf weight file")
    t.add_argument("--config", default=None,
                   help="network config file (key=value lines)")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--optimizer", default="adam",
                   choices=("adam", "sgd-momentum"))
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--augment", action="store_true",
                   help="enable geometric+intensity augmentation")
    t.add_argument("--rebalance", action="store_true",
                   help="oversample minority classes to parity (recognition)")
    t.add_argument("--class-weight-mode", default="inverse-frequency",
                   choices=("inverse-frequency", "proportional", "uniform"))
    t.add_argument("--target-metric", type=float, default=None,
                   help="stop once the train metric reaches this value")
    t.add_argument("--patience", type=int, default=20)
    t.add_argument("--no-roi", action="store_true",
                   help="recognition mode: train on full images, not ROI crops")

    e = sub.add_parser("eval", description="evaluate weights on a dataset dir")
    e.add_argument("--data", required=True)
    e.add_argument("--seg-weights", required=True)
    e.add_argument("--cls-weights", default=None)
    e.add_argument("--report", required=True, help="output report JSON")
    e.add_argument("--csv", default=None, help="optional CSV summary path")

    r = sub.add_parser("predict", description="single-image prediction")
    r.add_argument("--image", required=True)
    r.add_argument("--seg-weights", required=True)
    r.add_argument("--cls-weights", required=True)
    r.add_argument("--out", required=True, help="annotated PPM output")
    r.add_argument("--json", dest="json_out", required=True,
                   help="prediction JSON output")

    s = sub.add_parser("serve", description="run the HTTP inference service")
    s.add_argument("--port", type=int, default=5000)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--seg-weights", required=True)
    s.add_argument("--cls-weights", required=True)
    s.add_argument("--cls-weights-binary", default=None,
                   help="optional second recognition weight file")
    s.add_argument("--ui", default=None, help="static web UI bundle directory")
    return p


def cmd_gen_data(args) -> int:
    from .data import save_dataset
    from .synthetic import GENERATOR_VERSION, gen_synthetic

    counts = None
    if args.class_counts:
        counts = [int(v) for v in args.class_counts.split(",")]
    samples = gen_synthetic(args.n, args.classes, seed=args.seed, hw=args.hw,
                            class_counts=counts,
                            artifacts=not args.no_artifacts)
    save_dataset(samples, args.out, num_classes=args.classes, seed=args.seed,
                 generator_version=GENERATOR_VERSION)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _load_net_config(args, meta, mode):
    from .network import NetworkConfig
    if args.config:
        return NetworkConfig.from_config_lines(Path(args.config).read_text())
    num_classes = int(meta.get("num_classes", 2))
    return NetworkConfig(num_classes=num_classes,
                         include_decoder=(mode != "recognition"))


def cmd_train(args) -> int:
    from .augment import AugmentationSpec, rebalance
    from .data import load_dataset
    from .network import DermoNet
    from .train import TrainConfig, prepare_recognition_samples, train
    from .weights import save_weights

    samples, meta = load_dataset(args.data)
    net_config = _load_net_config(args, meta, args.mode)
    net = DermoNet(net_config)
    net.init_weights(args.seed)

    if args.mode == "recognition" and not args.no_roi:
        have_masks = all(s.mask is not None for s in samples)
        if have_masks:
            samples, _ = prepare_recognition_samples(
                samples, None, net_config.input_hw_recognition)
            logger.info("recognition training on oracle-mask ROI crops")
        else:
            logger.info("no masks in dataset; training on full images")
    if args.rebalance:
        if args.mode not in ("recognition", "joint"):
            raise UsageError("--rebalance applies to labeled training modes")
        labels = [s.label for s in samples]
        top = max(labels.count(c) for c in set(labels))
        samples = rebalance(samples, {c: top for c in set(labels)},
                            AugmentationSpec(), seed=args.seed)

    cfg = TrainConfig(
        mode=args.mode, epochs=args.epochs, batch_size=args.batch_size,
        optimizer=args.optimizer, learning_rate=args.lr, seed=args.seed,
        class_weight_mode=args.class_weight_mode,
        augment_spec=AugmentationSpec() if args.augment else None,
        early_stop_patience=args.patience,
        target_train_metric=args.target_metric)

    out_path = Path(args.out)
    run_dir = out_path.parent / (out_path.stem + ".run")
    state = train(net, samples, cfg, out_dir=run_dir)
    best = run_dir / "best.ddwf"
    if best.exists():
        shutil.copyfile(best, out_path)
    else:
        save_weights(net, out_path)
    last = state.history[-1] if state.history else {}
    print(f"trained {state.epochs_run} epochs; best val metric "
          f"{state.best_metric:.4f} (epoch {state.best_epoch}); "
          f"final {last.get('metric', float('nan')):.4f}; "
          f"weights -> {out_path}")
    return 0


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .metrics import EvalReport
    from .train import cascade_pipeline, evaluate
    from .weights import load_weights

    samples, _ = load_dataset(args.data)
    seg_net = load_weights(args.seg_weights)
    seg_report = evaluate(seg_net, samples, "segmentation")
    if args.cls_weights:
        cls_net = load_weights(args.cls_weights)
        cascade = cascade_pipeline(seg_net, cls_net, samples)
        report = EvalReport(seg=seg_report.seg, cls=cascade.cls,
                            roc=cascade.roc, auc=cascade.auc,
                            class_names=cascade.class_names,
                            degenerate_mask_ids=cascade.degenerate_mask_ids)
    else:
        report = seg_report
    Path(args.report).write_text(report.to_json() + "\n")
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    print(f"report -> {args.report}")
    return 0


def cmd_predict(args) -> int:
    from .annotate import annotate
    from .imageio import read_ppm, write_ppm
    from .inference import predict_single, top_class
    from .rle import rle_decode
    from .roi import BBox
    from .weights import file_crc, load_weights

    try:
        image = read_ppm(args.image)
    except Exception:
        from .server import decode_upload
        image = decode_upload(Path(args.image).read_bytes())
    seg_net = load_weights(args.seg_weights)
    cls_net = load_weights(args.cls_weights)
    payload = predict_single(seg_net, cls_net, image)
    payload["model_version"] = file_crc(args.seg_weights)
    Path(args.json_out).write_text(json.dumps(payload, indent=2) + "\n")

    best = top_class(payload)
    mask = rle_decode(payload["mask"]["rle"], *payload["mask"]["dims"])
    out = annotate(image, BBox(**payload["bbox"]), mask=mask,
                   label=best["label"], prob=best["probability"])
    write_ppm(out, args.out)
    print(f"{best['label']} p={best['probability']:.3f} "
          f"bbox={payload['bbox']} -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    cls_paths = [args.cls_weights]
    if args.cls_weights_binary:
        cls_paths.append(args.cls_weights_binary)
    app = create_app(args.seg_weights, cls_paths, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "serve": cmd_serve,
}


def configure_logging() -> None:
    level = os.environ.get("DERMO_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
