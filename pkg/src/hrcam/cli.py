"""Command-line pipeline: gen-data, train, cam, eval, compare.

Exit codes: 0 success, 1 ordering violated, 2 usage or config error,
3 data error. Every command echoes its effective run configuration into
its output directory so a run can be reproduced from the artifacts alone.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import cams, metrics, report
from .config import RunConfig, default_run_config, dump_run_config, load_run_config
from .fileio import read_pgm, save_tensor, write_pgm
from .model import derive_tapset, load_trained, save_trained
from .simdata import Sample, generate_dataset, load_dataset, write_dataset
from .train import train_backbone, train_gap_head


class DataError(RuntimeError):
    """Input data is missing or unusable (exit code 3)."""


def _params_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].tobytes())
    return h.hexdigest()


def _check_dataset_matches(cfg: RunConfig, data_cfg) -> None:
    if data_cfg.to_json_dict() != cfg.sim.to_json_dict():
        raise ValueError("dataset was generated with a different sim config; "
                         "pass the config used for gen-data")
    c, h, w = cfg.model.input_shape
    if (c, h, w) != (1, data_cfg.image_size, data_cfg.image_size):
        raise ValueError(f"model input {cfg.model.input_shape} does not match "
                         f"dataset images 1x{data_cfg.image_size}x{data_cfg.image_size}")


def _cam_fn(method: str, params, spec, tapset, head, class_id: int, layer: int | None):
    if method == "hrcam":
        if head is None:
            raise ValueError("model file has no trained head; run `hrcam train` first")
        return lambda s: cams.normalize_cam(
            cams.hrcam(s.image, params, spec, tapset, head, class_id))
    if method == "zhou":
        return lambda s: cams.normalize_cam(cams.zhou_cam(s.image, params, spec, class_id))
    if method == "gradcam":
        return lambda s: cams.normalize_cam(
            cams.grad_cam(s.image, params, spec, class_id, layer))
    raise ValueError(f"unknown CAM method {method!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = generate_dataset(cfg.sim)
    write_dataset(out, cfg.sim, train, test, tensors=args.tensors)
    dump_run_config(cfg, out / "run_config.json")
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    data_cfg, train, _ = load_dataset(args.data)
    _check_dataset_matches(cfg, data_cfg)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    print(f"phase 1: backbone, {cfg.train_backbone.epochs} epochs "
          f"on {len(train)} samples")
    params, losses1 = train_backbone(train, cfg.model, cfg.train_backbone)
    print(f"  loss {losses1[0]:.4f} -> {losses1[-1]:.4f}")
    tapset = derive_tapset(cfg.model)

    digest_before = _params_digest(params)
    print(f"phase 2: frozen-trunk head, {cfg.train_head.epochs} epochs")
    head, losses2 = train_gap_head(train, params, cfg.model, tapset, cfg.train_head)
    digest_after = _params_digest(params)
    frozen = digest_before == digest_after
    print(f"  loss {losses2[0]:.4f} -> {losses2[-1]:.4f}; backbone frozen: {frozen}")
    if not frozen:
        raise RuntimeError("backbone parameters changed during head training")

    meta = {"seed": cfg.seed, "backbone_digest": digest_before, "frozen_backbone": frozen}
    save_trained(out, cfg.model, tapset, params, head, meta)
    stem = out.parent / out.stem
    Path(f"{stem}.losses.json").write_text(
        json.dumps({"backbone": losses1, "head": losses2}, sort_keys=True) + "\n")
    report.save_loss_curves(losses1, losses2, f"{stem}.losses.png")
    dump_run_config(cfg, f"{stem}.run_config.json")
    print(f"wrote {out}")
    return 0


def _cam_inputs(args) -> list[Sample]:
    if args.image:
        img = read_pgm(args.image)
        return [Sample(img[None], 1, np.zeros(img.shape, dtype=np.uint8), None)]
    if not args.data:
        raise ValueError("either --image or --data is required")
    _, train, test = load_dataset(args.data)
    samples = train if args.split == "train" else test
    picked = [s for s in samples if s.label == 1][: args.limit]
    if not picked:
        raise DataError(f"no abnormal samples in the {args.split} split")
    return picked


def cmd_cam(args) -> int:
    spec, tapset, params, head, _ = load_trained(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fn = _cam_fn(args.method, params, spec, tapset, head, args.class_id, args.layer)

    for i, sample in enumerate(_cam_inputs(args)):
        cam = fn(sample)
        base = out / f"{i:04d}_{args.method}"
        write_pgm(f"{base}.pgm", cam.values)
        strip = cams.composite_strip(
            [sample.image[0], sample.mask.astype(np.float64), cam.values])
        write_pgm(f"{base}_strip.pgm", strip)
        if args.raw:
            save_tensor(f"{base}.hrt", cam.values.astype(np.float32))
    dump_run_config(load_run_config(args.config), out / "run_config.json")
    print(f"wrote CAMs to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    spec, tapset, params, head, _ = load_trained(args.model)
    _, _, test = load_dataset(args.data)
    abnormal = [s for s in test if s.label == 1 and s.mask.any()]
    if not abnormal:
        raise DataError("no abnormal test samples with a nonempty mask")

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in cams.METHODS:
            raise ValueError(f"unknown CAM method {m!r}; choose from {cams.METHODS}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    by_method = {}
    for method in methods:
        fn = _cam_fn(method, params, spec, tapset, head, args.class_id, cfg.cam.gradcam_layer)
        by_method[method] = metrics.evaluate_method(abnormal, fn)
        means = by_method[method].means
        print(f"{method:8s} " + "  ".join(f"{k} {v:.4f}" for k, v in means.items()))

    accuracies = metrics.classification_accuracy(test, params, spec, tapset, head)
    print("accuracy  " + "  ".join(f"{k} {v:.4f}" for k, v in accuracies.items()))

    metrics.write_metrics_csv(out / "metrics.csv", by_method)
    report.save_threshold_curves(by_method, out / "threshold_curves.png")
    summary = {
        "accuracies": accuracies,
        "methods": methods,
        "samples_evaluated": len(abnormal),
        "config": cfg.to_json_dict(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    dump_run_config(cfg, out / "run_config.json")
    print(f"wrote {out / 'metrics.csv'}")
    return 0


def cmd_compare(args) -> int:
    by_method = metrics.read_metrics_csv(args.metrics)
    ok, lines = metrics.ordering_report(by_method)
    for line in lines:
        print(line)
    print("ordering holds" if ok else "ordering violated")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hrcam",
        description="Multi-level class activation maps on a synthetic-lesion benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--config", help="run config JSON (defaults used if omitted)")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--tensors", action="store_true", help="also write HRT1 tensors")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train backbone then the frozen-trunk head")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output model file (HRM1)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cam", help="export activation-map images")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--image", help="single input PGM")
    p.add_argument("--data", help="dataset directory (abnormal samples)")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--limit", type=int, default=8, help="max samples from --data")
    p.add_argument("--method", required=True, choices=cams.METHODS)
    p.add_argument("--class", dest="class_id", type=int, default=1)
    p.add_argument("--layer", type=int, default=None, help="tap layer id for gradcam")
    p.add_argument("--raw", action="store_true", help="also dump raw HRT1 maps")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_cam)

    p = sub.add_parser("eval", help="threshold-sweep evaluation on the test split")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--methods", default="hrcam,gradcam,zhou")
    p.add_argument("--class", dest="class_id", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="check metric ordering in a metrics.csv")
    p.add_argument("--metrics", required=True, help="metrics.csv from eval")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
