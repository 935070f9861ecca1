"""Command-line entry point.

Subcommands: score, maps, synth, train, eval2afc, evaljnd.  Exit codes:
0 success, 2 usage error, 3 data/format/file error, 4 numeric failure.
Machine-readable output (scores, JSON, TSV) goes to stdout and is
byte-reproducible for identical inputs and seeds; everything conversational
goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backbone import load_backbone
from .datasets import ManifestKind, load_manifest, synth_2afc
from .deep_quality import deep_maps
from .errors import DataError, FormatError, NumericError
from .evalstats import eval_2afc, eval_jnd, report_to_json
from .fusion import Ablation, load_head, score
from .trainer import Optimizer, TrainConfig, train, write_metrics_tsv
from .traditional import max_msssim_scales, msssim_map, psnr_map, ssim_map

__all__ = ["main"]


def _decode_pair(eval_path, ref_path):
    from .datasets import decode_image

    eval_img = decode_image(eval_path)
    ref_img = decode_image(ref_path)
    if eval_img.shape != ref_img.shape:
        raise DataError(
            f"image shapes differ: eval {eval_img.shape} vs ref {ref_img.shape}"
        )
    return eval_img, ref_img


def cmd_score(args) -> int:
    spec = load_backbone(args.weights)
    head = load_head(args.head)
    eval_img, ref_img = _decode_pair(args.eval, args.ref)
    scales = head.msssim_scales()
    if scales is None:
        scales = min(5, max_msssim_scales(eval_img.shape[1], eval_img.shape[2]))
    from .trainer import compute_groups

    breakdown = score(head, compute_groups(spec, eval_img, ref_img, scales))
    if args.json:
        payload = {
            "score": breakdown.score,
            "lambdas": list(breakdown.lambdas),
            "f_trad": breakdown.f_trad_mean,
            "f_percept": breakdown.f_percept_mean,
            "f_semantic": breakdown.f_semantic_mean,
        }
        print(json.dumps(payload))
    else:
        print(f"{breakdown.score:.6f}")
    return 0


def cmd_maps(args) -> int:
    from .backbone import extract_features
    from .reporting import save_map_png

    spec = load_backbone(args.weights)
    eval_img, ref_img = _decode_pair(args.eval, args.ref)
    scales = min(5, max_msssim_scales(eval_img.shape[1], eval_img.shape[2]))
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    psnr = psnr_map(eval_img, ref_img)
    ssim = ssim_map(eval_img, ref_img)
    msssim = msssim_map(eval_img, ref_img, scales=scales)
    deep = deep_maps(extract_features(spec, eval_img), extract_features(spec, ref_img))

    written = []
    save_map_png(psnr.map.data.mean(axis=0), outdir / "psnr.png")
    written.append("psnr.png")
    save_map_png(ssim.map.data.mean(axis=0), outdir / "ssim.png")
    written.append("ssim.png")
    for i in range(scales):
        name = f"msssim_scale{i + 1}.png"
        save_map_png(msssim.map.data[i], outdir / name)
        written.append(name)
    for qmap in deep:
        name = f"deep_layer{qmap.source.layer}.png"
        save_map_png(qmap.map.data.mean(axis=0), outdir / name)
        written.append(name)
    print(f"wrote {len(written)} maps to {outdir}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    manifest = synth_2afc(args.out, args.n, args.seed)
    print(str(manifest))
    return 0


def cmd_train(args) -> int:
    spec = load_backbone(args.weights)
    samples = load_manifest(args.manifest, ManifestKind.TWOAFC)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        ablation=Ablation(args.ablation),
        optimizer=Optimizer(args.optimizer),
        cache_dir=Path(args.cache_dir) if args.cache_dir else None,
    )
    head, report = train(spec, samples, cfg)

    from .fusion import save_head
    from .reporting import save_train_curves

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_head(head, out)
    stem = out.parent / out.stem
    write_metrics_tsv(report, Path(f"{stem}.metrics.tsv"))
    save_train_curves(report, Path(f"{stem}.curves.png"))
    print(
        f"best_epoch\t{report.best_epoch + 1}\n"
        f"val_loss\t{report.val_losses[report.best_epoch]:.6f}\n"
        f"holdout_acc\t{report.holdout_accuracy:.6f}"
    )
    return 0


def _emit_report(report, args, *, with_acc: bool) -> None:
    for warning in report.warnings:
        print(warning, file=sys.stderr)
    if args.json:
        text = report_to_json(report)
        print(text)
    else:
        columns = ["category", "plcc", "srcc", "krcc", "n"]
        if with_acc:
            columns.append("acc2afc")
        lines = ["\t".join(columns)]
        for category, r in report.categories.items():
            row = [category, f"{r.plcc:.6f}", f"{r.srcc:.6f}", f"{r.krcc:.6f}", str(r.n)]
            if with_acc:
                row.append(f"{r.acc2afc:.6f}")
            lines.append("\t".join(row))
        text = "\n".join(lines)
        print(text)
    if args.report_dir:
        from .reporting import save_category_bars

        report_dir = Path(args.report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        (report_dir / "report.json").write_text(report_to_json(report) + "\n", encoding="utf-8")
        lines = ["\t".join(["category", "plcc", "srcc", "krcc", "n"] + (["acc2afc"] if with_acc else []))]
        for category, r in report.categories.items():
            row = [category, f"{r.plcc:.6f}", f"{r.srcc:.6f}", f"{r.krcc:.6f}", str(r.n)]
            if with_acc:
                row.append(f"{r.acc2afc:.6f}")
            lines.append("\t".join(row))
        (report_dir / "report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        save_category_bars(report, report_dir / "categories.png")


def cmd_eval2afc(args) -> int:
    spec = load_backbone(args.weights)
    head = load_head(args.head)
    samples = load_manifest(args.manifest, ManifestKind.TWOAFC)
    cache_dir = Path(args.cache_dir) if args.cache_dir else None
    report = eval_2afc(head, spec, samples, cache_dir=cache_dir)
    _emit_report(report, args, with_acc=True)
    return 0


def cmd_evaljnd(args) -> int:
    spec = load_backbone(args.weights)
    head = load_head(args.head)
    samples = load_manifest(args.manifest, ManifestKind.JND)
    report = eval_jnd(head, spec, samples)
    _emit_report(report, args, with_acc=False)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spips",
        description="Full-reference image quality scoring with fused traditional and deep quality maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score one eval/ref image pair")
    p.add_argument("--eval", required=True, help="evaluated image (PNG)")
    p.add_argument("--ref", required=True, help="reference image (PNG)")
    p.add_argument("--weights", required=True, help="backbone .spwt file")
    p.add_argument("--head", required=True, help="fusion head .spht file")
    p.add_argument("--json", action="store_true", help="print the full score breakdown as JSON")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("maps", help="export per-map grayscale heatmaps")
    p.add_argument("--eval", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_maps)

    p = sub.add_parser("synth", help="generate the synthetic 2AFC corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a fusion head on a 2AFC manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="output .spht path")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--ablation",
        choices=[a.value for a in Ablation],
        default=Ablation.FULL.value,
    )
    p.add_argument("--optimizer", choices=[o.value for o in Optimizer], default="adam")
    p.add_argument("--cache-dir", default=None, help="feature cache directory")
    p.set_defaults(func=cmd_train)

    for name, func in (("eval2afc", cmd_eval2afc), ("evaljnd", cmd_evaljnd)):
        p = sub.add_parser(name, help=f"per-category {name[4:].upper()} evaluation")
        p.add_argument("--manifest", required=True)
        p.add_argument("--weights", required=True)
        p.add_argument("--head", required=True)
        p.add_argument("--json", action="store_true")
        p.add_argument("--report-dir", default=None, help="also write report files and figures here")
        if name == "eval2afc":
            p.add_argument("--cache-dir", default=None)
        p.set_defaults(func=func)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataError, FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
