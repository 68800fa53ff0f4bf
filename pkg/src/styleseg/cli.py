"""Command line interface.

Subcommands cover the full workflow: synthesizing datasets, pretraining the
texture encoder, training, evaluation with corruption sweeps, the ablation
study, and report generation. Exit codes: 0 success, 1 failure, 2 usage.
Heavy imports happen inside the handlers so each subcommand only loads what
it uses.
"""

import argparse
import json
import sys
from pathlib import Path


def _cmd_gen_data(args) -> int:
    from .scenes import generate_dataset

    jobs = [
        ("train", args.train, "train", True),
        ("val", args.val, "val", True),
        ("unlabeled", args.unlabeled, "unlabeled", False),
        ("unseen_a", args.unseen, "unseen_a", True),
        ("unseen_b", args.unseen, "unseen_b", True),
        ("unseen_c", args.unseen, "unseen_c", True),
    ]
    for split, count, domain, with_labels in jobs:
        if count <= 0:
            continue
        manifest = generate_dataset(args.out, split, count, seed=args.seed,
                                    domain=domain, size=args.size,
                                    with_labels=with_labels, force=args.force)
        print(f"wrote {manifest['count']} scenes to {Path(args.out) / split}")
    return 0


def _cmd_pretrain_texture(args) -> int:
    from .network import DEFAULT_WIDTHS
    from .texture_manifold import pretrain_texture_encoder, save_texture_encoder

    if args.widths is None:
        widths = DEFAULT_WIDTHS
    else:
        widths = tuple(int(w) for w in args.widths.split(","))
    model, report = pretrain_texture_encoder(seed=args.seed, steps=args.steps,
                                             batch_size=args.batch_size,
                                             widths=widths,
                                             log_every=0 if args.quiet else 50)
    acc = report["holdout_accuracy"]
    print(f"texture encoder held-out accuracy: {acc:.4f}")
    if acc < args.min_accuracy:
        print(f"error: accuracy below the required {args.min_accuracy}", file=sys.stderr)
        return 1
    save_texture_encoder(args.out, model, report)
    print(f"saved texture encoder to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from dataclasses import replace

    from .config import TrainConfig, variant_config
    from .trainer import Trainer

    if args.resume:
        trainer = Trainer.restore(args.resume)
    else:
        cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
        overrides = {}
        if args.data:
            overrides["data_root"] = args.data
        if args.out:
            overrides["out_dir"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.steps is not None:
            overrides["steps"] = args.steps
        if args.texture_encoder:
            overrides["texture_encoder_path"] = args.texture_encoder
        if overrides:
            cfg = replace(cfg, **overrides)
        if args.variant:
            cfg = variant_config(cfg, args.variant)
        out = Path(cfg.out_dir)
        if out.exists() and any(out.iterdir()) and not args.force:
            print(f"error: {out} is not empty; pass --force to reuse it", file=sys.stderr)
            return 1
        trainer = Trainer(cfg)
    summary = trainer.train(quiet=args.quiet)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import evaluate_checkpoint

    splits = tuple(s.strip() for s in args.splits.split(",") if s.strip())
    payload = evaluate_checkpoint(args.checkpoint, args.data, splits=splits,
                                  seed=args.seed,
                                  with_corruptions=not args.no_corruptions,
                                  out_dir=args.out)
    clean = payload.get("clean", {})
    print(f"clean mIoU {clean.get('miou', float('nan')):.4f} "
          f"mAcc {clean.get('macc', float('nan')):.4f}")
    if "mean_corrupted_miou" in payload:
        print(f"mean corrupted mIoU {payload['mean_corrupted_miou']:.4f}")
    for key, value in payload.items():
        if key.startswith("domain:"):
            print(f"{key[7:]} mIoU {value['miou']:.4f}")
    return 0


VARIANT_ORDER = ("baseline", "random_style", "real_style", "generated_style",
                 "texture_only", "full")


def run_ablation(data_root, out_root, texture_encoder, variants, seeds, steps,
                 quiet=True, eval_seed=0):
    """Train and evaluate each variant x seed; returns the aggregate table."""
    from dataclasses import replace

    from .config import TrainConfig, variant_config
    from .evaluation import evaluate_checkpoint
    from .trainer import Trainer

    results = {}
    for variant in variants:
        per_seed = {}
        for seed in seeds:
            run_dir = Path(out_root) / variant / f"seed{seed}"
            base = TrainConfig(data_root=str(data_root), out_dir=str(run_dir),
                               seed=seed, steps=steps,
                               texture_encoder_path=str(texture_encoder))
            cfg = variant_config(base, variant)
            ckpt = run_dir / "network_final.pt"
            if not ckpt.exists():
                Trainer(cfg).train(quiet=quiet)
            payload = evaluate_checkpoint(
                ckpt, data_root, splits=("val", "unseen_a", "unseen_b", "unseen_c"),
                seed=eval_seed, out_dir=run_dir / "eval")
            unseen = {k[7:]: v["miou"] for k, v in payload.items()
                      if k.startswith("domain:")}
            per_seed[seed] = {
                "clean_miou": payload["clean"]["miou"],
                "corrupted_miou": payload["mean_corrupted_miou"],
                "unseen_miou": unseen,
                "mean_unseen_miou": sum(unseen.values()) / len(unseen),
            }
        mean = {
            "clean_miou": _mean(per_seed, "clean_miou"),
            "corrupted_miou": _mean(per_seed, "corrupted_miou"),
            "mean_unseen_miou": _mean(per_seed, "mean_unseen_miou"),
        }
        results[variant] = {"seeds": per_seed, "mean": mean}
    return results


def _mean(per_seed: dict, key: str) -> float:
    vals = [v[key] for v in per_seed.values()]
    return sum(vals) / len(vals)


def _ablation_markdown(results: dict) -> str:
    lines = ["# Ablation study", "",
             "| variant | clean mIoU | corrupted mIoU | unseen mIoU |",
             "| --- | --- | --- | --- |"]
    for name in VARIANT_ORDER:
        if name not in results:
            continue
        m = results[name]["mean"]
        lines.append(f"| {name} | {m['clean_miou']:.4f} | "
                     f"{m['corrupted_miou']:.4f} | {m['mean_unseen_miou']:.4f} |")
    return "\n".join(lines) + "\n"


def _cmd_ablate(args) -> int:
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    seeds = tuple(int(s) for s in args.seeds.split(","))
    results = run_ablation(args.data, args.out, args.texture_encoder,
                           variants, seeds, args.steps, quiet=args.quiet,
                           eval_seed=args.seed)
    manifest = json.loads(
        (Path(args.data) / "train" / "manifest.json").read_text())
    payload = {
        "provenance": {
            "steps": args.steps,
            "seeds": list(seeds),
            "variants": list(variants),
            "eval_seed": args.seed,
            "train_scenes": manifest["count"],
            "scene_size": manifest["size"],
        },
        "results": results,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(payload, indent=2))
    (out / "ablation.md").write_text(_ablation_markdown(results))
    print(_ablation_markdown(results))
    return 0


def _cmd_report(args) -> int:
    import csv

    run = Path(args.run)
    losses = run / "losses.csv"
    lines = [f"# Run report: {run}", ""]
    if losses.exists():
        with losses.open() as fh:
            rows = list(csv.DictReader(fh))
        if rows:
            tail = rows[-min(len(rows), 100):]
            avg = {k: sum(float(r[k]) for r in tail) / len(tail)
                   for k in ("ce", "style", "align", "tex", "total")}
            lines.append(f"Steps logged: {len(rows)} (through step {rows[-1]['step']})")
            lines.append("")
            lines.append("Last-100-step loss means: " +
                         ", ".join(f"{k} {v:.4f}" for k, v in avg.items()))
            lines.append("")
            _plot_losses(rows, run / "loss_curves.png")
            lines.append("![loss curves](loss_curves.png)")
            lines.append("")
    eval_report = run / "eval" / "report.json"
    if eval_report.exists():
        payload = json.loads(eval_report.read_text())
        clean = payload.get("clean", {})
        lines.append(f"Clean mIoU {clean.get('miou', float('nan')):.4f}; "
                     f"mean corrupted mIoU "
                     f"{payload.get('mean_corrupted_miou', float('nan')):.4f}")
        lines.append("")
    text = "\n".join(lines)
    (run / "run_report.md").write_text(text)
    print(text)
    return 0


def _plot_losses(rows, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("ce", "style", "align", "tex", "total"):
        ax.plot(steps, [float(r[key]) for r in rows], label=key, linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="styleseg",
        description="Style-expansion training for robust semantic segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize scene datasets")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--val", type=int, default=200)
    p.add_argument("--unlabeled", type=int, default=512)
    p.add_argument("--unseen", type=int, default=200,
                   help="scenes per unseen domain (three domains)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain-texture", help="pretrain the texture encoder")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--min-accuracy", type=float, default=0.9)
    p.add_argument("--widths", default=None,
                   help="comma-separated stage widths, must match the "
                        "segmentation encoder (default 32,64,128,256)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_pretrain_texture)

    p = sub.add_parser("train", help="train a segmentation network")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data", help="dataset root (overrides config)")
    p.add_argument("--out", help="run directory (overrides config)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--variant", choices=sorted(VARIANT_ORDER),
                   help="apply a named ablation variant")
    p.add_argument("--texture-encoder", help="pretrained texture encoder checkpoint")
    p.add_argument("--resume", help="resume from a saved train state")
    p.add_argument("--force", action="store_true", help="allow a non-empty run dir")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--splits", default="val",
                   help="comma-separated; first split gets the corruption sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for report.json/report.md")
    p.add_argument("--no-corruptions", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation study")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--texture-encoder", required=True)
    p.add_argument("--variants", default=",".join(VARIANT_ORDER))
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0, help="evaluation corruption seed")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
