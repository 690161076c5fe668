"""codeclab command line."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .codecs import CODEC_NAMES, decode, encode, load_artifact, read_png, save_artifact, write_png


def _codec_id(s: str) -> int:
    if s in CODEC_NAMES:
        return CODEC_NAMES.index(s)
    try:
        return int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown codec {s!r}; choose from {', '.join(CODEC_NAMES)}") from None


def cmd_compress(args):
    art = encode(read_png(args.input), args.codec, args.level)
    out = args.out or str(Path(args.input).with_suffix(".cga"))
    save_artifact(art, out)
    print(f"{out}\t{art.bit_count} bits\t{art.bpp:.4f} bpp")


def cmd_decompress(args):
    img = decode(load_artifact(args.input))
    out = args.out or str(Path(args.input).with_suffix(".png"))
    write_png(img, out)
    print(out)


def cmd_gen_corpus(args):
    from .tasks import gen_synth_corpus, export_corpus
    out = Path(args.out or "corpus")
    corpus = gen_synth_corpus(args.seed, args.count)
    export_corpus(corpus, out)
    # distillation pairs: every condition for each train-split image
    art_dir = out / "artifacts"
    art_dir.mkdir(exist_ok=True)
    entries = []
    for i in corpus.indices("train"):
        name = f"img_{i:05d}.png"
        for c in range(len(CODEC_NAMES)):
            for lv in range(args.levels):
                art = f"artifacts/img_{i:05d}_{CODEC_NAMES[c]}_{lv}.cga"
                save_artifact(encode(corpus.images[i], c, lv), out / art)
                entries.append({"image_path": name, "codec_id": c, "level": lv, "artifact_path": art})
    (out / "manifest.json").write_text(json.dumps(entries, indent=1) + "\n")
    print(f"{len(corpus)} images, {len(entries)} training pairs -> {out}")


def cmd_train_adaptor(args):
    from .distill import TrainConfig, distill_set_from_manifest, train_adaptor, write_train_log
    from .encoder import EncoderConfig, init_weights, load_checkpoint, save_checkpoint
    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        cfg["seed"] = args.seed
    for k in ("steps", "trainable", "lr", "batch_size"):
        if getattr(args, k) is not None:
            cfg[k] = getattr(args, k)
    tc = TrainConfig(**cfg)
    teacher = load_checkpoint(args.ve) if args.ve else init_weights(EncoderConfig(), args.encoder_seed)
    data = distill_set_from_manifest(args.manifest, teacher.config.patch)
    res = train_adaptor(teacher, data, tc, log=print)
    out = Path(args.out or "train_out")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(teacher, out / "ve.cvew")
    save_checkpoint(res.weights, out / "cve.cvew")
    write_train_log(res.records, out / "train_log.csv")
    drop = 1 - res.final_heldout / res.initial_heldout
    print(f"held-out loss {res.initial_heldout:.6f} -> {res.final_heldout:.6f} ({100 * drop:.1f}% drop)")


def cmd_run(args):
    from .harness import RunConfig, run_benchmark
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if args.no_figures:
        cfg.figures = False
    run_benchmark(cfg, log=print)
    print(Path(cfg.out_dir, "results.csv").read_text(), end="")


def cmd_bd(args):
    from .analysis import bd_metric, read_curve_csv
    v = bd_metric(read_curve_csv(args.anchor), read_curve_csv(args.test))
    print(f"{v:.6f}")


def cmd_gap(args):
    from .harness import gap_report_cmd
    reports = gap_report_cmd(args.uncompressed, args.compressed, args.finetuned, args.out)
    print("task,performance_gap,information_gap,generalization_gap")
    for task, g in reports.items():
        print(f"{task},{g.performance_gap:.2f},{g.information_gap:.2f},{g.generalization_gap:.2f}")


def cmd_plot(args):
    from .analysis import read_curve_csv
    from .harness import curves_from_results, emit_plot, read_results
    if args.results:
        curves = curves_from_results(read_results(args.results), args.task)
    else:
        curves = [read_curve_csv(p, Path(p).stem) for p in args.curves]
    out = emit_plot(curves, args.out or "plot.svg", title=args.title or "", ylabel=args.ylabel)
    print(out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="codeclab", description="Codec-robustness benchmark for toy vision encoders.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output path")

    sp = sub.add_parser("compress", help="PNG -> .cga")
    sp.add_argument("input")
    sp.add_argument("--codec", type=_codec_id, default=0)
    sp.add_argument("--level", type=int, default=0)
    common(sp, config=False)
    sp.set_defaults(func=cmd_compress)

    sp = sub.add_parser("decompress", help=".cga -> PNG")
    sp.add_argument("input")
    common(sp, config=False)
    sp.set_defaults(func=cmd_decompress)

    sp = sub.add_parser("gen-corpus", help="synthetic corpus + distillation manifest")
    sp.add_argument("--count", type=int, default=1024)
    sp.add_argument("--levels", type=int, default=4, choices=range(1, 5))
    common(sp, config=False)
    sp.set_defaults(func=cmd_gen_corpus, seed=1)

    sp = sub.add_parser("train-adaptor", help="distill the conditioned encoder")
    sp.add_argument("manifest", help="corpus manifest JSON")
    sp.add_argument("--ve", help="teacher checkpoint (default: toy encoder from --encoder-seed)")
    sp.add_argument("--encoder-seed", type=int, default=7)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--trainable", choices=("adaptor", "full"))
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int)
    common(sp)
    sp.set_defaults(func=cmd_train_adaptor)

    sp = sub.add_parser("run", help="full benchmark grid")
    sp.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("bd", help="BD metric between two curve CSVs (bpp,metric)")
    sp.add_argument("anchor")
    sp.add_argument("test")
    sp.set_defaults(func=cmd_bd)

    sp = sub.add_parser("gap", help="gap decomposition from three task,value CSVs")
    sp.add_argument("uncompressed")
    sp.add_argument("compressed")
    sp.add_argument("finetuned")
    sp.add_argument("--out", help="GapReport JSON")
    sp.set_defaults(func=cmd_gap)

    sp = sub.add_parser("plot", help="SVG rate-metric plot")
    sp.add_argument("curves", nargs="*", help="curve CSVs (bpp,metric)")
    sp.add_argument("--results", help="results.csv from run")
    sp.add_argument("--task", default="coarse-class")
    sp.add_argument("--title")
    sp.add_argument("--ylabel", default="metric")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "plot" and not args.curves and not args.results:
        print("codeclab plot: give curve CSVs or --results", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"codeclab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
