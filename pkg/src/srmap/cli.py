"""Command line driver.

Subcommands: ``run``, ``lrp``, ``saliency``, ``eval``, ``train-fixture``
and ``gen-scenes``.  ``--config FILE`` reads ``key = value`` lines (``#``
comments); keys are the long flag names with dashes or underscores, and
flags given on the command line win over the file.

Exit codes: 0 success, 2 invalid arguments, 3 I/O, 4 numeric failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import casal, fixture, metrics, netrt, pipeline
from .errors import InvalidArgumentError, NumericFailure, SchemaError
from .tensor import read_image, write_image, write_mask_png, write_raw

log = logging.getLogger("srmap")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

# flag dest -> (type, default); None defaults mean "required by some commands"
OPTIONS = {
    "manifest": (str, None),
    "weights": (str, None),
    "output_dir": (str, "out"),
    "epsilon": (float, pipeline.lrp.DEFAULT_EPSILON),
    "start": (str, "probability"),
    "patch_radius": (int, 3),
    "c": (float, 3.0),
    "k": (int, 64),
    "scales": (str, "1,0.5,0.25"),
    "attention_threshold": (float, 0.8),
    "working_width": (int, 250),
    "search": (str, "fast"),
    "normalize_before_context": (int, 1),
    "canny_sigma": (float, 1.4),
    "canny_low": (float, 0.1),
    "canny_high": (float, 0.2),
    "ssim_window": (int, 11),
    "ssim_sigma": (float, 1.5),
    "figures": (int, 1),
    "jobs": (int, 1),
    "corpus": (str, None),
    "output": (str, None),
    "seed": (int, 0),
    "samples_per_class": (int, 500),
    "classes": (str, "square,disc"),
    "epochs": (int, 40),
    "batch_size": (int, 25),
    "learning_rate": (float, 0.05),
    "target_accuracy": (float, 0.95),
    "count": (int, 50),
}


class UsageError(InvalidArgumentError):
    pass


def read_config(path):
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in OPTIONS:
            raise SchemaError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(args):
    """Merge defaults < config file < command line into ``args``."""
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    for key, (typ, default) in OPTIONS.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) is not None:
            continue
        if key in file_values:
            try:
                setattr(args, key, typ(file_values[key]))
            except ValueError:
                raise SchemaError(f"config key {key}: cannot parse {file_values[key]!r}") from None
        else:
            setattr(args, key, default)
    return args


def _add(p, *names):
    for name in names:
        typ = OPTIONS[name][0]
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="srmap", description="Salient relevance maps for small CNNs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="key = value file; flags override it")
        return p

    lrp_opts = ("manifest", "weights", "epsilon", "start")
    sal_opts = ("patch_radius", "c", "k", "scales", "attention_threshold", "working_width", "search",
                "normalize_before_context")
    canny_opts = ("canny_sigma", "canny_low", "canny_high")

    p = command("run", "full pipeline: relevance, SR map, edges, overlay")
    p.add_argument("inputs", nargs="+")
    _add(p, *lrp_opts, *sal_opts, *canny_opts, "output_dir", "figures")

    p = command("lrp", "relevance map only")
    p.add_argument("inputs", nargs="+")
    _add(p, *lrp_opts, "output_dir")

    p = command("saliency", "context-aware saliency of an image")
    p.add_argument("inputs", nargs="+")
    _add(p, *sal_opts, "output_dir")

    p = command("eval", "SSIM-ratio evaluation over an image directory")
    _add(p, *lrp_opts, *sal_opts, "corpus", "output", "ssim_window", "ssim_sigma", "jobs", "figures")

    p = command("train-fixture", "train the synthetic shapes CNN")
    _add(p, "seed", "samples_per_class", "classes", "epochs", "batch_size", "learning_rate",
         "target_accuracy", "output_dir")

    p = command("gen-scenes", "write synthetic shape scenes as PNG")
    _add(p, "count", "seed", "classes", "output_dir")
    return parser


def saliency_config(args):
    try:
        scales = tuple(float(s) for s in str(args.scales).split(",") if s.strip())
    except ValueError:
        raise UsageError(f"cannot parse scales {args.scales!r}") from None
    return casal.SaliencyConfig(
        patch_radius=args.patch_radius, c=args.c, K=args.k, scales=scales,
        attention_threshold=args.attention_threshold, working_width=args.working_width,
        method=args.search, normalize_before_context=bool(args.normalize_before_context))


def pipeline_config(args):
    if args.start not in ("probability", "logit"):
        raise UsageError(f"--start must be 'probability' or 'logit', got {args.start!r}")
    if args.epsilon < 0:
        raise UsageError("--epsilon must be non-negative")
    cfg = pipeline.PipelineConfig(manifest=args.manifest, weights=args.weights, epsilon=args.epsilon,
                                  start=args.start)
    for name in ("output_dir", "canny_sigma", "canny_low", "canny_high", "jobs"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if hasattr(args, "figures"):
        cfg.figures = bool(args.figures)
    if hasattr(args, "patch_radius"):
        cfg.saliency = saliency_config(args)
    if hasattr(args, "ssim_window"):
        cfg.ssim = metrics.SsimConfig(window=args.ssim_window, sigma=args.ssim_sigma)
    return cfg


def _load(args):
    if not args.manifest or not args.weights:
        raise UsageError("--manifest and --weights are required")
    with pipeline.stage("netrt/load_network"):
        return netrt.load_network(args.manifest, args.weights)


def _read_input(path):
    with pipeline.stage(f"io/read {path}"):
        return read_image(path)


def cmd_run(args):
    cfg = pipeline_config(args)
    net = _load(args)
    for src in args.inputs:
        img = _read_input(src)
        report = pipeline.run_pipeline(net, img, cfg)
        paths = pipeline.write_report(report, cfg, cfg.output_dir, Path(src).stem, source=src)
        print(f"{src}: class {report.class_index} ({report.label}) p={report.probability:.6g} "
              f"max residual {max(report.residuals):.3g} -> {len(paths)} files in {cfg.output_dir}")
    return EXIT_OK


def cmd_lrp(args):
    cfg = pipeline_config(args)
    net = _load(args)
    for src in args.inputs:
        img = pipeline.match_channels(_read_input(src), net)
        report = pipeline.relevance_step(net, img, cfg)
        pipeline.write_report(report, cfg, cfg.output_dir, Path(src).stem, source=src)
        print(f"{src}: class {report.class_index} ({report.label}) p={report.probability:.6g} "
              f"layer sums {' '.join(f'{s:.6g}' for s in report.state.layer_sums[::-1])}")
    return EXIT_OK


def cmd_saliency(args):
    scfg = saliency_config(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for src in args.inputs:
        img = _read_input(src)
        with pipeline.stage("casal/context_aware_saliency"):
            smap = casal.context_aware_saliency(img, scfg)
        stem = Path(src).stem
        write_raw(out / f"{stem}.saliency.raw", smap.values)
        write_image(out / f"{stem}.saliency.png", smap.values)
        write_mask_png(out / f"{stem}.attended.png", smap.attended_mask)
        print(f"{src}: {smap.meta.get('attended_pixels', 0)} attended pixels at working size "
              f"{smap.meta['working_size']}")
    return EXIT_OK


def cmd_eval(args):
    cfg = pipeline_config(args)
    if not args.corpus:
        raise UsageError("--corpus is required")
    net = _load(args)
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus}")
    files = pipeline.corpus_files(corpus)
    records, summary = pipeline.evaluate_corpus(net, files, cfg)
    output = Path(args.output or "eval.csv")
    output.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(output, records, summary)
    if cfg.figures:
        from .report import render_eval_figure

        render_eval_figure(output.with_suffix(".png"), records, summary)
    mean = "n/a" if summary.mean_ratio is None else f"{summary.mean_ratio:.4f}"
    print(f"{summary.count} images, {summary.defined} defined ratios, mean SSIM2/SSIM1 = {mean} -> {output}")
    return EXIT_OK


def _classes(args):
    return tuple(s.strip() for s in str(args.classes).split(",") if s.strip())


def cmd_train_fixture(args):
    spec = fixture.FixtureSpec(
        seed=args.seed, samples_per_class=args.samples_per_class, classes=_classes(args),
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.learning_rate,
        target_accuracy=args.target_accuracy)
    with pipeline.stage("fixture/train"):
        result = fixture.train_fixture(spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    netrt.save_network(result.network, out / "fixture.manifest", out / "fixture.weights")
    print(f"train accuracy {result.accuracy:.4f} after {result.epochs} epochs -> "
          f"{out / 'fixture.manifest'}, {out / 'fixture.weights'}")
    return EXIT_OK


def cmd_gen_scenes(args):
    classes = _classes(args)
    if len(classes) < 1 or set(classes) - set(fixture.SHAPES):
        raise UsageError(f"classes must be drawn from {fixture.SHAPES}")
    paths = fixture.write_scenes(args.output_dir, args.count, seed=args.seed, classes=classes)
    print(f"wrote {len(paths)} scenes to {args.output_dir}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "lrp": cmd_lrp,
    "saliency": cmd_saliency,
    "eval": cmd_eval,
    "train-fixture": cmd_train_fixture,
    "gen-scenes": cmd_gen_scenes,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen-scenes" and args.seed is None:
        args.seed = 1000
    try:
        resolve(args)
        return COMMANDS[args.command](args)
    except (InvalidArgumentError, SchemaError) as exc:
        code = EXIT_ARGS
        err = exc
    except NumericFailure as exc:
        code = EXIT_NUMERIC
        err = exc
    except OSError as exc:
        code = EXIT_IO
        err = exc
    except (ValueError, ArithmeticError) as exc:
        code = EXIT_NUMERIC if isinstance(exc, ArithmeticError) else EXIT_ARGS
        err = exc
    where = getattr(err, "stage", args.command)
    print(f"srmap: error [{where}]: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
