"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError
from .config import RunConfig, iter_keys, rescale_schedule
from .events import EventFormatError, EventValidationError, SynthConfig, synthesize_dataset
from .training import NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("evagcn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def config_help():
    lines = ["config keys (override with --set key=value; defaults shown):"]
    lines += [f"  {k} = {json.dumps(v)}" for k, v in iter_keys()]
    return "\n".join(lines)


def _global_options(suppress):
    # subcommands repeat the global flags; SUPPRESS keeps them from clobbering values given earlier
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")

    def d(value):
        return argparse.SUPPRESS if suppress else value

    g.add_argument("--config", default=d(None), help="JSON (or YAML) run config file")
    g.add_argument("--seed", type=int, default=d(None),
                   help="seed for training (train.seed) and dataset synthesis")
    g.add_argument("--out", default=d("runs"), help="output directory (default: runs)")
    g.add_argument("--cache", default=d(None), help="preprocessing cache directory")
    g.add_argument("--set", action="append", default=d([]), metavar="KEY=VALUE",
                   help="config override, repeatable (e.g. --set train.epochs=30)")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser():
    common = _global_options(suppress=True)
    p = _Parser(prog="evagcn", parents=[_global_options(suppress=False)], epilog=config_help(),
                formatter_class=argparse.RawDescriptionHelpFormatter,
                description="Point-voxel absorbing graph networks for event-stream classification.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        return sub.add_parser(name, parents=[common], help=help, description=help,
                              epilog=config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)

    s = add("synth", "generate the synthetic moving-disk dataset and its manifest")
    s.add_argument("--num-classes", type=int, default=4)
    s.add_argument("--samples-per-class", type=int, default=100)
    s.add_argument("--format", choices=("binary", "csv"), default="binary")

    s = add("preprocess", "build and cache graphs for every sample of the manifest")
    s.add_argument("--manifest")

    s = add("train", "train a model; writes checkpoint.agck, metrics.csv and training_curves.png")
    s.add_argument("--manifest")
    s.add_argument("--epochs", type=int, help="epoch budget (decay milestones rescale unless set)")
    s.add_argument("--branch", choices=("dual", "point_only", "voxel_only"))

    s = add("eval", "evaluate a checkpoint; writes confusion.csv/.png and per-sample predictions")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest")
    s.add_argument("--split", default="test", choices=("train", "test", "all"))

    s = add("ablate", "sweep one ablation axis; writes ablation_<axis>.csv/.png")
    s.add_argument("--axis", required=True)
    s.add_argument("--values", help="JSON list overriding the swept values")
    s.add_argument("--seeds", type=int, nargs="+", default=None, help="training seeds (default: --seed or 0)")
    s.add_argument("--manifest")

    s = add("gradcheck", "finite-difference check of the analytic gradients on random instances")
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.add_argument("--epsilon", type=float, default=1e-5)
    s.add_argument("--corrupt", action="store_true", help="inflate one alpha gradient (must fail)")

    s = add("export-embeddings", "write eval-mode absorbing-node vectors as CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest")
    s.add_argument("--split", default="test", choices=("train", "test", "all"))
    return p


def load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = list(args.set)
    keys = {o.split("=", 1)[0].strip() for o in overrides}
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "manifest", None):
        overrides.append(f"data.manifest={json.dumps(args.manifest)}")
    if getattr(args, "branch", None):
        overrides.append(f'train.branch_mode="{args.branch}"')
    if getattr(args, "epochs", None):
        overrides.append(f"train.epochs={args.epochs}")
        if "train.lr_decay_epochs" not in keys:
            sched = rescale_schedule(cfg.train.lr_decay_epochs, cfg.train.epochs, args.epochs)
            overrides.append(f"train.lr_decay_epochs={json.dumps(sched)}")
    # validate the schedule only once everything is applied
    d = cfg.to_dict()
    for item in overrides:
        key, raw = item.split("=", 1) if "=" in item else (item, None)
        if raw is None:
            raise UsageError(f"override {item!r} is not key=value")
        parts = key.strip().split(".")
        if len(parts) != 2 or parts[0] not in d or parts[1] not in d[parts[0]]:
            raise UsageError(f"unknown config key {key!r}")
        try:
            d[parts[0]][parts[1]] = json.loads(raw)
        except json.JSONDecodeError:
            d[parts[0]][parts[1]] = raw
    return RunConfig.from_dict(d)


def cmd_synth(args, cfg):
    out = Path(args.out)
    seed = args.seed if args.seed is not None else 0
    m = synthesize_dataset(out, args.num_classes, args.samples_per_class, seed=seed,
                           config=SynthConfig(num_classes=args.num_classes), format=args.format)
    n_train, n_test = len(m.split("train")), len(m.split("test"))
    print(f"wrote {len(m.samples)} samples ({n_train} train / {n_test} test) to {out / 'manifest.json'}")
    return EXIT_OK


def cmd_preprocess(args, cfg):
    from .events import DatasetManifest
    from .pipeline import prepare_split
    m = DatasetManifest.load_file(cfg.data.manifest)
    cache = args.cache or str(Path(args.out) / "cache")
    _, stats = prepare_split(m, m.split("all"), cfg, cache, cfg.train.branch_mode)
    print(f"preprocess: {len(m.samples)} samples, {stats['hits']} cached, {stats['misses']} built, "
          f"{stats['seconds']:.2f}s (cache {cache})")
    return EXIT_OK


def cmd_train(args, cfg):
    from .experiment import load_data, run_training
    from .plotting import plot_training
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    data = load_data(cfg, args.cache)
    stats = data[3]
    print(f"preprocess: {stats['hits']} cached, {stats['misses']} built, {stats['seconds']:.2f}s",
          flush=True)
    t0 = time.perf_counter()

    def progress(row):
        print(f"epoch {row['epoch']:3d}  loss {row['train_loss']:.4f}  train {row['train_top1']:.3f}  "
              f"test {row['test_top1']:.3f}  lr {row['lr']:.2g}", flush=True)

    state, _ = run_training(cfg, out, data=data, progress=progress)
    plot_training(state.history, out / "training_curves.png")
    final = state.history[-1]
    print(f"final test top-1: {final['test_top1']:.4f} ({time.perf_counter() - t0:.1f}s); "
          f"checkpoint {out / 'checkpoint.agck'}")
    return EXIT_OK


def _config_for_checkpoint(args, cfg):
    # explicit --config/--set means "check against this config"; otherwise trust the checkpoint
    if args.config or args.set:
        return cfg
    return None


def cmd_eval(args, cfg):
    from .experiment import evaluate_checkpoint
    from .plotting import plot_confusion
    from .training import confusion_csv
    explicit = _config_for_checkpoint(args, cfg)
    if explicit is None and args.manifest:
        from .experiment import restore
        ck_cfg = restore(args.checkpoint)[0]
        explicit = ck_cfg.with_overrides([f"data.manifest={json.dumps(args.manifest)}"])
    metrics, samples, _ = evaluate_checkpoint(args.checkpoint, args.split, explicit, args.cache)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    confusion_csv(metrics["confusion"], out / "confusion.csv")
    plot_confusion(metrics["confusion"], out / "confusion.png")
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_id,label,pred\n")
        for r in metrics["samples"]:
            fh.write(f"{r['id']},{r['label']},{r['pred']}\n")
    top5 = "n/a" if metrics["top5"] is None else f"{metrics['top5']:.4f}"
    print(f"split {args.split}: n={len(samples)} top-1 {metrics['top1']:.4f} top-5 {top5}")
    return EXIT_OK


def cmd_ablate(args, cfg):
    from .experiment import ABLATION_AXES, ablation, write_ablation_csv
    from .plotting import plot_ablation
    if args.axis not in ABLATION_AXES:
        raise UsageError(f"unknown axis {args.axis!r}; choose from {', '.join(sorted(ABLATION_AXES))}")
    values = json.loads(args.values) if args.values else None
    seeds = args.seeds or [args.seed if args.seed is not None else cfg.train.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ablation(cfg, args.axis, out / "runs", args.cache, values, seeds,
                    progress=lambda s, seed, t: print(f"{args.axis}={s} seed={seed} top-1 {t:.4f}", flush=True))
    write_ablation_csv(rows, out / f"ablation_{args.axis}.csv")
    plot_ablation(rows, out / f"ablation_{args.axis}.png")
    for r in rows:
        print(f"{r['setting']}: {r['top1_mean']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_battery
    seed = args.seed if args.seed is not None else 0
    t0 = time.perf_counter()
    failed = 0
    worst = 0.0
    for i, n, report in run_battery(seed, args.count, args.tolerance, args.epsilon, args.corrupt):
        worst = max(worst, report.max_rel_error)
        status = "pass" if report.passed else "FAIL"
        print(f"instance {i:3d}: {n:4d} params  max_rel {report.max_rel_error:.3e}  {status}")
        if not report.passed:
            failed += 1
            for line in report.lines():
                print("    " + line)
    print(f"gradcheck: {args.count - failed}/{args.count} passed, worst {worst:.3e}, "
          f"tolerance {args.tolerance:g}, {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def cmd_export_embeddings(args, cfg):
    from .experiment import evaluate_checkpoint, restore
    from .training import export_embeddings
    ck_cfg = restore(args.checkpoint)[0]
    explicit = _config_for_checkpoint(args, cfg)
    if explicit is None and args.manifest:
        explicit = ck_cfg.with_overrides([f"data.manifest={json.dumps(args.manifest)}"])
    use = explicit or ck_cfg
    _, samples, state = evaluate_checkpoint(args.checkpoint, args.split, use, args.cache)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "embeddings.csv"
    export_embeddings(state.model, samples, path)
    print(f"wrote {len(samples)} embeddings to {path}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval,
    "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "export-embeddings": cmd_export_embeddings,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"evagcn: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"evagcn: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EventFormatError, EventValidationError, CheckpointError, FileNotFoundError,
            KeyError, ValueError) as e:
        print(f"evagcn: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
