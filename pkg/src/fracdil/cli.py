"""Command-line driver: ``fracdil <subcommand> [--seed N] [--config FILE] [--out DIR]``."""
import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import weights_io
from .bench import bench, bench_graph
from .data import SyntheticDataset
from .decompose import decompose_graph
from .graph import ModelGraph, toy_graph
from .gsl import apply_frozen_scales, collect_scale_stats, freeze_scales, stats_from_csv, stats_to_csv
from .pipeline import PipelineConfig, StageError, _dataset, load_model, run_pipeline, save_model
from .train import evaluate, train
from .transfer import transfer_weights


def _config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _train_hp(cfg, epochs=None):
    hp = dataclasses.replace(cfg.train, seed=cfg.seeds()["shuffle"])
    if cfg.freeze_predictor:
        hp = dataclasses.replace(hp, predictor_lr_mult=0.0)
    if epochs is not None:
        hp = dataclasses.replace(hp, epochs=epochs)
    return hp


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _with_frozen_scales(graph, stats_path):
    if stats_path:
        apply_frozen_scales(graph, freeze_scales(stats_from_csv(Path(stats_path).read_text())))
    return graph


def cmd_gen_data(args, cfg, out):
    seeds = cfg.seeds()
    _dataset(cfg, cfg.data.n, seeds["train_data"]).save(out / "train.npz")
    _dataset(cfg, cfg.n_test, seeds["test_data"]).save(out / "test.npz")


def cmd_train_gsl(args, cfg, out):
    data = (SyntheticDataset.load(args.data) if args.data
            else _dataset(cfg, cfg.data.n, cfg.seeds()["train_data"]))
    g0 = toy_graph("gsl", n_classes=cfg.data.n_patterns, gsl_layers=cfg.gsl_layers,
                   seed=cfg.seeds()["init"])
    g, res = train(g0, data.images, data.labels, _train_hp(cfg))
    save_model(g, out, "gsl")
    _dump(out / "train_log.json", {"loss_curve": res.loss_curve, "initial_loss": res.initial_loss})


def cmd_inspect_scales(args, cfg, out):
    g = load_model(args.graph, args.weights)
    data = SyntheticDataset.load(args.data)
    text = stats_to_csv(collect_scale_stats(g, data.images, cfg.stats_samples))
    (out / "scale_stats.csv").write_text(text)
    sys.stdout.write(text)


def cmd_decompose(args, cfg, out):
    g = _with_frozen_scales(ModelGraph.load(args.graph), args.stats)
    decompose_graph(g, cfg.threshold).save(out / "fd_graph.json")


def cmd_transfer(args, cfg, out):
    g = _with_frozen_scales(load_model(args.graph, args.weights), args.stats)
    fd = ModelGraph.load(args.fd_graph)
    weights, wmap = transfer_weights(g, fd)
    weights_io.save(out / "fd_init.podw", weights)
    (out / "weight_map.json").write_text(wmap.to_json() + "\n")


def cmd_finetune(args, cfg, out):
    g = load_model(args.graph, args.weights)
    data = SyntheticDataset.load(args.data)
    epochs = cfg.train.epochs if cfg.finetune_epochs is None else cfg.finetune_epochs
    tuned, res = train(g, data.images, data.labels, _train_hp(cfg, epochs))
    weights_io.save(out / "fd_wt.podw", tuned.weights)
    _dump(out / "finetune_log.json", {"loss_curve": res.loss_curve, "initial_loss": res.initial_loss})


def cmd_eval(args, cfg, out):
    g = load_model(args.graph, args.weights)
    data = SyntheticDataset.load(args.data)
    result = evaluate(g, data.images, data.labels, args.mode)
    _dump(out / "eval.json", result)
    print(json.dumps(result, sort_keys=True))


def cmd_bench(args, cfg, out):
    g = _with_frozen_scales(load_model(args.graph, args.weights), args.stats) if args.graph \
        else bench_graph()
    shape = tuple(int(v) for v in args.input_shape.split(","))
    report = bench(g, shape, reps=args.reps, seed=cfg.seed).to_dict()
    _dump(out / "bench.json", report)
    print(json.dumps(report, sort_keys=True))


def cmd_pipeline(args, cfg, out):
    report = run_pipeline(cfg, out)
    print(json.dumps(report["accuracy"], sort_keys=True))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-gsl": cmd_train_gsl,
    "inspect-scales": cmd_inspect_scales,
    "decompose": cmd_decompose,
    "transfer": cmd_transfer,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "pipeline": cmd_pipeline,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--config", default=None, help="pipeline config JSON")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fracdil", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("inspect-scales", "transfer", "finetune", "eval"):
            p.add_argument("--graph", required=True)
            p.add_argument("--weights", required=True)
        if name in ("inspect-scales", "finetune", "eval"):
            p.add_argument("--data", required=True, help="dataset .npz from gen-data")
        if name == "train-gsl":
            p.add_argument("--data", default=None, help="dataset .npz (generated if omitted)")
        if name == "decompose":
            p.add_argument("--graph", required=True)
        if name in ("decompose", "transfer", "bench"):
            p.add_argument("--stats", default=None, help="scale stats CSV to freeze scales from")
        if name == "transfer":
            p.add_argument("--fd-graph", required=True)
        if name == "eval":
            p.add_argument("--mode", choices=("predict", "frozen"), default="predict")
        if name == "bench":
            p.add_argument("--graph", default=None)
            p.add_argument("--weights", default=None)
            p.add_argument("--input-shape", default="1,16,64,64")
            p.add_argument("--reps", type=int, default=30)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        cfg = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except StageError as e:
        print(f"error: stage {e.stage}: {e.cause}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"error: stage {stage}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
