"""End-to-end run: train GSL -> freeze scales -> decompose -> transfer -> finetune.

Every artifact lands in one output directory. A failing stage raises
:class:`StageError` naming the stage.
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import weights_io
from .data import SyntheticConfig, gen_multiscale_dataset
from .decompose import DEFAULT_THRESHOLD, count_flops, decompose_graph
from .density import compare_density, layer_density
from .graph import ModelGraph, plain_baseline, toy_graph
from .gsl import apply_frozen_scales, collect_scale_stats, freeze_scales, stats_to_csv
from .train import TrainConfig, evaluate, train
from .transfer import transfer_weights, verify_transfer

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    seed: int = 0
    data: SyntheticConfig = field(default_factory=SyntheticConfig)  # data.n is the train size
    n_test: int = 512
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune_epochs: Optional[int] = None  # None: same as train.epochs
    stats_samples: int = 512
    threshold: float = DEFAULT_THRESHOLD
    gsl_layers: Optional[list] = None
    freeze_predictor: bool = False
    probe_samples: int = 16

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "data" in d:
            d["data"] = SyntheticConfig(**d["data"])
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def seeds(self):
        """Independent seeds for train data, test data, init and shuffling."""
        s = np.random.SeedSequence(self.seed).generate_state(4)
        return dict(zip(("train_data", "test_data", "init", "shuffle"), (int(v) for v in s)))


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def save_model(graph, out_dir, stem):
    out_dir = Path(out_dir)
    graph.save(out_dir / f"{stem}_graph.json")
    weights_io.save(out_dir / f"{stem}.podw", graph.weights)


def load_model(graph_path, weights_path):
    g = ModelGraph.load(graph_path)
    g.weights = weights_io.load(weights_path)
    g.check_weights()
    return g


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dataset(cfg, n, seed):
    return gen_multiscale_dataset(dataclasses.replace(cfg.data, n=n), seed)


def run_pipeline(config, out_dir):
    """Run every stage for ``config``; returns the evaluation report dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=1):
        return _run(config, out)


def _run(cfg, out):
    seeds = cfg.seeds()
    _write_json(out / "config.json", cfg.to_dict())
    hp = dataclasses.replace(cfg.train, seed=seeds["shuffle"])
    if cfg.freeze_predictor:
        hp = dataclasses.replace(hp, predictor_lr_mult=0.0)
    ft_hp = dataclasses.replace(hp, epochs=cfg.train.epochs if cfg.finetune_epochs is None
                                else cfg.finetune_epochs)

    with _Stage("gen-data"):
        train_set = _dataset(cfg, cfg.data.n, seeds["train_data"])
        test_set = _dataset(cfg, cfg.n_test, seeds["test_data"])
        train_set.save(out / "train.npz")
        test_set.save(out / "test.npz")

    with _Stage("train-gsl"):
        g0 = toy_graph("gsl", n_classes=cfg.data.n_patterns, gsl_layers=cfg.gsl_layers,
                       seed=seeds["init"])
        gsl, gsl_res = train(g0, train_set.images, train_set.labels, hp)

    with _Stage("inspect-scales"):
        stats = collect_scale_stats(gsl, test_set.images, cfg.stats_samples)
        (out / "scale_stats.csv").write_text(stats_to_csv(stats))

    with _Stage("freeze"):
        apply_frozen_scales(gsl, freeze_scales(stats))
        save_model(gsl, out, "gsl")

    with _Stage("decompose"):
        fd = decompose_graph(gsl, cfg.threshold)
        fd.save(out / "fd_graph.json")

    with _Stage("transfer"):
        fd.weights, wmap = transfer_weights(gsl, fd)
        weights_io.save(out / "fd_init.podw", fd.weights)
        (out / "weight_map.json").write_text(wmap.to_json() + "\n")
        probe = test_set.images[:cfg.probe_samples].astype(np.float64)
        transfer_report = verify_transfer(gsl, fd, fd.weights, probe)
        _write_json(out / "transfer_report.json", transfer_report)

    with _Stage("finetune"):
        fd_init = fd
        fd_wt, fd_res = train(fd_init, train_set.images, train_set.labels, ft_hp)
        weights_io.save(out / "fd_wt.podw", fd_wt.weights)

    with _Stage("train-plain"):
        p0 = plain_baseline(g0)
        p0.weights = {k: v.copy() for k, v in g0.weights.items() if ".pred_" not in k}
        plain, plain_res = train(p0, train_set.images, train_set.labels, hp)
        save_model(plain, out, "plain")

    with _Stage("eval"):
        report = _evaluate_all(cfg, out, gsl, fd_init, fd_wt, plain, train_set, test_set, stats,
                               transfer_report, {"gsl": gsl_res, "fd_wt": fd_res,
                                                 "plain": plain_res})
        _write_json(out / "report.json", report)
    return report


def _evaluate_all(cfg, out, gsl, fd_init, fd_wt, plain, train_set, test_set, stats,
                  transfer_report, curves):
    hw = (cfg.data.size, cfg.data.size)
    models = {"gsl": (gsl, "predict"), "gsl_frozen": (gsl, "frozen"), "fd_init": (fd_init, "predict"),
              "fd_wt": (fd_wt, "predict"), "plain": (plain, "predict")}
    accuracy = {}
    for name, (g, mode) in models.items():
        accuracy[name] = {
            "train": evaluate(g, train_set.images, train_set.labels, mode)["accuracy"],
            "test": evaluate(g, test_set.images, test_set.labels, mode)["accuracy"]}
    density = {}
    for sl, dl in zip(gsl.layers, fd_init.layers):
        if sl.kind == "gsl_conv":
            a, b = layer_density(sl), layer_density(dl)
            (out / f"density_{sl.name}_gsl.csv").write_text(a.to_csv())
            (out / f"density_{sl.name}_fd.csv").write_text(b.to_csv())
            diff, mass = compare_density(a, b)
            density[sl.name] = {"max_abs_diff": diff, "total_mass_diff": mass}
    return {
        "accuracy": accuracy,
        "scales": [dataclasses.asdict(s) for s in stats],
        "relative_std": {s.layer: list(s.relative_std()) for s in stats},
        "flops": {"gsl": count_flops(gsl, hw), "fd": count_flops(fd_init, hw),
                  "plain": count_flops(plain, hw)},
        "loss_curves": {k: r.loss_curve for k, r in curves.items()},
        "initial_loss": {k: r.initial_loss for k, r in curves.items()},
        "transfer_checks": transfer_report,
        "density": density,
    }
