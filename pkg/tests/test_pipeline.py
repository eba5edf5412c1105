import dataclasses
import hashlib
import json

import numpy as np
import pytest

from fracdil import weights_io
from fracdil.bench import BenchReport, VariantTiming, bench, bench_graph
from fracdil.data import SyntheticConfig, SyntheticDataset
from fracdil.graph import ModelGraph, he_init
from fracdil.network import forward
from fracdil.pipeline import PipelineConfig, StageError, load_model, run_pipeline
from fracdil.tensor import softmax_cross_entropy
from fracdil.train import TrainConfig

TINY = PipelineConfig(seed=3, data=SyntheticConfig(n=48), n_test=24, train=TrainConfig(epochs=1),
                      stats_samples=24, probe_samples=4)

ARTIFACTS = ["config.json", "train.npz", "test.npz", "scale_stats.csv", "gsl_graph.json", "gsl.podw",
             "fd_graph.json", "fd_init.podw", "weight_map.json", "transfer_report.json", "fd_wt.podw",
             "plain_graph.json", "plain.podw", "report.json"]


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    return run_pipeline(TINY, a), a, run_pipeline(TINY, b), b


def test_writes_every_artifact(tiny_runs):
    _, out, _, _ = tiny_runs
    for name in ARTIFACTS:
        assert (out / name).is_file(), name
    assert sorted(p.name for p in out.glob("density_*.csv")) == sorted(
        f"density_conv{i}_{v}.csv" for i in (1, 2, 3) for v in ("fd", "gsl"))


def test_artifacts_byte_identical_across_runs(tiny_runs):
    _, a, _, b = tiny_runs
    for p in sorted(a.iterdir()):
        assert _digest(p) == _digest(b / p.name), p.name


def test_saved_models_reload(tiny_runs):
    _, out, _, _ = tiny_runs
    fd = ModelGraph.load(out / "fd_graph.json")
    fd.weights = weights_io.load(out / "fd_wt.podw")
    fd.check_weights()
    gsl = load_model(out / "gsl_graph.json", out / "gsl.podw")
    assert all(l.scale is not None for l in gsl.layers if l.kind == "gsl_conv")


def test_flops_never_increase(tiny_runs):
    report = tiny_runs[0]
    assert report["flops"]["fd"] <= report["flops"]["plain"]


def test_integral_corner_fd_equals_gsl(tmp_path):
    cfg = dataclasses.replace(TINY, freeze_predictor=True, finetune_epochs=0)
    report = run_pipeline(cfg, tmp_path)
    assert all(c["status"] == "pass" for c in report["transfer_checks"])
    gsl = load_model(tmp_path / "gsl_graph.json", tmp_path / "gsl.podw")
    fd = ModelGraph.load(tmp_path / "fd_graph.json")
    fd.weights = weights_io.load(tmp_path / "fd_wt.podw")
    x = SyntheticDataset.load(tmp_path / "test.npz").images
    assert np.max(np.abs(forward(gsl, x)[0] - forward(fd, x)[0])) <= 1e-5
    assert report["accuracy"]["fd_wt"] == report["accuracy"]["gsl"]


def test_failing_stage_is_named(tmp_path):
    cfg = dataclasses.replace(TINY, gsl_layers=[True])
    with pytest.raises(StageError) as e:
        run_pipeline(cfg, tmp_path)
    assert e.value.stage == "train-gsl"


def test_config_round_trip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(TINY.to_dict()))
    assert PipelineConfig.load(path) == TINY
    with pytest.raises(ValueError, match="unknown"):
        PipelineConfig.from_dict({"sed": 1})


class TestBench:
    def test_report_shape(self):
        rep = bench(bench_graph(in_channels=2), (1, 2, 12, 12), reps=30, warmup=5)
        assert set(rep.variants) == {"plain", "gsl", "fd"}
        assert all(v.reps == 30 and v.median_ms > 0 for v in rep.variants.values())
        assert rep.variants["fd"].flops == rep.variants["plain"].flops
        d = rep.to_dict()
        assert d["input_shape"] == [1, 2, 12, 12] and d["warmup"] == 5

    @pytest.mark.parametrize("kw", [dict(reps=29), dict(warmup=4)])
    def test_minimums(self, kw):
        with pytest.raises(ValueError):
            bench(bench_graph(in_channels=1), (1, 1, 8, 8), **kw)

    def test_ratio(self):
        r = BenchReport((1,), 5, {"plain": VariantTiming(2.0, 2, 0, 30, 1), "fd": VariantTiming(3.0, 3, 0, 30, 1)})
        assert r.ratio("fd") == 1.5


# The tests below read the shared seed-0 pipeline run.

@pytest.mark.slow
def test_gsl_smoke_accuracy(pinned_run):
    assert pinned_run["report"]["accuracy"]["gsl"]["train"] >= 0.95


@pytest.mark.slow
def test_plain_smoke_accuracy_below_gsl(pinned_run):
    acc = pinned_run["report"]["accuracy"]
    assert acc["plain"]["train"] < acc["gsl"]["train"]


@pytest.mark.slow
def test_loss_decreases(pinned_run):
    r = pinned_run["report"]
    for name in ("gsl", "plain", "fd_wt"):
        assert r["loss_curves"][name][-1] < r["initial_loss"][name]


@pytest.mark.slow
def test_warm_start_beats_random_init(pinned_run):
    out = pinned_run["out"]
    train_set = SyntheticDataset.load(out / "train.npz")
    fd = ModelGraph.load(out / "fd_graph.json")
    fd.weights = weights_io.load(out / "fd_init.podw")
    fresh = he_init(ModelGraph.load(out / "fd_graph.json"), np.random.default_rng(0))
    loss = lambda g: softmax_cross_entropy(forward(g, train_set.images)[0], train_set.labels)[0]
    assert loss(fd) < 0.5 * loss(fresh)
