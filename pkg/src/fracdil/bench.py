"""Forward-pass timing of the plain, scale-learning and decomposed variants."""
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .decompose import count_flops, decompose_graph
from .fracconv import ScalePair
from .graph import plain_baseline, toy_graph
from .gsl import apply_frozen_scales
from .network import forward
from .transfer import transfer_weights

MIN_REPS = 30
MIN_WARMUP = 5


@dataclass
class VariantTiming:
    median_ms: float
    mean_ms: float
    std_ms: float
    reps: int
    flops: int


@dataclass
class BenchReport:
    input_shape: tuple
    warmup: int
    variants: dict = field(default_factory=dict)  # plain | gsl | fd -> VariantTiming

    def ratio(self, variant, base="plain"):
        return self.variants[variant].median_ms / self.variants[base].median_ms

    def to_dict(self):
        return {"input_shape": list(self.input_shape), "warmup": self.warmup,
                "variants": {k: asdict(v) for k, v in self.variants.items()}}


def bench_graph(in_channels=16, scales=(2.5, 2.5), seed=0):
    """Toy scale-learning graph with every layer's frozen scale set to ``scales``."""
    g = toy_graph("gsl", in_channels=in_channels, seed=seed)
    frozen = {l.name: ScalePair(*scales) for l in g.layers if l.kind == "gsl_conv"}
    return apply_frozen_scales(g, frozen)


def _time(fns, reps, warmup):
    """Round-robin timing so machine drift hits every variant alike."""
    for _ in range(warmup):
        for fn in fns.values():
            fn()
    times = {k: [] for k in fns}
    for _ in range(reps):
        for k, fn in fns.items():
            t0 = time.perf_counter()
            fn()
            times[k].append((time.perf_counter() - t0) * 1e3)
    return times


def bench(graph, input_shape, reps=MIN_REPS, warmup=MIN_WARMUP, seed=0):
    """Time one forward pass of each variant derived from ``graph``.

    ``graph`` is a scale-learning graph with frozen scales. The ``gsl``
    variant runs with per-sample predicted scales, ``fd`` is its
    decomposition, ``plain`` its dilation-1 baseline. BLAS and numba are
    pinned to one thread.
    """
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}")
    if warmup < MIN_WARMUP:
        raise ValueError(f"warmup must be >= {MIN_WARMUP}")
    x = np.random.default_rng(seed).standard_normal(input_shape).astype(np.float32)
    fd = decompose_graph(graph)
    fd.weights, _ = transfer_weights(graph, fd)
    plain = plain_baseline(graph)
    plain.weights = {k: v for k, v in graph.weights.items() if ".pred_" not in k}
    hw = tuple(input_shape[2:])
    variants = {"plain": (plain, "predict"), "gsl": (graph, "predict"), "fd": (fd, "predict")}
    report = BenchReport(tuple(input_shape), warmup)
    fns = {name: (lambda g=g, mode=mode: forward(g, x, scale_mode=mode)) for name, (g, mode) in variants.items()}
    with threadpool_limits(limits=1):
        timed = _time(fns, reps, warmup)
    for name, (g, _) in variants.items():
        times = timed[name]
        report.variants[name] = VariantTiming(
            statistics.median(times), statistics.fmean(times), statistics.stdev(times), reps,
            count_flops(g, hw))
    return report
