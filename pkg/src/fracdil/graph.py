"""Model graphs: an ordered chain of layer specs plus a named weight store."""
import copy
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

GRAPH_VERSION = 1
KINDS = ("conv", "gsl_conv", "fd_branch_group", "pool", "linear", "relu")
CONV_KINDS = ("conv", "gsl_conv", "fd_branch_group")


class GraphError(ValueError):
    pass


def _pair(v, cast):
    return None if v is None else tuple(cast(a) for a in v)


@dataclass
class LayerSpec:
    name: str
    kind: str
    c_in: int
    c_out: int
    kernel: Optional[tuple] = None
    dilation: Optional[tuple] = None
    scale: Optional[tuple] = None
    stride: tuple = (1, 1)
    decomposition: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"unknown layer kind {self.kind!r}")
        self.c_in = int(self.c_in)
        self.c_out = int(self.c_out)
        self.kernel = _pair(self.kernel, int)
        self.dilation = _pair(self.dilation, int)
        self.scale = _pair(self.scale, float)
        self.stride = _pair(self.stride, int) or (1, 1)

    def to_dict(self):
        d = {
            "name": self.name,
            "kind": self.kind,
            "c_in": self.c_in,
            "c_out": self.c_out,
            "kernel": list(self.kernel) if self.kernel is not None else None,
            "dilation": list(self.dilation) if self.dilation is not None else None,
            "scale": list(self.scale) if self.scale is not None else None,
            "stride": list(self.stride),
            "decomposition": copy.deepcopy(self.decomposition),
        }
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                name=d["name"], kind=d["kind"], c_in=d["c_in"], c_out=d["c_out"],
                kernel=d.get("kernel"), dilation=d.get("dilation"), scale=d.get("scale"),
                stride=d.get("stride") or (1, 1), decomposition=d.get("decomposition"),
            )
        except KeyError as e:
            raise GraphError(f"layer entry missing field {e}") from None


@dataclass
class ModelGraph:
    layers: list
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise GraphError("layer names must be unique")
        channels = None
        for l in self.layers:
            if l.kind in ("pool", "relu") and l.c_in != l.c_out:
                raise GraphError(f"{l.name}: {l.kind} must keep the channel count")
            if channels is not None and l.c_in != channels:
                raise GraphError(f"{l.name}: expects {l.c_in} input channels, previous layer gives {channels}")
            channels = l.c_out

    def check_weights(self):
        """Raise :class:`GraphError` unless every parameter is present and well shaped."""
        for l in self.layers:
            for k, shape in param_shapes(l).items():
                if k not in self.weights:
                    raise GraphError(f"missing weight {k!r}")
                if tuple(self.weights[k].shape) != shape:
                    raise GraphError(f"weight {k!r} has shape {tuple(self.weights[k].shape)}, "
                                     f"expected {shape}")

    def layer(self, name):
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def copy(self):
        return ModelGraph([copy.deepcopy(l) for l in self.layers],
                          {k: v.copy() for k, v in self.weights.items()})

    def param_count(self):
        return int(sum(v.size for v in self.weights.values()))

    def to_json(self):
        return json.dumps({"version": GRAPH_VERSION, "layers": [l.to_dict() for l in self.layers]},
                          indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("version") != GRAPH_VERSION:
            raise GraphError(f"unsupported graph version {doc.get('version')!r}")
        return cls([LayerSpec.from_dict(d) for d in doc["layers"]])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


def param_names(layer):
    """Weight-store keys owned by ``layer``, in canonical order."""
    n = layer.name
    if layer.kind in ("conv", "linear"):
        return [f"{n}.weight", f"{n}.bias"]
    if layer.kind == "gsl_conv":
        return [f"{n}.weight", f"{n}.bias", f"{n}.pred_weight", f"{n}.pred_bias"]
    if layer.kind == "fd_branch_group":
        out = []
        for i in range(len(layer.decomposition["branches"])):
            out += [f"{n}.b{i}.weight", f"{n}.b{i}.bias"]
        return out
    return []


def param_shapes(layer):
    """``{key: shape}`` for the parameters owned by ``layer``."""
    n, ci, co = layer.name, layer.c_in, layer.c_out
    if layer.kind == "linear":
        return {f"{n}.weight": (co, ci), f"{n}.bias": (co,)}
    if layer.kind == "gsl_conv":
        return {f"{n}.weight": (co, ci) + tuple(layer.kernel), f"{n}.bias": (co,),
                f"{n}.pred_weight": (2, ci), f"{n}.pred_bias": (2,)}
    if layer.kind in ("conv", "fd_branch_group"):
        out = {}
        for i, b in enumerate(_branch_dicts(layer)):
            lo, hi = b["out_channel_range"]
            prefix = n if layer.kind == "conv" else f"{n}.b{i}"
            out[f"{prefix}.weight"] = (hi - lo, ci) + tuple(b["kernel"])
            out[f"{prefix}.bias"] = (hi - lo,)
        return out
    return {}


def _branch_dicts(layer):
    if layer.kind == "fd_branch_group":
        return layer.decomposition["branches"]
    return [{"out_channel_range": [0, layer.c_out], "kernel": list(layer.kernel)}]


def all_param_names(graph):
    return [k for l in graph.layers for k in param_names(l)]


def ordered_weights(graph):
    """The weight store reordered to canonical layer order."""
    return {k: graph.weights[k] for k in all_param_names(graph) if k in graph.weights}


def he_init(graph, rng):
    """Fill conv/linear weights with He-normal values, zero biases and predictors."""
    w = {}
    for l in graph.layers:
        if l.kind in ("conv", "gsl_conv"):
            kh, kw = l.kernel
            std = np.sqrt(2.0 / (l.c_in * kh * kw))
            w[f"{l.name}.weight"] = (rng.standard_normal((l.c_out, l.c_in, kh, kw)) * std).astype(np.float32)
            w[f"{l.name}.bias"] = np.zeros(l.c_out, np.float32)
            if l.kind == "gsl_conv":
                w[f"{l.name}.pred_weight"] = np.zeros((2, l.c_in), np.float32)
                w[f"{l.name}.pred_bias"] = np.zeros(2, np.float32)
        elif l.kind == "fd_branch_group":
            for i, b in enumerate(l.decomposition["branches"]):
                lo, hi = b["out_channel_range"]
                kh, kw = b["kernel"]
                std = np.sqrt(2.0 / (l.c_in * kh * kw))
                w[f"{l.name}.b{i}.weight"] = (rng.standard_normal((hi - lo, l.c_in, kh, kw)) * std).astype(np.float32)
                w[f"{l.name}.b{i}.bias"] = np.zeros(hi - lo, np.float32)
        elif l.kind == "linear":
            std = np.sqrt(1.0 / l.c_in)
            w[f"{l.name}.weight"] = (rng.standard_normal((l.c_out, l.c_in)) * std).astype(np.float32)
            w[f"{l.name}.bias"] = np.zeros(l.c_out, np.float32)
    graph.weights = w
    return graph


def toy_graph(kind="gsl", in_channels=1, widths=(16, 32, 32), n_classes=4, gsl_layers=None,
              seed=0):
    """conv -> relu -> ... -> global pool -> linear, with He-initialised weights.

    ``kind="gsl"`` makes every conv flagged in ``gsl_layers`` (default: all)
    a scale-learning conv; ``kind="plain"`` gives dilation-1 convs throughout.
    """
    if gsl_layers is None:
        gsl_layers = [True] * len(widths)
    layers = []
    c = in_channels
    for i, width in enumerate(widths):
        name = f"conv{i + 1}"
        if kind == "gsl" and gsl_layers[i]:
            layers.append(LayerSpec(name, "gsl_conv", c, width, kernel=(3, 3)))
        elif kind in ("gsl", "plain"):
            layers.append(LayerSpec(name, "conv", c, width, kernel=(3, 3), dilation=(1, 1)))
        else:
            raise ValueError(f"unknown toy graph kind {kind!r}")
        layers.append(LayerSpec(f"relu{i + 1}", "relu", width, width))
        c = width
    layers.append(LayerSpec("pool", "pool", c, c))
    layers.append(LayerSpec("fc", "linear", c, n_classes))
    return he_init(ModelGraph(layers), np.random.default_rng(seed))


def plain_baseline(graph):
    """Same chain with every scale-bearing conv turned into a dilation-1 conv.

    Channel widths and kernel sizes are kept, so FLOPs are comparable.
    """
    layers = []
    for l in graph.layers:
        if l.kind in CONV_KINDS:
            layers.append(LayerSpec(l.name, "conv", l.c_in, l.c_out, kernel=l.kernel or (3, 3),
                                    dilation=(1, 1), stride=l.stride))
        else:
            layers.append(copy.deepcopy(l))
    return ModelGraph(layers)
