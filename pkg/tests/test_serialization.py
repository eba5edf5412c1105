import json
import struct

import numpy as np
import pytest

from fracdil import weights_io
from fracdil.decompose import decompose_graph
from fracdil.fracconv import ScalePair
from fracdil.graph import GraphError, LayerSpec, ModelGraph, ordered_weights, toy_graph
from fracdil.gsl import apply_frozen_scales
from fracdil.weights_io import BadMagicError, WeightFileError


def _fd_graph():
    g = apply_frozen_scales(toy_graph("gsl"), {"conv1": ScalePair(1.7, 2.9), "conv2": ScalePair(0.6, 1.4),
                                               "conv3": ScalePair(2.0, 2.0)})
    return decompose_graph(g)


class TestGraphJson:
    @pytest.mark.parametrize("make", [lambda: toy_graph("gsl"), lambda: toy_graph("plain"), _fd_graph])
    def test_round_trip(self, make):
        g = make()
        again = ModelGraph.from_json(g.to_json())
        assert again.layers == g.layers
        assert again.to_json() == g.to_json()

    def test_schema_keys(self):
        doc = json.loads(_fd_graph().to_json())
        assert doc["version"] == 1
        assert set(doc["layers"][0]) == {"name", "kind", "c_in", "c_out", "kernel", "dilation", "scale",
                                          "stride", "decomposition"}

    def test_file_round_trip(self, tmp_path):
        g = _fd_graph()
        g.save(tmp_path / "g.json")
        assert ModelGraph.load(tmp_path / "g.json").layers == g.layers

    def test_bad_version(self):
        with pytest.raises(GraphError, match="version"):
            ModelGraph.from_json('{"version": 2, "layers": []}')

    def test_unknown_kind(self):
        with pytest.raises(GraphError):
            LayerSpec("x", "pooling", 1, 1)

    def test_channel_chain_checked(self):
        with pytest.raises(GraphError):
            ModelGraph([LayerSpec("a", "conv", 1, 4, kernel=(3, 3), dilation=(1, 1)),
                        LayerSpec("b", "conv", 5, 4, kernel=(3, 3), dilation=(1, 1))])

    def test_unique_names(self):
        with pytest.raises(GraphError):
            ModelGraph([LayerSpec("a", "relu", 1, 1), LayerSpec("a", "relu", 1, 1)])

    def test_missing_field(self):
        with pytest.raises(GraphError):
            ModelGraph.from_json('{"version": 1, "layers": [{"name": "a", "kind": "relu"}]}')

    def test_check_weights(self):
        g = toy_graph("gsl")
        g.check_weights()
        g.weights["conv2.weight"] = g.weights["conv2.weight"][:, :, :1]
        with pytest.raises(GraphError, match="shape"):
            g.check_weights()
        del g.weights["fc.bias"]
        with pytest.raises(GraphError):
            g.check_weights()


class TestWeightFile:
    def test_bitwise_round_trip(self, rng):
        arrays = {"a": rng.standard_normal((3, 2, 3, 3)).astype(np.float32),
                  "scalar": np.array(np.float32(-0.0)),
                  "naïve.bias": np.array([np.nan, np.inf, 1e-45], np.float32),
                  "empty": np.zeros((0, 4), np.float32)}
        back = weights_io.loads(weights_io.dumps(arrays))
        assert list(back) == list(arrays)
        for k in arrays:
            assert back[k].shape == arrays[k].shape and back[k].dtype == np.float32
            assert back[k].tobytes() == arrays[k].tobytes()

    def test_layout(self):
        buf = weights_io.dumps({"w": np.array([[1.0, 2.0]], np.float32)})
        expected = (b"PODW" + struct.pack("<II", 1, 1) + struct.pack("<H", 1) + b"w"
                    + struct.pack("<B", 2) + struct.pack("<2I", 1, 2) + b"\x00"
                    + np.array([1.0, 2.0], "<f4").tobytes())
        assert buf == expected

    def test_file_and_graph_weights(self, tmp_path):
        g = toy_graph("gsl", seed=4)
        weights_io.save(tmp_path / "w.podw", ordered_weights(g))
        back = weights_io.load(tmp_path / "w.podw")
        assert weights_io.dumps(back) == weights_io.dumps(ordered_weights(g))

    def test_corrupt_magic_is_distinct(self):
        buf = bytearray(weights_io.dumps({"w": np.ones(2, np.float32)}))
        buf[0] ^= 0xFF
        with pytest.raises(BadMagicError):
            weights_io.loads(bytes(buf))

    @pytest.mark.parametrize("cut", [5, 12, 20, -1])
    def test_truncated(self, cut):
        buf = weights_io.dumps({"w": np.ones(2, np.float32)})
        with pytest.raises(WeightFileError) as e:
            weights_io.loads(buf[:cut])
        assert not isinstance(e.value, BadMagicError)

    def test_trailing_bytes(self):
        with pytest.raises(WeightFileError, match="trailing"):
            weights_io.loads(weights_io.dumps({}) + b"\x00")

    def test_unknown_dtype_code(self):
        buf = bytearray(weights_io.dumps({"w": np.ones(1, np.float32)}))
        buf[4 + 8 + 2 + 1 + 1 + 4] = 7
        with pytest.raises(WeightFileError, match="dtype"):
            weights_io.loads(bytes(buf))

    def test_bad_version(self):
        buf = bytearray(weights_io.dumps({}))
        buf[4] = 2
        with pytest.raises(WeightFileError, match="version"):
            weights_io.loads(bytes(buf))
