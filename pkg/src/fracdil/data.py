"""Synthetic multi-scale motif classification.

Each image holds one of ``n_patterns`` fixed 3x3 binary motifs whose pixels
are placed at ``centre + scale * (i, j)`` for ``i, j in {-1, 0, 1}`` and
splatted bilinearly with intensity ``amplitude``, plus Gaussian noise of
standard deviation ``noise``. Telling the motifs apart needs a
receptive-field grid with spacing close to ``scale``.
"""
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .fracconv import ConvParams, integer_dilated_conv2d

# Five "on" cells each so total intensity carries no label information.
MOTIFS = np.array([
    [[0, 1, 0], [1, 1, 1], [0, 1, 0]],  # plus
    [[1, 0, 1], [0, 1, 0], [1, 0, 1]],  # cross
    [[1, 1, 1], [0, 1, 0], [0, 1, 0]],  # T
    [[1, 0, 0], [1, 0, 0], [1, 1, 1]],  # L
    [[1, 1, 0], [0, 1, 0], [0, 1, 1]],  # S
    [[0, 0, 1], [1, 1, 1], [0, 0, 1]],  # rotated T
], dtype=np.float32)


@dataclass
class SyntheticConfig:
    n: int = 1024
    size: int = 32
    n_patterns: int = 4
    scale: float = 2.5
    noise: float = 0.1
    jitter: int = 4
    amplitude: float = 3.0  # intensity of an "on" motif cell

    def validate(self):
        if not 2 <= self.n_patterns <= len(MOTIFS):
            raise ValueError(f"n_patterns must lie in [2, {len(MOTIFS)}]")
        if not 1.0 <= self.scale <= 6.0:
            raise ValueError("scale must lie in [1, 6]")
        if self.size < 2 * (math.ceil(self.scale) + 1 + self.jitter) + 1:
            raise ValueError("image too small for the dilated pattern")
        if self.amplitude <= 0 or self.noise < 0:
            raise ValueError("amplitude must be positive and noise non-negative")
        if self.n < 0:
            raise ValueError("n must be non-negative")


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (N, 1, size, size) float32
    labels: np.ndarray  # (N,) int64
    config: SyntheticConfig
    seed: int

    def __len__(self):
        return len(self.labels)

    def save(self, path):
        np.savez(path, images=self.images, labels=self.labels,
                 meta=np.array(json.dumps({"config": asdict(self.config), "seed": self.seed})))

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            return cls(z["images"], z["labels"], SyntheticConfig(**meta["config"]), meta["seed"])


def _splat(img, h, w, value):
    fh, fw = math.floor(h), math.floor(w)
    ah, aw = h - fh, w - fw
    for dh, wh in ((0, 1.0 - ah), (1, ah)):
        for dw, ww in ((0, 1.0 - aw), (1, aw)):
            if wh * ww:
                img[fh + dh, fw + dw] += value * wh * ww


def render(motif, centre, scale, size, amplitude=1.0):
    """Noise-free image of ``motif`` spread with spacing ``scale`` around ``centre``."""
    img = np.zeros((size, size), np.float32)
    for i in range(3):
        for j in range(3):
            if motif[i, j]:
                _splat(img, centre[0] + (i - 1) * scale, centre[1] + (j - 1) * scale, amplitude)
    return img


def gen_multiscale_dataset(config, seed):
    """Deterministic dataset for ``(config, seed)``; labels are balanced."""
    config.validate()
    rng = np.random.default_rng(seed)
    n, size = config.n, config.size
    labels = rng.permutation(np.arange(n) % config.n_patterns).astype(np.int64)
    images = np.zeros((n, 1, size, size), np.float32)
    mid = (size - 1) // 2
    for k in range(n):
        centre = mid + rng.integers(-config.jitter, config.jitter + 1, size=2)
        images[k, 0] = render(MOTIFS[labels[k]], centre, config.scale, size, config.amplitude)
        if config.noise:
            images[k, 0] += (config.noise * rng.standard_normal((size, size))).astype(np.float32)
    return SyntheticDataset(images, labels, config, int(seed))


def template_match(images, scale=1, n_patterns=4):
    """Classify by the best 3x3 motif correlation at integer spacing ``scale``."""
    p = ConvParams(MOTIFS[:n_patterns, None].astype(np.float32))
    resp = integer_dilated_conv2d(images.astype(np.float32), p, (int(scale), int(scale)))
    return resp.reshape(len(images), n_patterns, -1).max(axis=2).argmax(axis=1)
