"""MNIST IDX ingestion and the MNISTNET multilayer-perceptron task."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, softmax

from ..errors import BadMagic, ConfigError, CountMismatch, DataMissing, TruncatedFile
from ..screen import LOSS
from .base import MNISTNET_LR_GRID, Task

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_ENV = "OPTFORGE_DATA_DIR"

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"


def _read_bytes(path) -> bytes:
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str):
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedFile(f"{what}: file ends inside the magic number", len(raw))
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagic(f"{what}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedFile(f"{what}: file ends inside the header", len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) < expected:
        raise TruncatedFile(f"{what}: expected {expected} bytes, file has {len(raw)}", len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=int(np.prod(dims)), offset=header)
    return data.reshape(dims)


def read_idx_images(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), IMAGES_MAGIC, 3, f"images {path}")


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), LABELS_MAGIC, 1, f"labels {path}")


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


@dataclass
class MnistData:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    @property
    def n_total(self):
        return len(self.train_labels) + len(self.test_labels)


def load_idx(images_path, labels_path, seed: int = 0) -> MnistData:
    """Read an IDX image/label pair, scale pixels to [0, 1] and split 50/50 after a seeded shuffle."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    if labels.size and labels.max() > 9:
        raise CountMismatch(f"label {labels.max()} outside 0-9")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    order = np.random.default_rng(seed).permutation(len(labels))
    half = len(labels) // 2
    train, test = order[:half], order[half:]
    return MnistData(x[train], labels[train].astype(np.int64), x[test], labels[test].astype(np.int64))


def find_mnist(data_dir=None):
    """Locate the train image/label IDX files (optionally gzipped)."""
    candidates = [data_dir, os.environ.get(DATA_ENV)]
    for base in filter(None, candidates):
        base = Path(base)
        for sub in (base, base / "mnist"):
            for suffix in ("", ".gz"):
                img, lab = sub / (TRAIN_IMAGES + suffix), sub / (TRAIN_LABELS + suffix)
                if img.exists() and lab.exists():
                    return img, lab
    raise DataMissing(
        f"MNIST IDX files not found; put {TRAIN_IMAGES}[.gz] and {TRAIN_LABELS}[.gz] "
        f"in the data directory or set {DATA_ENV}"
    )


def load_mnist(data_dir=None, seed: int = 0) -> MnistData:
    return load_idx(*find_mnist(data_dir), seed=seed)


_ACTIVATIONS = {
    "sigmoid": (expit, lambda a: a * (1 - a)),
    "relu": (lambda z: np.maximum(z, 0), lambda a: (a > 0).astype(a.dtype)),
}


class MLPTask(Task):
    """Softmax-cross-entropy MLP over flattened images; parameters form one flat vector."""

    name = "mnistnet"
    metric_kind = LOSS

    def __init__(self, data: MnistData, hidden=(20,), activation="sigmoid", proxy_steps=100, full_steps=1000, batch_size=128, lr_grid=MNISTNET_LR_GRID):
        if data is None:
            raise DataMissing("mnistnet needs MNIST data")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        self.data = data
        self.hidden = tuple(hidden)
        self.activation = activation
        self.act, self.act_grad = _ACTIVATIONS[activation]
        self.n_classes = 10
        self.sizes = (data.train_images.shape[1], *self.hidden, self.n_classes)
        self.shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.shapes += [(fan_in, fan_out), (fan_out,)]
        self.dim = int(sum(np.prod(s) for s in self.shapes))
        self.proxy_steps = proxy_steps
        self.full_steps = full_steps
        self.batch_size = batch_size
        self.lr_grid = tuple(lr_grid)

    def describe(self):
        return {"name": self.name, "dim": self.dim, "hidden": list(self.hidden), "activation": self.activation}

    def unflatten(self, params):
        out, i = [], 0
        for shape in self.shapes:
            n = int(np.prod(shape))
            out.append(params[i : i + n].reshape(shape))
            i += n
        return out

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        parts = []
        # Bias uses its layer's fan-in, i.e. the preceding weight's row count.
        for w_shape, b_shape in zip(self.shapes[::2], self.shapes[1::2]):
            bound = 1 / np.sqrt(w_shape[0])
            parts.append(rng.uniform(-bound, bound, size=w_shape).ravel())
            parts.append(rng.uniform(-bound, bound, size=b_shape))
        return np.concatenate(parts)

    def batch_stream(self, seed):
        rng = np.random.default_rng(seed)
        n = len(self.data.train_labels)
        size = min(self.batch_size, n)
        while True:
            yield rng.choice(n, size=size, replace=False)

    def _forward(self, params, x):
        layers = self.unflatten(params)
        acts = [x]
        h = x
        for k in range(0, len(layers) - 2, 2):
            h = self.act(h @ layers[k] + layers[k + 1])
            acts.append(h)
        logits = h @ layers[-2] + layers[-1]
        return layers, acts, logits

    def _batch(self, batch):
        if batch is None:
            return self.data.train_images, self.data.train_labels
        return self.data.train_images[batch], self.data.train_labels[batch]

    def loss(self, params, batch):
        x, y = self._batch(batch)
        _, _, logits = self._forward(params, x)
        return float(-np.mean(log_softmax(logits, axis=1)[np.arange(len(y)), y]))

    def loss_and_gradient(self, params, batch):
        x, y = self._batch(batch)
        layers, acts, logits = self._forward(params, x)
        n = len(y)
        logp = log_softmax(logits, axis=1)
        loss = float(-np.mean(logp[np.arange(n), y]))
        delta = softmax(logits, axis=1)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = [None] * len(layers)
        for k in range(len(layers) - 2, -1, -2):
            a = acts[k // 2]
            grads[k] = a.T @ delta
            grads[k + 1] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ layers[k].T) * self.act_grad(a)
        return loss, np.concatenate([g.ravel() for g in grads])

    def gradient(self, params, batch):
        return self.loss_and_gradient(params, batch)[1]

    def metric(self, params):
        _, _, logits = self._forward(params, self.data.test_images)
        return float(np.mean(np.argmax(logits, axis=1) == self.data.test_labels))


MNISTNET_VARIANTS = {
    "default": dict(hidden=(20,), activation="sigmoid"),
    "2layer": dict(hidden=(20, 20), activation="sigmoid"),
    "big": dict(hidden=(40,), activation="sigmoid"),
    "relu": dict(hidden=(20,), activation="relu"),
}


def mnistnet_task(data: MnistData, variant="default", **kwargs) -> MLPTask:
    if variant not in MNISTNET_VARIANTS:
        raise ConfigError(f"unknown MNISTNET variant {variant!r}; choose from {sorted(MNISTNET_VARIANTS)}")
    opts = dict(MNISTNET_VARIANTS[variant])
    opts.update(kwargs)
    task = MLPTask(data, **opts)
    task.variant = variant
    return task
