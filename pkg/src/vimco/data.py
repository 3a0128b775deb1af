"""Binary image datasets: IDX and plain-text matrix readers, binarization,
splits, the half-image view for structured output prediction, centering."""
import gzip
import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import make_rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
STRATEGIES = ("fixed-file", "threshold", "stochastic")
MNIST_SPLITS = {"train": 50000, "valid": 10000, "test": 10000}
MNIST10K_SPLITS = {"train": 5000, "valid": 2500, "test": 2500}


class FormatError(ValueError):
    pass


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw):
    """Array stored in an IDX byte string (unsigned-byte payloads only)."""
    if len(raw) < 4:
        raise FormatError("truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise FormatError(f"bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError("truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    n = int(np.prod(dims))
    if len(raw) < head + n:
        raise FormatError(f"truncated IDX payload: expected {n} bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=head).reshape(dims)


def load_idx(path):
    """Images as an (N, rows*cols) matrix of byte/255 values, or a label vector.

    Gzip-compressed files are detected from their first bytes.
    """
    a = parse_idx(_read_bytes(path))
    if a.ndim == 1:
        return a.astype(np.int64)
    return a.reshape(a.shape[0], -1) / 255.0


def write_idx(path, array, compress=None):
    a = np.asarray(array)
    if a.dtype != np.uint8:
        if a.min() < 0 or a.max() > 255 or np.any(a != np.round(a)):
            raise ValueError("IDX payload must be bytes")
        a = a.astype(np.uint8)
    if a.ndim not in (1, 3):
        raise ValueError("expected labels (N,) or images (N, rows, cols)")
    magic = LABEL_MAGIC if a.ndim == 1 else IMAGE_MAGIC
    raw = struct.pack(f">I{a.ndim}I", magic, *a.shape) + a.tobytes()
    if compress is None:
        compress = str(path).endswith(".gz")
    if compress:
        raw = gzip.compress(raw, mtime=0)
    with open(path, "wb") as fh:
        fh.write(raw)


def load_amat(path):
    """Plain-text binary matrix: one case per line, space-separated 0/1."""
    a = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if not np.all((a == 0) | (a == 1)):
        raise FormatError(f"{path}: entries must be 0 or 1")
    return a


def write_amat(path, a):
    np.savetxt(path, np.asarray(a, dtype=np.int64), fmt="%d")


def binarize(raw, strategy="threshold", seed=None):
    """Map [0,1] intensities to {0,1}.

    threshold: v >= 0.5 -> 1 (ties go up).  stochastic: one Bernoulli(v) draw
    per pixel from `seed`, then frozen.  fixed-file: the input is already
    binary and passes through unchanged.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown binarization strategy {strategy!r}")
    if strategy == "fixed-file":
        if not np.all((raw == 0) | (raw == 1)):
            raise ValueError("fixed-file data must already be binary")
        return raw.copy()
    if np.any((raw < 0) | (raw > 1)) or not np.all(np.isfinite(raw)):
        raise ValueError("intensities must lie in [0, 1]")
    if strategy == "threshold":
        return (raw >= 0.5).astype(np.float64)
    if seed is None:
        raise ValueError("stochastic binarization needs a seed")
    return (make_rng(seed).random(raw.shape) < raw).astype(np.float64)


def make_splits(n, sizes):
    """Contiguous index blocks in the given order; sizes must cover all n cases."""
    if sum(sizes.values()) != n:
        raise ValueError(f"split sizes {dict(sizes)} do not add up to {n} cases")
    out, start = {}, 0
    for name, size in sizes.items():
        out[name] = np.arange(start, start + size)
        start += size
    return out


def sop_view(images, shape=(28, 28)):
    """(context, observation) = (top half, bottom half) of each image."""
    images = np.atleast_2d(images)
    rows, cols = shape
    if images.shape[1] != rows * cols or rows % 2:
        raise ValueError(f"images of {images.shape[1]} pixels do not split into halves of {shape}")
    cut = rows // 2 * cols
    return images[:, :cut].copy(), images[:, cut:].copy()


def sop_join(context, observation):
    return np.concatenate([np.atleast_2d(context), np.atleast_2d(observation)], axis=1)


def centering_stats(train):
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] == 0:
        raise ValueError("centering needs a non-empty training split")
    return train.mean(axis=0)


@dataclass
class Dataset:
    images: np.ndarray
    splits: dict
    shape: tuple = (28, 28)
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if not np.all((self.images == 0) | (self.images == 1)):
            raise ValueError("dataset entries must be 0 or 1")
        if self.images.shape[1] != self.shape[0] * self.shape[1]:
            raise ValueError("image shape does not match the number of pixels")
        seen = np.concatenate(list(self.splits.values()))
        if len(seen) != len(self.images) or len(np.unique(seen)) != len(seen):
            raise ValueError("splits must partition the cases")

    def split(self, name):
        if name not in self.splits:
            raise KeyError(f"no split {name!r}; have {sorted(self.splits)}")
        return self.images[self.splits[name]]

    @property
    def train_mean(self):
        return centering_stats(self.split("train"))

    def view(self, name, sop=False):
        """(observations, contexts) of a split; contexts are None unless `sop`."""
        x = self.split(name)
        if not sop:
            return x, None
        c, x = sop_view(x, self.shape)
        return x, c


def mnist10k(seed=0, splits=None):
    """10,000 real MNIST digits bundled with the package, stochastically binarized."""
    base = resources.files("vimco") / "resources"
    with resources.as_file(base / "mnist10k-images-idx3-ubyte.gz") as p:
        raw = load_idx(p)
    images = binarize(raw, "stochastic", seed=seed)
    return Dataset(images, make_splits(len(images), splits or MNIST10K_SPLITS), (28, 28), "mnist10k")


def bars_and_stripes(n=32, side=4, flip=0.02, seed=0, splits=None):
    """Noisy bars-and-stripes images, a small multimodal toy set."""
    rng = make_rng(seed)
    horizontal = rng.random(n) < 0.5
    on = rng.random((n, side)) < 0.5
    imgs = np.where(horizontal[:, None, None], on[:, :, None], on[:, None, :])
    imgs = np.broadcast_to(imgs, (n, side, side)).reshape(n, -1).astype(np.float64)
    noise = rng.random(imgs.shape) < flip
    imgs = np.abs(imgs - noise)
    if splits is None:
        splits = {"train": n // 2, "valid": n // 4, "test": n - n // 2 - n // 4}
    return Dataset(imgs, make_splits(n, splits), (side, side), "toy")


def load_dataset(source="mnist10k", seed=0, splits=None, binarization="stochastic", shape=None):
    """Dataset from a built-in name ("mnist10k", "toy") or a file.

    Files ending in .amat/.txt are pre-binarized matrices; anything else is
    read as IDX and binarized with `binarization`.
    """
    if source == "mnist10k":
        return mnist10k(seed, splits)
    if source == "toy":
        return bars_and_stripes(seed=seed, splits=splits)
    path = str(source)
    if path.endswith((".amat", ".txt")):
        images = load_amat(path)
    else:
        images = binarize(load_idx(path), binarization, seed=seed)
    if shape is None:
        side = int(round(np.sqrt(images.shape[1])))
        shape = (side, images.shape[1] // side)
    if splits is None:
        n = len(images)
        splits = MNIST_SPLITS if n == 70000 else {"train": n - 2 * (n // 10), "valid": n // 10, "test": n // 10}
    return Dataset(images, make_splits(len(images), splits), tuple(shape), path)
