"""Dataset container, synthetic blob generation, and matrix file formats.

Two on-disk formats are supported.  CSV files carry a header row naming
the feature columns (``x0, x1, ...``) and optionally a final ``label``
column.  Binary files start with the magic ``FKMX``, a u32 version, u64
row and column counts (little endian), then row-major little-endian
float64 data; binary round-trips are bitwise.  Binary dataset files
written by :func:`save_dataset` carry labels as the final column.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "Dataset",
    "generate_blobs",
    "load_csv",
    "load_dataset",
    "load_matrix",
    "save_csv",
    "save_dataset",
    "save_matrix",
]

_MAGIC = b"FKMX"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError("labels must have one entry per row")

    @property
    def n_points(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        if self.labels is None:
            raise ValueError("dataset has no labels")
        return int(self.labels.max()) + 1


def _class_means(classes, dim, spread, rng):
    if classes <= dim:
        g = rng.standard_normal((dim, classes))
        q, _ = np.linalg.qr(g)
        means = q[:, :classes].T  # orthonormal rows, pairwise distance sqrt(2)
    else:
        # Greedy maximin placement on the unit sphere.
        cands = rng.standard_normal((256 * classes, dim))
        cands /= np.linalg.norm(cands, axis=1, keepdims=True)
        chosen = [0]
        dists = np.linalg.norm(cands - cands[0], axis=1)
        for _ in range(classes - 1):
            nxt = int(np.argmax(dists))
            chosen.append(nxt)
            dists = np.minimum(dists, np.linalg.norm(cands - cands[nxt], axis=1))
        means = cands[chosen]
    pairwise = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
    min_dist = pairwise[~np.eye(classes, dtype=bool)].min()
    if min_dist < 2.0 * spread:
        raise ConfigError(
            f"cannot separate {classes} unit-norm class means by "
            f"2*spread={2 * spread:.3f} in dim {dim} (achieved {min_dist:.3f})"
        )
    return means


def _class_counts(classes, per_class, imbalance):
    if imbalance < 1.0:
        raise ConfigError("imbalance ratio must be >= 1")
    if imbalance == 1.0:
        return np.full(classes, per_class, dtype=np.int64)
    smallest = per_class / imbalance
    if abs(smallest - round(smallest)) > 1e-9:
        raise ConfigError(
            f"per_class={per_class} is not divisible by imbalance={imbalance}"
        )
    counts = np.round(np.linspace(per_class, round(smallest), classes)).astype(np.int64)
    if counts.min() < 1:
        raise ConfigError("imbalance drives a class below one point")
    return counts


def generate_blobs(classes, dim, per_class, spread=0.3, imbalance=1.0, seed=0):
    """Gaussian class blobs around unit-norm means.

    Class 0 is the largest with ``per_class`` points; the smallest class
    has ``per_class / imbalance`` points (the ratio is exact, so
    ``per_class`` must be divisible by ``imbalance``).  Means are placed
    at least ``2 * spread`` apart, where ``spread`` is also the
    per-coordinate standard deviation of each blob.  Deterministic for a
    fixed seed.
    """
    if classes < 2:
        raise ConfigError("need at least two classes")
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    if spread <= 0:
        raise ConfigError("spread must be positive")
    rng = np.random.default_rng(seed)
    means = _class_means(classes, dim, spread, rng)
    counts = _class_counts(classes, per_class, imbalance)

    feats = []
    labels = []
    for c in range(classes):
        feats.append(means[c] + spread * rng.standard_normal((counts[c], dim)))
        labels.append(np.full(counts[c], c, dtype=np.int64))
    features = np.vstack(feats)
    labels = np.concatenate(labels)
    perm = rng.permutation(features.shape[0])
    return Dataset(features[perm], labels[perm])


def save_matrix(path, matrix):
    """Write a 2-D float64 matrix in the binary FKMX format."""
    m = np.ascontiguousarray(np.asarray(matrix, dtype="<f8"))
    if m.ndim != 2:
        raise ValueError("matrix must be 2-D")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, m.shape[0], m.shape[1]))
        f.write(m.tobytes())


def load_matrix(path):
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ConfigError(f"{path}: truncated header")
        magic, version, rows, cols = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ConfigError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        if version != _VERSION:
            raise ConfigError(f"{path}: unsupported version {version}")
        payload = f.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise ConfigError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


def save_csv(path, features, labels=None):
    """Write a dataset as CSV with an ``x0,x1,...[,label]`` header."""
    features = np.asarray(features, dtype=np.float64)
    cols = [f"x{j}" for j in range(features.shape[1])]
    if labels is not None:
        cols.append("label")
        body = np.hstack([features, np.asarray(labels, dtype=np.float64)[:, None]])
    else:
        body = features
    np.savetxt(path, body, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def load_csv(path):
    with open(path) as f:
        header = f.readline().strip()
    names = [c.strip() for c in header.split(",")]
    body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if body.shape[1] != len(names):
        raise ConfigError(f"{path}: header names {len(names)} columns, rows have {body.shape[1]}")
    if names and names[-1] == "label":
        return Dataset(body[:, :-1], body[:, -1].astype(np.int64))
    return Dataset(body)


def save_dataset(path, dataset: Dataset):
    """Write a dataset; format chosen by suffix (.csv or binary otherwise)."""
    path = str(path)
    if path.endswith(".csv"):
        save_csv(path, dataset.features, dataset.labels)
    else:
        if dataset.labels is None:
            save_matrix(path, dataset.features)
        else:
            save_matrix(
                path,
                np.hstack([dataset.features, dataset.labels.astype(np.float64)[:, None]]),
            )


def load_dataset(path, has_labels=True):
    """Read a dataset written by :func:`save_dataset`.

    CSV files are self-describing; for binary files ``has_labels`` says
    whether the final column holds labels (the convention of files the
    ``generate`` command writes).
    """
    path = str(path)
    if path.endswith(".csv"):
        return load_csv(path)
    m = load_matrix(path)
    if has_labels:
        if m.shape[1] < 2:
            raise ConfigError(f"{path}: too few columns for a labeled dataset")
        return Dataset(m[:, :-1], m[:, -1].astype(np.int64))
    return Dataset(m)
