"""Datasets: synthetic point clouds and an IDX (MNIST layout) image loader."""

import gzip
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError

__all__ = [
    "Dataset",
    "DataConfig",
    "generate",
    "read_idx",
    "write_idx",
    "avg_pool",
    "regression_targets",
]

SOURCES = ("disk", "circle", "gaussian", "idx")
LABEL_RULES = ("regression", "binary", "classes")
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_IDX_TYPES = {
    0x08: np.dtype("u1"),
    0x09: np.dtype("i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class Dataset:
    """Inputs ``(N, n0)`` with optional labels.

    ``labels`` holds real targets ``(N, n_L)`` for regression, ``+-1`` values
    ``(N,)`` for binary classification or class indices ``(N,)``.
    """

    inputs: np.ndarray
    labels: np.ndarray | None = None
    n_L: int = 1

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape[0] != self.inputs.shape[0]:
                raise ConfigError("labels and inputs disagree on N")
            if self.labels.ndim == 2 and self.labels.shape[1] != self.n_L:
                raise ConfigError(f"labels have {self.labels.shape[1]} outputs, expected n_L = {self.n_L}")

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    @property
    def n0(self) -> int:
        return self.inputs.shape[1]


@dataclass
class DataConfig:
    """Dataset recipe.

    Attributes
    ----------
    source : {"disk", "circle", "gaussian", "idx"}
    N : int
    n0 : int
        Input dimension for ``gaussian`` (``disk`` and ``circle`` are 2D).
    path, labels_path : str, optional
        IDX image and label files for ``source="idx"``.
    downscale : int
        Average-pooling factor for IDX images (2 maps 28x28 to 14x14).
    normalize : {"unit", "standardize"}
        IDX pixels are mapped to ``[0, 1]``; ``standardize`` then centers and
        scales each pixel over the dataset.
    seed : int
    label_rule : {"regression", "binary", "classes"}
    n_L : int
        Outputs (regression) or class count (classes).
    """

    source: str = "disk"
    N: int = 8
    n0: int = 2
    path: str | None = None
    labels_path: str | None = None
    downscale: int = 1
    normalize: str = "unit"
    seed: int = 0
    label_rule: str = "regression"
    n_L: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"data: unknown keys {sorted(extra)}")
        return cls(**d)

    def validate(self):
        if self.source not in SOURCES:
            raise ConfigError(f"data.source: unknown source {self.source!r}")
        if int(self.N) < 1:
            raise ConfigError("data.N must be >= 1")
        if self.label_rule not in LABEL_RULES:
            raise ConfigError(f"data.label_rule: unknown rule {self.label_rule!r}")
        if self.normalize not in ("unit", "standardize"):
            raise ConfigError(f"data.normalize: unknown mode {self.normalize!r}")
        if int(self.n_L) < 1 or (self.label_rule == "classes" and int(self.n_L) < 2):
            raise ConfigError("data.n_L must be >= 1 (>= 2 for classes)")
        if self.label_rule == "binary" and int(self.n_L) != 1:
            raise ConfigError("data.n_L must be 1 for binary labels")
        if self.source == "idx" and not self.path:
            raise ConfigError("data.path is required for source 'idx'")
        if int(self.downscale) < 1:
            raise ConfigError("data.downscale must be >= 1")


def regression_targets(X, n_L: int = 1) -> np.ndarray:
    """Smooth fixed targets ``y_k(x) = sin(pi x_{k mod n0} + k)``, shape ``(N, n_L)``."""
    X = np.atleast_2d(X)
    cols = [np.sin(np.pi * X[:, k % X.shape[1]] + k) for k in range(n_L)]
    return np.stack(cols, axis=1)


def _synthetic(cfg, rng):
    N = int(cfg.N)
    if cfg.source == "disk":
        r = np.sqrt(rng.uniform(size=N))
        a = rng.uniform(0.0, 2.0 * np.pi, size=N)
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    if cfg.source == "circle":
        a = rng.uniform(0.0, 2.0 * np.pi, size=N)
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    return rng.standard_normal((N, int(cfg.n0)))


def _labels(cfg, X, digits=None):
    if cfg.label_rule == "regression":
        return regression_targets(X, int(cfg.n_L))
    if cfg.label_rule == "binary":
        if digits is not None:
            # parity of the digit class: even -> +1, odd -> -1
            return np.where(digits % 2 == 0, 1.0, -1.0)
        return np.where(regression_targets(X, 1)[:, 0] >= 0, 1.0, -1.0)
    c = int(cfg.n_L)
    if digits is not None:
        return (digits % c).astype(int)
    ang = np.arctan2(X[:, 1 % X.shape[1]], X[:, 0]) + np.pi
    return np.minimum((ang / (2 * np.pi) * c).astype(int), c - 1)


def generate(config: DataConfig | dict) -> Dataset:
    """Build a dataset deterministically from its config."""
    cfg = DataConfig.from_dict(config) if isinstance(config, dict) else config
    cfg.validate()
    if cfg.source != "idx":
        rng = np.random.default_rng(int(cfg.seed))
        X = _synthetic(cfg, rng)
        return Dataset(X, _labels(cfg, X), int(cfg.n_L))
    imgs = read_idx(cfg.path)
    if imgs.ndim != 3:
        raise IngestionError(f"{cfg.path}: expected a 3D image array, got {imgs.ndim}D")
    N = min(int(cfg.N), imgs.shape[0])
    imgs = imgs[:N].astype(float)
    if imgs.max(initial=0.0) > 1.0:
        imgs = imgs / 255.0
    imgs = avg_pool(imgs, int(cfg.downscale))
    X = imgs.reshape(N, -1)
    if cfg.normalize == "standardize":
        sd = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    digits = None
    if cfg.labels_path:
        digits = read_idx(cfg.labels_path)[:N].astype(int)
        if digits.shape != (N,):
            raise IngestionError(f"{cfg.labels_path}: label count does not match images")
    if digits is None and cfg.label_rule != "regression":
        raise ConfigError("data.labels_path is required for classification labels")
    return Dataset(X, _labels(cfg, X, digits), int(cfg.n_L))


def avg_pool(imgs, factor: int) -> np.ndarray:
    """Non-overlapping ``factor x factor`` average pooling over the last two axes."""
    imgs = np.asarray(imgs, dtype=float)
    if factor == 1:
        return imgs
    h, w = imgs.shape[-2:]
    if h % factor or w % factor:
        raise ConfigError(f"downscale factor {factor} does not divide image size {h}x{w}")
    s = imgs.shape[:-2] + (h // factor, factor, w // factor, factor)
    return imgs.reshape(s).mean(axis=(-3, -1))


def _open(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX file (big-endian header, MNIST layout).

    Raises
    ------
    IngestionError
        On a malformed header or truncated payload; the message names the
        byte offset.
    """
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IngestionError(f"{path}: truncated header at offset 0")
    if raw[0] != 0 or raw[1] != 0:
        raise IngestionError(f"{path}: bad magic at offset 0 (expected two zero bytes)")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise IngestionError(f"{path}: unknown data type 0x{code:02x} at offset 2")
    if ndim == 0:
        raise IngestionError(f"{path}: zero dimensions at offset 3")
    if len(raw) < 4 + 4 * ndim:
        raise IngestionError(f"{path}: truncated dimension list at offset 4")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    dt = _IDX_TYPES[code]
    start = 4 + 4 * ndim
    need = int(np.prod(dims)) * dt.itemsize
    if len(raw) - start < need:
        raise IngestionError(f"{path}: payload truncated at offset {len(raw)} (expected {start + need} bytes)")
    return np.frombuffer(raw, dtype=dt, count=int(np.prod(dims)), offset=start).reshape(dims).copy()


def write_idx(path, arr) -> None:
    """Write an array in IDX format (the type code follows the dtype)."""
    arr = np.asarray(arr)
    codes = {v.newbyteorder(">") if v.itemsize > 1 else v: k for k, v in _IDX_TYPES.items()}
    dt = arr.dtype.newbyteorder(">") if arr.dtype.itemsize > 1 else arr.dtype
    code = next((k for v, k in codes.items() if v == dt), None)
    if code is None:
        raise ConfigError(f"dtype {arr.dtype} has no IDX type code")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header + arr.astype(dt).tobytes())
