"""Dataset containers, text loaders, and the preprocessing pipelines for
image patches and the low-dimensional UCI tables."""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BINARY = "binary"
REAL = "real"


class DataError(ValueError):
    """Malformed or out-of-domain dataset content."""


@dataclass
class Dataset:
    name: str
    D: int
    kind: str  # 'binary' | 'real'
    train: np.ndarray
    valid: np.ndarray = field(default=None)
    test: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.zeros((0, self.D))
        if self.test is None:
            self.test = np.zeros((0, self.D))
        for split in (self.train, self.valid, self.test):
            if split.ndim != 2 or split.shape[1] != self.D:
                raise DataError(f"{self.name}: split width {split.shape} != D={self.D}")

    def splits(self):
        return {"train": self.train, "valid": self.valid, "test": self.test}


def default_data_dir():
    """Where prepared datasets live: $NADEKIT_DATA or ./data."""
    return Path(os.environ.get("NADEKIT_DATA", "data"))


def _parse_matrix(text, path, kind):
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise DataError(f"{path}: row {lineno} has {len(parts)} columns, expected {width}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            for col, p in enumerate(parts, start=1):
                try:
                    float(p)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {col}: {p!r} is not numeric") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    X = np.asarray(rows, dtype=np.float64)
    if kind == BINARY:
        bad = (X != 0.0) & (X != 1.0)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise DataError(f"{path}: row {i + 1}, column {j + 1}: {X[i, j]} is not binary")
    return X


def load_split_file(path, kind):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    return _parse_matrix(path.read_text(), path, kind)


def load_dataset(path, kind):
    """Load whitespace-separated numeric text, one example per row.

    A directory is expected to hold train.txt (required) plus optional
    valid.txt/test.txt; a single file becomes the training split.
    """
    if kind not in (BINARY, REAL):
        raise DataError(f"kind must be 'binary' or 'real', got {kind!r}")
    path = Path(path)
    if path.is_dir():
        train = load_split_file(path / "train.txt", kind)
        valid = load_split_file(path / "valid.txt", kind) if (path / "valid.txt").exists() else None
        test = load_split_file(path / "test.txt", kind) if (path / "test.txt").exists() else None
        D = train.shape[1]
        for name, split in (("valid", valid), ("test", test)):
            if split is not None and split.shape[1] != D:
                raise DataError(f"{path}/{name}.txt: width {split.shape[1]} != train width {D}")
        return Dataset(name=path.name, D=D, kind=kind, train=train, valid=valid, test=test)
    train = load_split_file(path, kind)
    return Dataset(name=path.stem, D=train.shape[1], kind=kind, train=train)


def save_split(path, X):
    with open(path, "w") as fh:
        for row in np.asarray(X, dtype=np.float64):
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def patch_pipeline(images, n_patches, patch_size=8, rng=None, name="patches"):
    """Random image patches prepared for continuous density estimation.

    Per patch: add Uniform[0,1) noise to the integer brightnesses, divide by
    256, subtract the patch mean, and drop the bottom-right pixel (which the
    mean subtraction makes perfectly predictable).  8x8 patches give D=63.
    Deterministic for a fixed generator state.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    images = [np.asarray(im) for im in images]
    for im in images:
        if im.ndim != 2:
            raise DataError("patch pipeline expects 2-D grayscale images")
        if im.shape[0] < patch_size or im.shape[1] < patch_size:
            raise DataError(f"patch size {patch_size} exceeds image shape {im.shape}")
        if np.any(im < 0) or np.any(im > 255) or not np.issubdtype(im.dtype, np.integer):
            raise DataError("images must carry integer brightness values in 0..255")

    D = patch_size * patch_size
    out = np.empty((n_patches, D - 1))
    for n in range(n_patches):
        im = images[rng.integers(0, len(images))]
        r = rng.integers(0, im.shape[0] - patch_size + 1)
        c = rng.integers(0, im.shape[1] - patch_size + 1)
        patch = im[r : r + patch_size, c : c + patch_size].astype(np.float64)
        vals = (patch + rng.random((patch_size, patch_size))) / 256.0
        vals -= vals.mean()
        out[n] = vals.ravel()[:-1]  # raster order; drop the bottom-right pixel
    return Dataset(name=name, D=D - 1, kind=REAL, train=out)


def drop_discrete_and_correlated(raw, correlation_threshold=0.98):
    """Column filter used before standardization: discrete-valued attributes
    (every observed value integral) are removed, then one attribute from every
    pair with |Pearson correlation| above the threshold (the later column)."""
    X = np.asarray(raw, dtype=np.float64)
    keep = [j for j in range(X.shape[1]) if not np.allclose(X[:, j], np.round(X[:, j]))]
    if not keep:
        raise DataError("no continuous columns survive the discrete-value filter")
    X = X[:, keep]
    corr = np.corrcoef(X, rowvar=False)
    dropped = set()
    for i in range(X.shape[1]):
        if i in dropped:
            continue
        for j in range(i + 1, X.shape[1]):
            if j not in dropped and abs(corr[i, j]) > correlation_threshold:
                dropped.add(j)
    cols = [j for j in range(X.shape[1]) if j not in dropped]
    return X[:, cols]


def uci_preprocess(raw, correlation_threshold=0.98, n_folds=10, seed=0, name="uci"):
    """The 10-fold protocol for the small UCI tables.

    Drops discrete and near-duplicate attributes, then emits n_folds Datasets:
    each uses 10% of the rows as test, the rest as training with a ninth of
    that training block carved out as validation.  Every fold is standardized
    by its own training-block statistics (validation included, test excluded).
    """
    X = drop_discrete_and_correlated(raw, correlation_threshold)
    N, D = X.shape
    rng = np.random.default_rng(seed)
    perm = rng.permutation(N)
    fold_edges = np.linspace(0, N, n_folds + 1).astype(int)
    folds = []
    for f in range(n_folds):
        test_idx = perm[fold_edges[f] : fold_edges[f + 1]]
        train_idx = np.concatenate([perm[: fold_edges[f]], perm[fold_edges[f + 1] :]])
        n_valid = len(train_idx) // 9
        valid_idx = train_idx[len(train_idx) - n_valid :]
        fit_idx = train_idx[: len(train_idx) - n_valid]

        mean = X[train_idx].mean(axis=0)
        std = X[train_idx].std(axis=0)
        if np.any(std < 1e-12):
            j = int(np.argmax(std < 1e-12))
            raise DataError(f"column {j} has zero variance in fold {f}")
        folds.append(
            Dataset(
                name=f"{name}-fold{f}",
                D=D,
                kind=REAL,
                train=(X[fit_idx] - mean) / std,
                valid=(X[valid_idx] - mean) / std,
                test=(X[test_idx] - mean) / std,
            )
        )
    return folds


def write_pgm_grid(path, samples, shape, cols=10, gap=1):
    """Emit binary samples (or probabilities in [0,1]) as a P5 PGM grid."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    h, w = shape
    if h * w != samples.shape[1]:
        raise DataError(f"shape {shape} does not match row width {samples.shape[1]}")
    cols = min(cols, max(n, 1))
    rows = (n + cols - 1) // cols if n else 1
    canvas = np.zeros((rows * (h + gap) - gap if n else h, cols * (w + gap) - gap), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        img = np.clip(samples[i].reshape(h, w) * 255.0, 0, 255).astype(np.uint8)
        canvas[r * (h + gap) : r * (h + gap) + h, c * (w + gap) : c * (w + gap) + w] = img
    with open(path, "wb") as fh:
        fh.write(f"P5\n{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode())
        fh.write(canvas.tobytes())
