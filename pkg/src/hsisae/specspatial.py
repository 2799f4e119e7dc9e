"""PCA along the spectral axis and square-neighbourhood patch features.

Patches use clamp-to-edge borders and are flattened window-row first, then
window-column, with the component index varying fastest.
"""

from dataclasses import dataclass

import numpy as np

from ._binio import expect_type, header_int, read_blob, split_payload, write_blob
from .errors import ContractError, ShapeError
from .hsidata import HsiCube
from .numkit import sym_eig


@dataclass
class PcaModel:
    mean: np.ndarray  # (bands,)
    components: np.ndarray  # (bands, k), columns are principal axes
    eigenvalues: np.ndarray  # (k,), descending

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.components = np.asarray(self.components, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        if (
            self.components.ndim != 2
            or self.components.shape[0] != self.mean.shape[0]
            or self.eigenvalues.shape != (self.components.shape[1],)
        ):
            raise ShapeError(
                f"inconsistent PCA shapes mean={self.mean.shape}, components={self.components.shape}, "
                f"eigenvalues={self.eigenvalues.shape}"
            )

    @property
    def bands(self):
        return self.components.shape[0]

    @property
    def k(self):
        return self.components.shape[1]

    def truncate(self, k):
        if not 1 <= k <= self.k:
            raise ContractError(f"cannot keep {k} of {self.k} components")
        return PcaModel(self.mean, self.components[:, :k].copy(), self.eigenvalues[:k].copy())


@dataclass(frozen=True)
class PatchSpec:
    window: int = 7
    border: str = "clamp"

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ContractError(f"patch window must be odd and >= 1, got {self.window}")
        if self.border != "clamp":
            raise ContractError(f"unsupported border policy {self.border!r} (only 'clamp')")


def _fix_signs(vectors):
    """Flip each column so that its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def pca_fit_pixels(pixels, k):
    """PCA of an (n, bands) matrix; covariance uses the n - 1 denominator."""
    pixels = np.asarray(pixels, dtype=np.float64)
    n, bands = pixels.shape
    if n < 2:
        raise ContractError("PCA needs at least 2 pixels")
    if not 1 <= k <= bands:
        raise ContractError(f"k must lie in 1..{bands}, got {k}")
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    evals, evecs = sym_eig(cov)
    evals = np.maximum(evals[:k], 0.0)
    return PcaModel(mean, _fix_signs(evecs[:, :k]), evals)


def pca_fit(cube, k):
    """Fit PCA over every pixel of ``cube`` and keep the top ``k`` axes."""
    if cube.width * cube.height < 2:
        raise ContractError("PCA needs at least 2 pixels")
    if not 1 <= k <= cube.bands:
        raise ContractError(f"k must lie in 1..{cube.bands}, got {k}")
    return pca_fit_pixels(cube.pixels(), k)


def components_for_variance(eigenvalues, fraction):
    """Smallest k whose leading eigenvalues explain at least ``fraction`` of the total."""
    ev = np.maximum(np.asarray(eigenvalues, dtype=np.float64), 0.0)
    total = ev.sum()
    if total <= 0:
        return 1
    explained = np.cumsum(ev) / total
    return int(min(len(ev), np.searchsorted(explained, fraction - 1e-12) + 1))


def pca_project(model, spectrum):
    """Project one spectrum (or an (n, bands) matrix) onto the components."""
    x = np.asarray(spectrum, dtype=np.float64)
    if x.shape[-1] != model.bands:
        raise ShapeError(f"spectrum has {x.shape[-1]} bands, PCA model expects {model.bands}")
    return (x - model.mean) @ model.components


def pca_reconstruct(model, scores):
    return np.asarray(scores) @ model.components.T + model.mean


def reduce_cube(cube, model):
    """Replace every pixel spectrum by its PCA scores."""
    if cube.bands != model.bands:
        raise ShapeError(f"cube has {cube.bands} bands, PCA model expects {model.bands}")
    return HsiCube.from_pixels(pca_project(model, cube.pixels()), cube.height, cube.width)


def extract_patches(cube, coords, spec=PatchSpec()):
    """Flattened patches for an (n, 2) array of (row, col) centres."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    rows, cols = coords[:, 0], coords[:, 1]
    if np.any(rows < 0) or np.any(rows >= cube.height) or np.any(cols < 0) or np.any(cols >= cube.width):
        raise ContractError(f"patch centre outside the {cube.width}x{cube.height} image")
    half = spec.window // 2
    offsets = np.arange(-half, half + 1)
    rr = np.clip(rows[:, None] + offsets[None, :], 0, cube.height - 1)
    cc = np.clip(cols[:, None] + offsets[None, :], 0, cube.width - 1)
    hwk = np.moveaxis(cube.data, 0, -1)
    patches = hwk[rr[:, :, None], cc[:, None, :]]
    return patches.reshape(len(coords), -1)


def extract_patch(cube, row, col, spec=PatchSpec()):
    return extract_patches(cube, [[row, col]], spec)[0]


@dataclass
class FeatureScaler:
    """Per-feature min-max scaling fitted on training rows; outputs clipped to [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (X - self.lo) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)


def _labels_at(gt, coords):
    return gt.labels[coords[:, 0], coords[:, 1]].astype(np.int64)


def build_spatial_dataset(cube, gt, pca, split, spec=PatchSpec(), return_scaler=False):
    """Patch features of the PCA-reduced cube for both sides of ``split``.

    Returns ``(X_train, y_train, X_test, y_test)`` (plus the fitted
    :class:`FeatureScaler` when ``return_scaler`` is set).
    """
    gt.check_matches(cube)
    if len(split.train) == 0 or len(split.test) == 0:
        raise ContractError("both sides of the split must be non-empty")
    reduced = reduce_cube(cube, pca)
    raw_train = extract_patches(reduced, split.train, spec)
    raw_test = extract_patches(reduced, split.test, spec)
    scaler = FeatureScaler.fit(raw_train)
    out = (
        scaler.transform(raw_train),
        _labels_at(gt, split.train),
        scaler.transform(raw_test),
        _labels_at(gt, split.test),
    )
    if return_scaler:
        return out + (scaler,)
    return out


def save_pca(model, path):
    header = {"type": "pca", "bands": model.bands, "k": model.k}
    write_blob(path, header, [model.mean, model.components, model.eigenvalues])


def load_pca(path):
    header, payload = read_blob(path)
    expect_type(header, "pca", path)
    bands = header_int(header, "bands", path)
    k = header_int(header, "k", path)
    mean, comps, evals = split_payload(payload, [bands, bands * k, k], path)
    return PcaModel(mean, comps.reshape(bands, k), evals)
