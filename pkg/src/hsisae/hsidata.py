"""Hyperspectral cubes, ground truth, normalisation, splitting and synthetic scenes.

On-disk cube format (``.hsc``): one UTF-8 JSON header line::

    {"magic":"HSC1","width":W,"height":H,"bands":B,"dtype":"f32","layout":"bsq"}

terminated by ``\\n``, followed by ``W*H*B`` little-endian float32 values in
band-sequential order (band-major, then row-major inside each band).

Ground truth is read from a binary PGM (P5, 8- or 16-bit samples) or from a
CSV of ``row,col,label`` lines.  Label 0 means unlabeled.
"""

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from ._binio import header_int, read_blob, split_payload
from .errors import ContractError, DataError, HeaderError, MissingFileError, ShapeError
from .numkit import Rng, derive_seed

HSC_MAGIC = "HSC1"


@dataclass(frozen=True, eq=False)
class HsiCube:
    """A radiance cube stored band-sequentially as ``data[band, row, col]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"cube data must be (bands, height, width) with positive sizes, got {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def pixels(self):
        """Spectra as an (height*width, bands) matrix in raster order."""
        return self.data.reshape(self.bands, -1).T.copy()

    def spectrum(self, row, col):
        return self.data[:, row, col].copy()

    @classmethod
    def from_pixels(cls, pixels, height, width):
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 2 or pixels.shape[0] != height * width:
            raise ShapeError(f"expected ({height * width}, bands) pixel matrix, got {pixels.shape}")
        return cls(pixels.T.reshape(pixels.shape[1], height, width))

    def __eq__(self, other):
        return isinstance(other, HsiCube) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per-pixel labels ``labels[row, col]``; 0 is unlabeled, classes are 1..n_classes."""

    labels: np.ndarray
    n_classes: int = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeError(f"ground truth must be 2-D (height, width), got {labels.shape}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise DataError("ground truth labels must be integers")
        labels = labels.astype(np.int64)
        if np.any(labels < 0):
            raise DataError("ground truth labels must be >= 0")
        top = int(labels.max()) if labels.size else 0
        n = top if self.n_classes is None else int(self.n_classes)
        if top > n:
            raise DataError(f"label {top} exceeds declared class count {n}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_classes", n)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def class_counts(self):
        """Number of labeled pixels per class, index 0 = class 1."""
        return np.bincount(self.labels.ravel(), minlength=self.n_classes + 1)[1:]

    def labeled_coords(self):
        rows, cols = np.nonzero(self.labels)
        return np.stack([rows, cols], axis=1)

    def check_matches(self, cube):
        if (self.height, self.width) != (cube.height, cube.width):
            raise ShapeError(
                f"ground truth is {self.width}x{self.height} but cube is {cube.width}x{cube.height}"
            )

    def __eq__(self, other):
        return (
            isinstance(other, GroundTruth)
            and self.n_classes == other.n_classes
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class SplitIndex:
    """Disjoint train/test pixel coordinates, each an (n, 2) array of (row, col)."""

    train: np.ndarray
    test: np.ndarray
    seed: int

    def __eq__(self, other):
        return (
            isinstance(other, SplitIndex)
            and self.seed == other.seed
            and np.array_equal(self.train, other.train)
            and np.array_equal(self.test, other.test)
        )


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic scene.

    ``smoothness`` is the Gaussian width (in bands) used to smooth each class
    mean spectrum; ``blob_scale`` is the Gaussian width (in pixels) of the
    fields whose argmax defines the class regions.  ``brightness`` scales a
    smooth multiplicative illumination field (0 disables it).

    With ``modes > 1`` every class owns several spectral modes, used in
    spatially contiguous sub-regions of its blobs.  Mode ``j`` of class ``c``
    is the class mean shifted by ``mode_radius`` along a circle spanned by two
    smooth directions shared by all classes, at angle ``2*pi*(c + C*j)/(C*M)``.
    The modes of different classes interleave around the circle, so classes
    are not linearly separable once ``mode_radius`` dominates the class
    contrast.  ``contrast`` scales each class mean's deviation from the
    average of all class means.
    """

    width: int = 32
    height: int = 32
    bands: int = 30
    n_classes: int = 4
    smoothness: float = 3.0
    noise: float = 0.05
    blob_scale: float = 3.0
    labeled_fraction: float = 0.5
    seed: int = 0
    brightness: float = 0.0
    modes: int = 1
    mode_radius: float = 0.0
    contrast: float = 1.0

    def __post_init__(self):
        for name in ("width", "height", "bands"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"SynthSpec.{name} must be >= 1")
        if self.n_classes < 2:
            raise ContractError(f"SynthSpec.n_classes must be >= 2, got {self.n_classes}")
        if self.noise < 0:
            raise ContractError(f"SynthSpec.noise must be >= 0, got {self.noise}")
        if not 0 < self.labeled_fraction <= 1:
            raise ContractError(f"SynthSpec.labeled_fraction must be in (0, 1], got {self.labeled_fraction}")
        if self.smoothness < 0 or self.blob_scale < 0 or self.brightness < 0 or self.mode_radius < 0:
            raise ContractError("SynthSpec smoothness, blob_scale, brightness and mode_radius must be >= 0")
        if not self.contrast > 0:
            raise ContractError(f"SynthSpec.contrast must be > 0, got {self.contrast}")
        if self.modes < 1:
            raise ContractError(f"SynthSpec.modes must be >= 1, got {self.modes}")
        if self.n_classes > self.width * self.height:
            raise ContractError("SynthSpec has more classes than pixels")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown SynthSpec fields: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------
# cube I/O


def save_cube(cube, path):
    """Write ``cube`` in HSC format (values are stored as float32)."""
    header = (
        f'{{"magic":"{HSC_MAGIC}","width":{cube.width},"height":{cube.height},'
        f'"bands":{cube.bands},"dtype":"f32","layout":"bsq"}}\n'
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def load_cube(path):
    """Read an HSC file, returning ``(cube, header)``."""
    header, payload = read_blob(path)
    if header.get("magic") != HSC_MAGIC:
        raise HeaderError(f"{path}: header field 'magic' must be {HSC_MAGIC!r}, got {header.get('magic')!r}")
    if header.get("dtype") != "f32":
        raise HeaderError(f"{path}: header field 'dtype' must be 'f32', got {header.get('dtype')!r}")
    if header.get("layout") != "bsq":
        raise HeaderError(f"{path}: header field 'layout' must be 'bsq', got {header.get('layout')!r}")
    w = header_int(header, "width", path)
    h = header_int(header, "height", path)
    b = header_int(header, "bands", path)
    (flat,) = split_payload(payload, [w * h * b], path, dtype="<f4")
    return HsiCube(flat.reshape(b, h, w)), header


# --------------------------------------------------------------------------
# ground truth I/O


def _pgm_tokens(raw, count):
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise HeaderError("PGM header is truncated")
        tokens.append(raw[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"file not found: {path}")
    raw = path.read_bytes()
    tokens, offset = _pgm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise HeaderError(f"{path}: PGM magic must be 'P5', got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise HeaderError(f"{path}: PGM width/height/maxval must be integers") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise HeaderError(f"{path}: PGM header has invalid width/height/maxval {w}/{h}/{maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    body = raw[offset:]
    expected = w * h * np.dtype(dtype).itemsize
    if len(body) != expected:
        raise DataError(f"{path}: PGM raster holds {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.int64)


def write_pgm(labels, path):
    """Write labels as a 16-bit binary PGM."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise DataError("labels must lie in 0..65535 for a 16-bit PGM")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(labels.astype(">u2").tobytes())


def read_label_csv(path, width, height):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"file not found: {path}")
    labels = np.zeros((height, width), dtype=np.int64)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            try:
                r, c, lab = (int(v) for v in row)
            except ValueError:
                if lineno == 1:
                    continue  # header line
                raise DataError(f"{path}:{lineno}: expected 'row,col,label', got {row!r}") from None
            if not (0 <= r < height and 0 <= c < width):
                raise DataError(f"{path}:{lineno}: pixel ({r}, {c}) lies outside {width}x{height}")
            labels[r, c] = lab
    return labels


def load_ground_truth(path, width=None, height=None):
    """Load labels from PGM or CSV (CSV needs ``width`` and ``height``)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        labels = read_pgm(path)
        if width is not None and labels.shape != (height, width):
            raise ShapeError(
                f"{path}: ground truth is {labels.shape[1]}x{labels.shape[0]}, expected {width}x{height}"
            )
    else:
        if width is None or height is None:
            raise ContractError("CSV ground truth needs width and height")
        labels = read_label_csv(path, width, height)
    return GroundTruth(labels)


def save_ground_truth(gt, path):
    write_pgm(gt.labels, path)


# --------------------------------------------------------------------------
# preprocessing


def normalize_bands(cube):
    """Min-max scale every band to [0, 1]; constant bands become 0."""
    flat = cube.data.reshape(cube.bands, -1)
    lo = flat.min(axis=1, keepdims=True)
    hi = flat.max(axis=1, keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (flat - lo) / safe, 0.0)
    np.clip(out, 0.0, 1.0, out=out)
    return HsiCube(out.reshape(cube.data.shape))


def _train_count(n, fraction):
    k = math.ceil(round(fraction * n, 9))
    if n >= 2:
        k = min(max(k, 1), n - 1)
    return k


def stratified_split(gt, train_fraction=0.5, seed=0):
    """Per-class seeded split: ceil(fraction * n_c) pixels of each class train.

    For classes with at least two pixels the train count is clamped to
    ``n_c - 1`` so that both sides always see the class.
    """
    if not 0 < train_fraction < 1:
        raise ContractError(f"train_fraction must be in (0, 1), got {train_fraction}")
    counts = gt.class_counts()
    empty = [c + 1 for c, n in enumerate(counts) if n == 0]
    if empty:
        raise ContractError(f"classes {empty} have no labeled pixels")
    flat = gt.labels.ravel()
    train_idx = []
    test_idx = []
    for c in range(1, gt.n_classes + 1):
        members = np.flatnonzero(flat == c)
        order = Rng(derive_seed(seed, "split", c)).permutation(len(members))
        k = _train_count(len(members), train_fraction)
        train_idx.append(members[order[:k]])
        test_idx.append(members[order[k:]])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    w = gt.width
    as_coords = lambda idx: np.stack([idx // w, idx % w], axis=1).astype(np.int64)
    return SplitIndex(as_coords(train_idx), as_coords(test_idx), int(seed))


# --------------------------------------------------------------------------
# synthetic scenes


def _standardize(a):
    a = a - a.mean()
    sd = a.std()
    return a / sd if sd > 0 else a


def _smooth_field(rng, shape, scale):
    field_ = rng.normal(shape)
    if scale > 0:
        field_ = gaussian_filter(field_, sigma=scale, mode="reflect")
    return _standardize(field_)


def _smooth_profile(rng, spec):
    z = rng.normal(spec.bands)
    if spec.smoothness > 0 and spec.bands > 1:
        z = gaussian_filter1d(z, sigma=spec.smoothness, mode="nearest")
    z = z - z.mean()
    peak = np.max(np.abs(z))
    return z / peak if peak > 0 else z


def class_mean_spectra(spec):
    """Smooth per-class mean spectra in [0.1, 0.9], shape (n_classes, bands)."""
    rng = Rng(derive_seed(spec.seed, "means"))
    means = np.empty((spec.n_classes, spec.bands))
    for c in range(spec.n_classes):
        z = _smooth_profile(rng, spec)
        level = rng.uniform(-0.2, 0.2)
        means[c] = np.clip(0.5 + level + 0.2 * z, 0.1, 0.9)
    if spec.contrast != 1.0:
        center = means.mean(axis=0)
        means = center + spec.contrast * (means - center)
    return means


def mode_spectra(spec):
    """Spectra of every (class, mode) pair, shape (n_classes, modes, bands)."""
    means = class_mean_spectra(spec)
    out = np.repeat(means[:, None, :], spec.modes, axis=1)
    if spec.modes > 1 and spec.mode_radius > 0:
        rng = Rng(derive_seed(spec.seed, "mode-directions"))
        d1 = _smooth_profile(rng, spec)
        d2 = _smooth_profile(rng, spec)
        d2 = d2 - (d2 @ d1) / max(d1 @ d1, 1e-300) * d1
        d2 = d2 / max(np.max(np.abs(d2)), 1e-300)
        total = spec.n_classes * spec.modes
        for c in range(spec.n_classes):
            for j in range(spec.modes):
                theta = 2.0 * np.pi * (c + spec.n_classes * j) / total
                out[c, j] += spec.mode_radius * (np.cos(theta) * d1 + np.sin(theta) * d2)
    return out


def class_map(spec):
    """Full (height, width) class map of contiguous blobs, values 1..n_classes."""
    rng = Rng(derive_seed(spec.seed, "blobs"))
    fields = np.stack(
        [_smooth_field(rng, (spec.height, spec.width), spec.blob_scale) for _ in range(spec.n_classes)]
    )
    regions = np.argmax(fields, axis=0) + 1
    present = np.unique(regions)
    if len(present) < spec.n_classes:
        # force absent classes in at the pixel where their field dominates most
        for c in range(1, spec.n_classes + 1):
            if c in present:
                continue
            margin = fields[c - 1] - fields.max(axis=0)
            regions.flat[int(np.argmax(margin))] = c
    return regions


def synth_scene(spec):
    """Generate a deterministic synthetic scene ``(cube, ground_truth)``.

    Each pixel holds ``brightness(r, c) * mean[class] + noise * N(0, 1)``,
    where the brightness field is smooth in space.  Cube values are rounded to
    float32 precision so the scene survives an HSC round trip unchanged.
    """
    regions = class_map(spec)
    spectra = mode_spectra(spec)
    h, w = spec.height, spec.width
    mode_idx = np.zeros((h, w), dtype=np.int64)
    if spec.modes > 1:
        mode_rng = Rng(derive_seed(spec.seed, "modes"))
        mode_fields = np.stack([_smooth_field(mode_rng, (h, w), spec.blob_scale) for _ in range(spec.modes)])
        mode_idx = np.argmax(mode_fields, axis=0)

    light = np.ones((h, w))
    if spec.brightness > 0:
        bright_rng = Rng(derive_seed(spec.seed, "brightness"))
        light = 1.0 + spec.brightness * _smooth_field(bright_rng, (h, w), max(spec.blob_scale, 1.0))
        light = np.clip(light, 0.05, None)

    pixels = spectra[regions.ravel() - 1, mode_idx.ravel()] * light.reshape(-1, 1)
    if spec.noise > 0:
        noise_rng = Rng(derive_seed(spec.seed, "noise"))
        pixels = pixels + spec.noise * noise_rng.normal((h * w, spec.bands))
    pixels = pixels.astype(np.float32).astype(np.float64)
    cube = HsiCube.from_pixels(pixels, h, w)

    n_total = h * w
    n_lab = max(spec.n_classes, int(round(spec.labeled_fraction * n_total)))
    order = Rng(derive_seed(spec.seed, "labeled")).permutation(n_total)
    flat_regions = regions.ravel()
    chosen = list(order[:n_lab])
    rest = list(order[n_lab:])
    chosen_classes = flat_regions[chosen]
    for c in range(1, spec.n_classes + 1):
        if np.any(chosen_classes == c):
            continue
        incoming = next(i for i in rest if flat_regions[i] == c)
        counts = np.bincount(chosen_classes, minlength=spec.n_classes + 1)
        donor = int(np.argmax(counts))
        pos = max(j for j, cls in enumerate(chosen_classes) if cls == donor)
        chosen[pos] = incoming
        chosen_classes = flat_regions[chosen]
    labels = np.zeros(n_total, dtype=np.int64)
    labels[chosen] = flat_regions[chosen]
    gt = GroundTruth(labels.reshape(h, w), n_classes=spec.n_classes)
    return cube, gt
