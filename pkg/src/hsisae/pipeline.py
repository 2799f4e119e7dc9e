"""Experiment orchestration: five classification schemes, metrics and maps.

Schemes
-------
``svm``      linear SVM on normalised spectra
``pca-svm``  linear SVM on PCA scores (components explaining ``pca.variance``)
``ae-svm``   linear SVM on the hidden layer of one autoencoder
``sae-lr``   stacked autoencoder + softmax head, fine-tuned end to end
``ssae-lr``  PCA(k) -> w x w patches -> stacked autoencoder + softmax head

Every stage sees only training rows; normalisation and PCA use unlabeled
scene statistics.  Test labels are read only when metrics are computed.
"""

import contextlib
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoenc import AeHyper
from .deepstack import FinetuneHyper, add_head, finetune, predict, pretrain_stack, train_ae
from .errors import ConfigError, ContractError, HsiSaeError, ShapeError
from .hsidata import (
    SynthSpec,
    load_cube,
    load_ground_truth,
    normalize_bands,
    stratified_split,
    synth_scene,
)
from .linsvm import SvmHyper, svm_predict, svm_train
from .numkit import derive_seed
from .specspatial import (
    FeatureScaler,
    PatchSpec,
    components_for_variance,
    extract_patches,
    pca_fit,
    pca_project,
    reduce_cube,
)

log = logging.getLogger(__name__)

SCHEMES = ("svm", "pca-svm", "ae-svm", "sae-lr", "ssae-lr")

DEFAULT_HIDDEN = {
    "ae-svm": [100],
    "sae-lr": [100, 100, 100, 100],
    "ssae-lr": [310, 100, 100, 100],
}

# index 0 (unlabeled) is black; class c uses entry 1 + (c - 1) % 15
PALETTE = (
    (0, 0, 0),
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 190),
    (0, 128, 128),
    (230, 190, 255),
    (170, 110, 40),
    (128, 0, 0),
    (255, 255, 255),
)


# --------------------------------------------------------------------------
# configuration


def _build(cls, data, section):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in section '{section}': {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{section}': {exc}") from None


@dataclass
class DataSource:
    cube: str = None
    gt: str = None
    synth: SynthSpec = None

    def to_dict(self):
        if self.synth is not None:
            return {"synth": self.synth.to_dict()}
        return {"cube": self.cube, "gt": self.gt}


@dataclass
class PcaSettings:
    k: int = None
    variance: float = None


@dataclass
class SplitSettings:
    train_fraction: float = 0.5
    seed: int = None


@dataclass
class ExperimentConfig:
    scheme: str
    data: DataSource
    seed: int = 0
    split: SplitSettings = field(default_factory=SplitSettings)
    ae: AeHyper = None
    finetune: FinetuneHyper = None
    svm: SvmHyper = None
    hidden_sizes: list = None
    pca: PcaSettings = None
    patch: PatchSpec = None
    outputs: dict = field(default_factory=dict)
    base_dir: str = "."

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        """Validate a raw config mapping and materialise every default."""
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        allowed = {"scheme", "data", "seed", "split", "ae", "finetune", "svm", "hidden_sizes", "pca", "patch", "outputs"}
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        scheme = raw.get("scheme")
        if scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {list(SCHEMES)}, got {scheme!r}")
        seed = raw.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")

        data_raw = raw.get("data")
        if not isinstance(data_raw, dict):
            raise ConfigError("section 'data' is required")
        if "synth" in data_raw:
            if set(data_raw) != {"synth"}:
                raise ConfigError("section 'data' takes either 'synth' or 'cube' + 'gt'")
            data = DataSource(synth=_build(SynthSpec, data_raw["synth"], "data.synth"))
        else:
            if set(data_raw) != {"cube", "gt"}:
                raise ConfigError("section 'data' needs both 'cube' and 'gt' paths")
            data = DataSource(cube=str(data_raw["cube"]), gt=str(data_raw["gt"]))

        split = _build(SplitSettings, raw.get("split"), "split")
        if not isinstance(split.train_fraction, (int, float)) or not 0 < split.train_fraction < 1:
            raise ConfigError(f"split.train_fraction must lie in (0, 1), got {split.train_fraction!r}")
        if split.seed is None:
            split = dataclasses.replace(split, seed=derive_seed(seed, "split"))

        cfg = cls(scheme=scheme, data=data, seed=seed, split=split, base_dir=str(base_dir))

        def with_seed(section, hyper_cls, tag):
            section_raw = dict(raw.get(section) or {})
            section_raw.setdefault("seed", derive_seed(seed, tag))
            return _build(hyper_cls, section_raw, section)

        if scheme in ("svm", "pca-svm", "ae-svm"):
            cfg.svm = with_seed("svm", SvmHyper, "svm")
        if scheme in ("ae-svm", "sae-lr", "ssae-lr"):
            cfg.ae = with_seed("ae", AeHyper, "ae")
            hidden = raw.get("hidden_sizes", DEFAULT_HIDDEN[scheme])
            if not isinstance(hidden, list) or not hidden or not all(
                isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in hidden
            ):
                raise ConfigError(f"hidden_sizes must be a non-empty list of positive integers, got {hidden!r}")
            if scheme == "ae-svm" and len(hidden) != 1:
                raise ConfigError("scheme 'ae-svm' takes exactly one hidden size")
            cfg.hidden_sizes = list(hidden)
        if scheme in ("sae-lr", "ssae-lr"):
            cfg.finetune = with_seed("finetune", FinetuneHyper, "finetune")
        if scheme == "pca-svm":
            pca = _build(PcaSettings, raw.get("pca"), "pca")
            if pca.k is None and pca.variance is None:
                pca = PcaSettings(variance=0.999)
            if pca.variance is not None and not 0 < pca.variance <= 1:
                raise ConfigError(f"pca.variance must lie in (0, 1], got {pca.variance}")
            cfg.pca = pca
        if scheme == "ssae-lr":
            pca = _build(PcaSettings, raw.get("pca"), "pca")
            if pca.variance is not None:
                raise ConfigError("scheme 'ssae-lr' takes a fixed pca.k, not pca.variance")
            cfg.pca = PcaSettings(k=3 if pca.k is None else pca.k)
            cfg.patch = _build(PatchSpec, raw.get("patch"), "patch")
        if cfg.pca is not None and cfg.pca.k is not None:
            if isinstance(cfg.pca.k, bool) or not isinstance(cfg.pca.k, int) or cfg.pca.k < 1:
                raise ConfigError(f"pca.k must be a positive integer, got {cfg.pca.k!r}")

        outputs = raw.get("outputs") or {}
        if not isinstance(outputs, dict) or set(outputs) - {"report", "map"}:
            raise ConfigError("section 'outputs' accepts only 'report' and 'map'")
        cfg.outputs = dict(outputs)
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def to_dict(self):
        """The resolved configuration, as echoed into reports."""
        out = {
            "scheme": self.scheme,
            "seed": self.seed,
            "data": self.data.to_dict(),
            "split": dataclasses.asdict(self.split),
        }
        for name in ("ae", "finetune", "svm", "pca", "patch"):
            value = getattr(self, name)
            if value is not None:
                out[name] = dataclasses.asdict(value)
        if self.hidden_sizes is not None:
            out["hidden_sizes"] = list(self.hidden_sizes)
        return out

    def resolve_path(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p


# --------------------------------------------------------------------------
# metrics, reports, maps


@dataclass
class Report:
    confusion: list
    overall_error: float
    per_class_accuracy: list
    n_test: int
    n_train: int = 0
    wall_clock_seconds: float = 0.0
    config: dict = None

    @property
    def overall_error_percent(self):
        return 100.0 * self.overall_error

    def to_dict(self):
        return {
            "confusion": self.confusion,
            "overall_error": self.overall_error,
            "overall_error_percent": self.overall_error_percent,
            "per_class_accuracy": self.per_class_accuracy,
            "n_test": self.n_test,
            "n_train": self.n_train,
            "wall_clock_seconds": self.wall_clock_seconds,
            "config": self.config,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_json())


def compute_metrics(truth, predicted, n_classes):
    """Confusion matrix (rows = truth), overall error and per-class accuracy."""
    truth = np.asarray(truth).astype(np.int64).ravel()
    predicted = np.asarray(predicted).astype(np.int64).ravel()
    if truth.shape != predicted.shape:
        raise ShapeError(f"{len(truth)} truth labels but {len(predicted)} predictions")
    if len(truth) == 0:
        raise ContractError("cannot score an empty test set")
    for name, arr in (("truth", truth), ("predicted", predicted)):
        if arr.min() < 1 or arr.max() > n_classes:
            raise ContractError(f"{name} labels must lie in 1..{n_classes}")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth - 1, predicted - 1), 1)
    n = int(confusion.sum())
    overall_error = 1.0 - float(np.trace(confusion)) / n
    row_totals = confusion.sum(axis=1)
    per_class = [
        float(confusion[c, c]) / float(row_totals[c]) if row_totals[c] else None for c in range(n_classes)
    ]
    return Report(confusion=confusion.tolist(), overall_error=overall_error, per_class_accuracy=per_class, n_test=n)


def palette_color(c):
    if c <= 0:
        return PALETTE[0]
    return PALETTE[1 + (c - 1) % (len(PALETTE) - 1)]


def render_map(predictions, gt, path=None):
    """Encode a classification map as binary PPM (P6) bytes.

    Pixels unlabeled in ``gt`` are black; a pixel predicted as class ``c``
    gets ``palette_color(c)``.  The bytes are written to ``path`` if given.
    """
    predictions = np.asarray(predictions).astype(np.int64)
    if predictions.shape != gt.labels.shape:
        raise ShapeError(f"prediction grid {predictions.shape} does not match ground truth {gt.labels.shape}")
    lut = np.array([palette_color(c) for c in range(max(int(predictions.max(initial=0)), 0) + 1)], dtype=np.uint8)
    shown = np.where(gt.labels > 0, np.maximum(predictions, 0), 0)
    rgb = lut[shown]
    data = f"P6\n{gt.width} {gt.height}\n255\n".encode("ascii") + rgb.tobytes()
    if path is not None:
        Path(path).write_bytes(data)
    return data


# --------------------------------------------------------------------------
# experiment runner


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except HsiSaeError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
            exc.args = (f"[{name}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        raise


def _load_data(cfg):
    if cfg.data.synth is not None:
        return synth_scene(cfg.data.synth)
    cube, _ = load_cube(cfg.resolve_path(cfg.data.cube))
    gt = load_ground_truth(cfg.resolve_path(cfg.data.gt), cube.width, cube.height)
    gt.check_matches(cube)
    return cube, gt


def _spectra(cube, coords):
    return cube.data[:, coords[:, 0], coords[:, 1]].T.copy()


def _deep_classifier(cfg, X_train, y_train, n_classes):
    sizes = [X_train.shape[1]] + cfg.hidden_sizes
    with stage("pretrain"):
        model = pretrain_stack(sizes, X_train, cfg.ae)
    with stage("finetune"):
        model, _ = finetune(add_head(model, n_classes), X_train, y_train, cfg.finetune)
    return lambda X: predict(model, X)


def _fit_scheme(cfg, cube, gt, split):
    """Train the configured scheme on training rows only.

    Returns ``(featurize, classify)``: ``featurize`` maps pixel coordinates to
    feature rows, ``classify`` maps feature rows to labels.
    """
    n_classes = gt.n_classes
    train = split.train
    # the only label read before scoring: training rows
    y_train = gt.labels[train[:, 0], train[:, 1]].astype(np.int64)

    if cfg.scheme == "svm":
        featurize = lambda coords: _spectra(cube, coords)
        with stage("svm"):
            model = svm_train(featurize(train), y_train, cfg.svm, n_classes=n_classes)
        return featurize, lambda X: svm_predict(model, X)

    if cfg.scheme == "pca-svm":
        with stage("pca"):
            if cfg.pca.k is not None:
                pca = pca_fit(cube, min(cfg.pca.k, cube.bands))
            else:
                full = pca_fit(cube, cube.bands)
                pca = full.truncate(components_for_variance(full.eigenvalues, cfg.pca.variance))
            log.info("pca-svm keeps %d components", pca.k)
            scaler = FeatureScaler.fit(pca_project(pca, _spectra(cube, train)))
        featurize = lambda coords: scaler.transform(pca_project(pca, _spectra(cube, coords)))
        with stage("svm"):
            model = svm_train(featurize(train), y_train, cfg.svm, n_classes=n_classes)
        return featurize, lambda X: svm_predict(model, X)

    if cfg.scheme == "ae-svm":
        with stage("pretrain"):
            ae, _ = train_ae(cube.bands, cfg.hidden_sizes[0], _spectra(cube, train), cfg.ae)
        featurize = lambda coords: ae.encode(_spectra(cube, coords))
        with stage("svm"):
            model = svm_train(featurize(train), y_train, cfg.svm, n_classes=n_classes)
        return featurize, lambda X: svm_predict(model, X)

    if cfg.scheme == "sae-lr":
        featurize = lambda coords: _spectra(cube, coords)
        return featurize, _deep_classifier(cfg, featurize(train), y_train, n_classes)

    if cfg.scheme == "ssae-lr":
        with stage("pca"):
            if cfg.pca.k > cube.bands:
                raise ContractError(f"pca.k={cfg.pca.k} exceeds the cube's {cube.bands} bands")
            pca = pca_fit(cube, cfg.pca.k)
            reduced = reduce_cube(cube, pca)
        with stage("patches"):
            scaler = FeatureScaler.fit(extract_patches(reduced, train, cfg.patch))
        featurize = lambda coords: scaler.transform(extract_patches(reduced, coords, cfg.patch))
        return featurize, _deep_classifier(cfg, featurize(train), y_train, n_classes)

    raise ConfigError(f"unknown scheme {cfg.scheme!r}")


def run_experiment(config, map_path=None, report_path=None):
    """Run one scheme end to end and return its :class:`Report`.

    ``map_path`` / ``report_path`` override ``config.outputs``.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    start = time.perf_counter()
    with stage("data"):
        cube, gt = _load_data(cfg)
    with stage("normalize"):
        cube = normalize_bands(cube)
    with stage("split"):
        split = stratified_split(gt, cfg.split.train_fraction, cfg.split.seed)

    featurize, classify = _fit_scheme(cfg, cube, gt, split)

    with stage("predict"):
        predicted = classify(featurize(split.test))
    with stage("metrics"):
        truth = gt.labels[split.test[:, 0], split.test[:, 1]]
        report = compute_metrics(truth, predicted, gt.n_classes)
    report.n_train = int(len(split.train))
    report.config = cfg.to_dict()

    map_path = map_path or cfg.outputs.get("map")
    if map_path:
        with stage("map"):
            grid = np.zeros(gt.labels.shape, dtype=np.int64)
            labeled = gt.labeled_coords()
            grid[labeled[:, 0], labeled[:, 1]] = classify(featurize(labeled))
            render_map(grid, gt, map_path)

    report.wall_clock_seconds = time.perf_counter() - start
    report_path = report_path or cfg.outputs.get("report")
    if report_path:
        report.save(report_path)
    log.info("%s: overall error %.3f%%", cfg.scheme, report.overall_error_percent)
    return report
