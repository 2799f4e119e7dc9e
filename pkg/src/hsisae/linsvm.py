"""One-vs-rest linear SVM trained by primal subgradient descent.

Each class ``c`` gets a scorer ``w_c . x + b_c`` minimising

    lam/2 * ||w_c||^2 + mean_i max(0, 1 - s_i (w_c . x_i + b_c))

with ``s_i = +1`` for class ``c`` and ``-1`` otherwise.  Every epoch visits
the rows in a seeded random order, taking one subgradient step per row with
step size ``eta0 / (1 + t * lam)`` (``t`` counts steps).  The C binary
problems share the visiting order and are updated together.

Subgradient steps do not decrease the objective monotonically, so at every
epoch boundary each class keeps the best iterate seen so far (starting from
``w = 0, b = 0``); the returned model holds those iterates.

Training rows are centred on their mean before SGD.  The bias is not
regularised, so this only reparametrises the problem; the returned bias is
shifted back to apply to uncentred inputs.
"""

from dataclasses import dataclass

import numpy as np

from ._binio import expect_type, header_int, read_blob, split_payload, write_blob
from .errors import ContractError, DivergenceError, HeaderError, ShapeError
from .numkit import Rng, derive_seed


@dataclass(frozen=True)
class SvmHyper:
    lam: float = 1e-4
    eta0: float = 1.0
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ContractError(f"lam must be > 0, got {self.lam}")
        if not self.eta0 > 0:
            raise ContractError(f"eta0 must be > 0, got {self.eta0}")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")


@dataclass
class LinearSvmModel:
    W: np.ndarray  # (C, d)
    b: np.ndarray  # (C,)
    lam: float

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"inconsistent SVM shapes W={self.W.shape}, b={self.b.shape}")

    @property
    def n_classes(self):
        return self.W.shape[0]

    @property
    def d(self):
        return self.W.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, LinearSvmModel)
            and self.lam == other.lam
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.b, other.b)
        )


def _signs(y, n_classes):
    return np.where(y[:, None] == np.arange(1, n_classes + 1)[None, :], 1.0, -1.0)


def objectives(W, b, X, y, lam):
    """Per-class regularised hinge objective, shape (C,)."""
    S = _signs(y, W.shape[0])
    margins = S * (X @ W.T + b)
    hinge = np.maximum(0.0, 1.0 - margins).mean(axis=0)
    return 0.5 * lam * np.sum(W * W, axis=1) + hinge


def svm_train(X, y, hyper, n_classes=None, return_history=False):
    """Train a one-vs-rest linear SVM on rows ``X`` with labels ``y`` in 1..C.

    With ``return_history`` the per-epoch objectives of the kept iterates
    (shape ``(epochs, C)``) are returned as well.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeError(f"X has shape {X.shape} but y has shape {y.shape}")
    n, d = X.shape
    C = int(y.max()) if n_classes is None else int(n_classes)
    if y.size == 0 or y.min() < 1 or y.max() > C:
        raise ContractError(f"labels must lie in 1..{C}")
    missing = sorted(set(range(1, C + 1)) - set(np.unique(y).tolist()))
    if missing:
        raise ContractError(f"classes {missing} have no training examples")
    if n < C:
        raise ContractError(f"need at least {C} rows, got {n}")

    # Rows are centred on the training mean; since b is unregularised this is an
    # exact reparametrisation (b_orig = b - W @ mu) that conditions SGD better.
    mu = X.mean(axis=0)
    Xc = X - mu
    S = _signs(y, C)
    W = np.zeros((C, d))
    b = np.zeros(C)
    best_W = W.copy()
    best_b = b.copy()
    best_obj = objectives(W, b, Xc, y, hyper.lam)
    history = []
    rng = Rng(derive_seed(hyper.seed, "svm"))
    lam = hyper.lam
    t = 0
    for epoch in range(1, hyper.epochs + 1):
        for i in rng.permutation(n):
            eta = hyper.eta0 / (1.0 + t * lam)
            t += 1
            x = Xc[i]
            s = S[i]
            viol = s * (W @ x + b) < 1.0
            W *= 1.0 - eta * lam
            if viol.any():
                step = eta * s[viol]
                W[viol] += step[:, None] * x
                b[viol] += step
        obj = objectives(W, b, Xc, y, lam)
        if not np.all(np.isfinite(obj)):
            raise DivergenceError(f"SVM training diverged at epoch {epoch}", epoch=epoch)
        better = obj < best_obj
        best_W[better] = W[better]
        best_b[better] = b[better]
        best_obj = np.where(better, obj, best_obj)
        history.append(best_obj.copy())
    model = LinearSvmModel(best_W, best_b - best_W @ mu, lam)
    if return_history:
        return model, np.array(history)
    return model


def decision_function(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ShapeError(f"SVM expects {model.d} columns, got shape {X.shape}")
    return X @ model.W.T + model.b


def svm_predict(model, X):
    """Argmax of the class scores (1-based); ties go to the lowest class."""
    return np.argmax(decision_function(model, X), axis=1) + 1


def save_svm(model, path):
    header = {"type": "linsvm", "d": model.d, "C": model.n_classes, "lambda": model.lam}
    write_blob(path, header, [model.W, model.b])


def load_svm(path):
    header, payload = read_blob(path)
    expect_type(header, "linsvm", path)
    d = header_int(header, "d", path)
    C = header_int(header, "C", path)
    lam = header.get("lambda")
    if not isinstance(lam, (int, float)) or isinstance(lam, bool) or lam <= 0:
        raise HeaderError(f"{path}: header field 'lambda' must be a positive number")
    W, b = split_payload(payload, [C * d, C], path)
    return LinearSvmModel(W.reshape(C, d), b, float(lam))
