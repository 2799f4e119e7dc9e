"""Stacked autoencoders with a softmax (logistic regression) head.

Layers are pretrained greedily, each on the hidden activations of the layer
below.  Fine-tuning then backpropagates the negative log-likelihood of the
head through every encoder, with pretrained layers moving at ``alpha`` times
the head's learning rate.
"""

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from ._binio import expect_type, read_blob, split_payload, write_blob
from .autoenc import AeHyper, AeParams, ae_init, sgd_train
from .errors import ContractError, DivergenceError, HeaderError, ShapeError
from .numkit import Rng, derive_seed, sigmoid, sigmoid_prime_from_f


@dataclass
class SoftmaxHead:
    W_o: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        self.W_o = np.asarray(self.W_o, dtype=np.float64)
        self.b_o = np.asarray(self.b_o, dtype=np.float64)
        if self.W_o.ndim != 2 or self.b_o.shape != (self.W_o.shape[1],):
            raise ShapeError(f"inconsistent head shapes W_o={self.W_o.shape}, b_o={self.b_o.shape}")

    @property
    def n_classes(self):
        return self.W_o.shape[1]

    def copy(self):
        return SoftmaxHead(self.W_o.copy(), self.b_o.copy())

    @classmethod
    def zeros(cls, h, n_classes):
        return cls(np.zeros((h, n_classes)), np.zeros(n_classes))


@dataclass
class SaeModel:
    layers: list = field(default_factory=list)
    head: SoftmaxHead = None
    alpha: float = 0.1

    def __post_init__(self):
        self.check()

    def check(self):
        for i in range(len(self.layers) - 1):
            if self.layers[i].h != self.layers[i + 1].d:
                raise ShapeError(
                    f"layer {i} outputs {self.layers[i].h} units but layer {i + 1} expects {self.layers[i + 1].d}"
                )
        if self.head is not None and self.layers and self.head.W_o.shape[0] != self.layers[-1].h:
            raise ShapeError(
                f"head expects {self.head.W_o.shape[0]} inputs but the last layer has {self.layers[-1].h} units"
            )

    @property
    def sizes(self):
        """Layer sizes from input to output, including the class count when a head is present."""
        if self.layers:
            out = [self.layers[0].d] + [layer.h for layer in self.layers]
        elif self.head is not None:
            out = [self.head.W_o.shape[0]]
        else:
            out = []
        if self.head is not None:
            out.append(self.head.n_classes)
        return out

    def copy(self):
        head = None if self.head is None else self.head.copy()
        return SaeModel([layer.copy() for layer in self.layers], head, self.alpha)


@dataclass(frozen=True)
class FinetuneHyper:
    learning_rate: float = 0.1
    alpha: float = 0.1
    epochs: int = 100
    batch_size: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError(f"fine-tune learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.alpha <= 1:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")


def _check_chain(sizes):
    sizes = [int(s) for s in sizes]
    if len(sizes) < 1 or any(s < 1 for s in sizes):
        raise ShapeError(f"layer sizes must be positive, got {sizes}")
    return sizes


def train_ae(d, h, X, hyper):
    """Initialise and train one autoencoder; the init seed derives from ``hyper.seed``."""
    params = ae_init(d, h, derive_seed(hyper.seed, "init"))
    return sgd_train(params, X, hyper)


def pretrain_stack(sizes, X_all, hyper, on_layer=None):
    """Greedy layer-wise pretraining.

    ``hyper`` is one :class:`AeHyper` shared by all layers (deeper layers get
    derived seeds) or a list with one entry per layer.
    """
    sizes = _check_chain(sizes)
    X_all = np.asarray(X_all, dtype=np.float64)
    if X_all.ndim != 2 or X_all.shape[1] != sizes[0]:
        raise ShapeError(f"input has shape {X_all.shape}, first layer expects {sizes[0]} columns")
    n_layers = len(sizes) - 1
    if isinstance(hyper, AeHyper):
        hypers = [hyper] + [
            dataclasses.replace(hyper, seed=derive_seed(hyper.seed, "layer", i)) for i in range(1, n_layers)
        ]
    else:
        hypers = list(hyper)
        if len(hypers) != n_layers:
            raise ContractError(f"need {n_layers} per-layer hyperparameter sets, got {len(hypers)}")
    layers = []
    inputs = X_all
    for i in range(n_layers):
        params, history = train_ae(sizes[i], sizes[i + 1], inputs, hypers[i])
        layers.append(params)
        if on_layer is not None:
            on_layer(i, history)
        inputs = params.encode(inputs)
    return SaeModel(layers)


def encode_deep(model, X):
    X = np.asarray(X, dtype=np.float64)
    if not model.layers:
        return X
    if X.ndim != 2 or X.shape[1] != model.layers[0].d:
        raise ShapeError(f"input has shape {X.shape}, model expects {model.layers[0].d} columns")
    out = X
    for layer in model.layers:
        out = sigmoid(out @ layer.W + layer.b_y)
    return out


def _logits(head, H):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != head.W_o.shape[0]:
        raise ShapeError(f"head expects {head.W_o.shape[0]} inputs, got shape {H.shape}")
    return H @ head.W_o + head.b_o


def softmax_rows(a):
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def softmax_forward(head, H):
    """Class probabilities of shape (m, C), computed with a max shift."""
    return softmax_rows(_logits(head, H))


def _log_softmax(a):
    a = a - a.max(axis=1, keepdims=True)
    return a - np.log(np.sum(np.exp(a), axis=1, keepdims=True))


def _check_labels(labels, n_rows, n_classes):
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise ShapeError(f"expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 1 or labels.max() > n_classes):
        raise ContractError(f"labels must lie in 1..{n_classes}")
    return labels.astype(np.int64)


def nll(model, X, labels):
    """Mean negative log-likelihood of ``labels`` (1-based) under the model."""
    if model.head is None:
        raise ContractError("model has no softmax head")
    X = np.asarray(X, dtype=np.float64)
    labels = _check_labels(labels, X.shape[0], model.head.n_classes)
    logp = _log_softmax(_logits(model.head, encode_deep(model, X)))
    return float(-np.mean(logp[np.arange(len(labels)), labels - 1]))


def finetune_grads(model, X, labels):
    """Gradients of :func:`nll` for every parameter.

    Returns ``(layer_grads, (dW_o, db_o))`` with ``layer_grads[i] = (dW, db_y)``.
    """
    if model.head is None:
        raise ContractError("model has no softmax head")
    X = np.asarray(X, dtype=np.float64)
    labels = _check_labels(labels, X.shape[0], model.head.n_classes)
    m = X.shape[0]
    acts = [X]
    for layer in model.layers:
        acts.append(sigmoid(acts[-1] @ layer.W + layer.b_y))
    probs = softmax_rows(_logits(model.head, acts[-1]))
    delta = probs
    delta[np.arange(m), labels - 1] -= 1.0
    delta /= m
    head_grads = (acts[-1].T @ delta, delta.sum(axis=0))
    back = delta @ model.head.W_o.T
    layer_grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        delta_i = back * sigmoid_prime_from_f(acts[i + 1])
        layer_grads[i] = (acts[i].T @ delta_i, delta_i.sum(axis=0))
        back = delta_i @ model.layers[i].W.T
    return layer_grads, head_grads


def add_head(model, n_classes):
    """Return a copy of ``model`` with a zero-initialised softmax head."""
    if not model.layers:
        raise ContractError("cannot attach a head to an empty stack")
    out = model.copy()
    out.head = SoftmaxHead.zeros(model.layers[-1].h, n_classes)
    return out


def finetune(model, X, labels, hyper, on_epoch=None):
    """Supervised minibatch SGD through the whole stack.

    Returns ``(trained_model, history)`` with the full-set NLL after each
    epoch.  Pretrained layers update with ``learning_rate * alpha``.
    """
    if model.head is None:
        raise ContractError("fine-tuning needs a model with a softmax head")
    X = np.asarray(X, dtype=np.float64)
    labels = _check_labels(labels, X.shape[0], model.head.n_classes)
    out = model.copy()
    out.alpha = hyper.alpha
    eta = hyper.learning_rate
    eta_layers = eta * hyper.alpha
    rng = Rng(derive_seed(hyper.seed, "finetune"))
    n = X.shape[0]
    history = []
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            layer_grads, (dW_o, db_o) = finetune_grads(out, X[idx], labels[idx])
            out.head.W_o -= eta * dW_o
            out.head.b_o -= eta * db_o
            if eta_layers != 0:
                for layer, (dW, db) in zip(out.layers, layer_grads):
                    layer.W -= eta_layers * dW
                    layer.b_y -= eta_layers * db
        loss = nll(out, X, labels)
        if not math.isfinite(loss):
            raise DivergenceError(f"fine-tuning diverged at epoch {epoch}", epoch=epoch)
        history.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, loss)
    return out, history


def predict_proba(model, X):
    if model.head is None:
        raise ContractError("model has no softmax head")
    return softmax_forward(model.head, encode_deep(model, X))


def predict(model, X):
    """Most probable class (1-based); ties go to the lowest class index."""
    return np.argmax(predict_proba(model, X), axis=1) + 1


def _nll_extended(model, X, labels):
    ld = np.longdouble
    a = X.astype(ld)
    for layer in model.layers:
        a = 1 / (1 + np.exp(-(a @ layer.W.astype(ld) + layer.b_y.astype(ld))))
    logits = a @ model.head.W_o.astype(ld) + model.head.b_o.astype(ld)
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.sum(np.exp(logits), axis=1, keepdims=True))
    return -np.mean(logp[np.arange(len(labels)), labels - 1])


def stack_grad_check(sizes, n_classes, m, seed, step=1e-5):
    """Max relative error of :func:`finetune_grads` against central differences.

    ``sizes`` lists the encoder sizes from input to last hidden layer.  The
    oracle evaluates the NLL in extended precision.
    """
    sizes = _check_chain(sizes)
    rng = Rng(derive_seed(seed, "stack-gradcheck"))
    layers = []
    for i in range(len(sizes) - 1):
        p = ae_init(sizes[i], sizes[i + 1], derive_seed(seed, "layer", i))
        p.b_y = rng.uniform(-0.5, 0.5, size=sizes[i + 1])
        layers.append(p)
    head = SoftmaxHead(rng.uniform(-1.0, 1.0, size=(sizes[-1], n_classes)), rng.uniform(-0.5, 0.5, size=n_classes))
    model = SaeModel(layers, head)
    X = rng.random((m, sizes[0]))
    labels = (np.arange(m) % n_classes) + 1

    layer_grads, head_grads = finetune_grads(model, X, labels)
    targets = [(layer.W, g[0]) for layer, g in zip(model.layers, layer_grads)]
    targets += [(layer.b_y, g[1]) for layer, g in zip(model.layers, layer_grads)]
    targets += [(model.head.W_o, head_grads[0]), (model.head.b_o, head_grads[1])]

    worst = 0.0
    for param, grad in targets:
        flat = param.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _nll_extended(model, X, labels)
            flat[i] = orig - step
            down = _nll_extended(model, X, labels)
            flat[i] = orig
            numeric = float((up - down) / (2 * step))
            rel = abs(gflat[i] - numeric) / max(1e-8, abs(gflat[i]) + abs(numeric))
            worst = max(worst, rel)
    return worst


def save_sae(model, path):
    header = {"type": "sae", "sizes": model.sizes, "has_head": model.head is not None, "alpha": model.alpha}
    arrays = []
    for layer in model.layers:
        arrays += [layer.W, layer.b_y, layer.b_z]
    if model.head is not None:
        arrays += [model.head.W_o, model.head.b_o]
    write_blob(path, header, arrays)


def load_sae(path):
    header, payload = read_blob(path)
    expect_type(header, "sae", path)
    sizes = header.get("sizes")
    has_head = header.get("has_head")
    alpha = header.get("alpha", 0.1)
    if not isinstance(sizes, list) or not all(isinstance(s, int) and s >= 1 for s in sizes):
        raise HeaderError(f"{path}: header field 'sizes' must be a list of positive integers")
    if not isinstance(has_head, bool):
        raise HeaderError(f"{path}: header field 'has_head' must be a boolean")
    enc = sizes[:-1] if has_head else sizes
    if has_head and len(sizes) < 2:
        raise HeaderError(f"{path}: header field 'sizes' is too short for a model with a head")
    counts = []
    for d, h in zip(enc[:-1], enc[1:]):
        counts += [d * h, h, d]
    if has_head:
        counts += [enc[-1] * sizes[-1], sizes[-1]]
    arrays = split_payload(payload, counts, path)
    layers = []
    for i, (d, h) in enumerate(zip(enc[:-1], enc[1:])):
        W, b_y, b_z = arrays[3 * i: 3 * i + 3]
        layers.append(AeParams(W.reshape(d, h), b_y, b_z))
    head = None
    if has_head:
        head = SoftmaxHead(arrays[-2].reshape(enc[-1], sizes[-1]), arrays[-1])
    return SaeModel(layers, head, float(alpha))
