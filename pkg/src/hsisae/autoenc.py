"""Tied-weight sigmoid autoencoder with a cross-entropy reconstruction cost.

One weight matrix ``W`` of shape (d, h) serves both directions::

    net_y = X W + b_y        Y = sigmoid(net_y)
    net_z = Y W^T + b_z      Z = sigmoid(net_z)

and the cost of a minibatch of ``m`` rows is the mean over rows of the summed
binary cross-entropy between ``X`` and ``Z``.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._binio import expect_type, header_int, read_blob, split_payload, write_blob
from .errors import ContractError, DivergenceError, ShapeError
from .numkit import Rng, derive_seed, sigmoid, sigmoid_prime_from_f

DEFAULT_EPS = 1e-7


@dataclass
class AeParams:
    W: np.ndarray
    b_y: np.ndarray
    b_z: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b_y = np.asarray(self.b_y, dtype=np.float64)
        self.b_z = np.asarray(self.b_z, dtype=np.float64)
        if self.W.ndim != 2 or self.b_y.shape != (self.W.shape[1],) or self.b_z.shape != (self.W.shape[0],):
            raise ShapeError(
                f"inconsistent autoencoder shapes W={self.W.shape}, b_y={self.b_y.shape}, b_z={self.b_z.shape}"
            )

    @property
    def d(self):
        return self.W.shape[0]

    @property
    def h(self):
        return self.W.shape[1]

    def copy(self):
        return AeParams(self.W.copy(), self.b_y.copy(), self.b_z.copy())

    def encode(self, X):
        """Hidden representation ``sigmoid(X W + b_y)``."""
        X = _as_batch(X, self.d)
        return sigmoid(X @ self.W + self.b_y)

    def __eq__(self, other):
        return (
            isinstance(other, AeParams)
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.b_y, other.b_y)
            and np.array_equal(self.b_z, other.b_z)
        )


@dataclass
class ForwardCache:
    X: np.ndarray
    net_y: np.ndarray
    Y: np.ndarray
    net_z: np.ndarray
    Z: np.ndarray


@dataclass(frozen=True)
class AeHyper:
    learning_rate: float = 0.1
    batch_size: int = 20
    epochs: int = 100
    seed: int = 0
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ContractError("batch_size and epochs must be >= 1")
        if not 0 < self.eps <= 1e-3:
            raise ContractError(f"eps must lie in (0, 1e-3], got {self.eps}")


def _as_batch(X, d):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != d:
        raise ShapeError(f"expected a batch with {d} columns, got shape {X.shape}")
    return X


def ae_init(d, h, seed):
    """Uniform weights in +-4*sqrt(6/(d+h)), zero biases."""
    if d < 1 or h < 1:
        raise ContractError(f"autoencoder sizes must be >= 1, got d={d}, h={h}")
    bound = 4.0 * math.sqrt(6.0 / (d + h))
    W = Rng(seed).uniform(-bound, bound, size=(d, h))
    return AeParams(W, np.zeros(h), np.zeros(d))


def ae_forward(params, X):
    X = _as_batch(X, params.d)
    net_y = X @ params.W + params.b_y
    Y = sigmoid(net_y)
    net_z = Y @ params.W.T + params.b_z
    Z = sigmoid(net_z)
    return ForwardCache(X=X, net_y=net_y, Y=Y, net_z=net_z, Z=Z)


def cross_entropy(X, Z, eps=DEFAULT_EPS):
    m = X.shape[0]
    zc = np.clip(Z, eps, 1.0 - eps)
    return float(-np.sum(X * np.log(zc) + (1.0 - X) * np.log(1.0 - zc)) / m)


def ae_cost(cache, eps=DEFAULT_EPS):
    """Minibatch cross-entropy: summed over inputs, averaged over rows."""
    return cross_entropy(cache.X, cache.Z, eps)


def ae_grads(params, cache, eps=DEFAULT_EPS):
    """Analytic gradients ``(dW, db_y, db_z)`` of :func:`ae_cost`.

    For sigmoid outputs with cross-entropy the output delta collapses to
    ``(Z - X) / m``.  ``W`` collects an encoder term ``X^T delta_y`` and a
    decoder term ``delta_z^T Y``.  ``eps`` only affects the cost and is
    accepted for signature symmetry.
    """
    X, Y, Z = cache.X, cache.Y, cache.Z
    if X.shape[1] != params.d or Y.shape[1] != params.h or Z.shape != X.shape:
        raise ContractError(
            f"forward cache shapes X={X.shape}, Y={Y.shape} do not match parameters d={params.d}, h={params.h}"
        )
    m = X.shape[0]
    delta_z = (Z - X) / m
    delta_y = (delta_z @ params.W) * sigmoid_prime_from_f(Y)
    dW = X.T @ delta_y + delta_z.T @ Y
    return dW, delta_y.sum(axis=0), delta_z.sum(axis=0)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def sgd_train(params, X_all, hyper, on_epoch=None):
    """Minibatch SGD with a constant learning rate.

    Returns ``(trained_params, history)`` where ``history[e]`` is the mean
    full-dataset cost after epoch ``e + 1``.  ``params`` is not modified.
    """
    X_all = _as_batch(X_all, params.d)
    if X_all.shape[0] < 1:
        raise ContractError("training set is empty")
    if X_all.min() < 0 or X_all.max() > 1:
        raise ContractError("autoencoder inputs must lie in [0, 1]")
    p = params.copy()
    rng = Rng(derive_seed(hyper.seed, "ae-sgd"))
    eta = hyper.learning_rate
    history = []
    for epoch in range(1, hyper.epochs + 1):
        if eta != 0:
            for idx in _batches(X_all.shape[0], hyper.batch_size, rng):
                cache = ae_forward(p, X_all[idx])
                dW, db_y, db_z = ae_grads(p, cache)
                p.W -= eta * dW
                p.b_y -= eta * db_y
                p.b_z -= eta * db_z
        cost = ae_cost(ae_forward(p, X_all), hyper.eps)
        if not math.isfinite(cost) or not all(np.all(np.isfinite(a)) for a in (p.W, p.b_y, p.b_z)):
            raise DivergenceError(f"autoencoder training diverged at epoch {epoch}", epoch=epoch)
        history.append(cost)
        if on_epoch is not None:
            on_epoch(epoch, cost)
    return p, history


def _flatten(params):
    return np.concatenate([params.W.ravel(), params.b_y, params.b_z])


def _cost_extended(theta, X, d, h):
    """Cross-entropy cost in extended precision, written in softplus form.

    ``x*log(z) + (1-x)*log(1-z)`` with ``z = sigmoid(a)`` equals
    ``x*a - softplus(a)``; this avoids the cancellation that limits
    finite differences of the float64 cost.
    """
    ld = np.longdouble
    theta = theta.astype(ld)
    X = X.astype(ld)
    W = theta[: d * h].reshape(d, h)
    b_y = theta[d * h: d * h + h]
    b_z = theta[d * h + h:]
    Y = 1 / (1 + np.exp(-(X @ W + b_y)))
    a = Y @ W.T + b_z
    softplus = np.log1p(np.exp(-np.abs(a))) + np.maximum(a, 0)
    return np.sum(softplus - X * a) / X.shape[0]


def grad_check(d, h, m, seed, step=1e-5):
    """Max relative error between analytic and central-difference gradients."""
    if min(d, h, m) < 1:
        raise ContractError("grad_check sizes must be >= 1")
    rng = Rng(derive_seed(seed, "gradcheck"))
    params = ae_init(d, h, derive_seed(seed, "init"))
    params.b_y = rng.uniform(-0.5, 0.5, size=h)
    params.b_z = rng.uniform(-0.5, 0.5, size=d)
    X = rng.random((m, d))

    dW, db_y, db_z = ae_grads(params, ae_forward(params, X))
    analytic = np.concatenate([dW.ravel(), db_y, db_z])

    theta = _flatten(params).astype(np.longdouble)
    numeric = np.empty(theta.size)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        up = _cost_extended(theta, X, d, h)
        theta[i] = orig - step
        down = _cost_extended(theta, X, d, h)
        theta[i] = orig
        numeric[i] = float((up - down) / (2 * step))
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(rel.max())


def save_ae(params, path):
    write_blob(path, {"type": "ae", "d": params.d, "h": params.h}, [params.W, params.b_y, params.b_z])


def load_ae(path):
    header, payload = read_blob(path)
    expect_type(header, "ae", path)
    d = header_int(header, "d", path)
    h = header_int(header, "h", path)
    W, b_y, b_z = split_payload(payload, [d * h, h, d], path)
    return AeParams(W.reshape(d, h), b_y, b_z)
