"""Numeric substrate: matrix product, seeded PRNG, sigmoid and a Jacobi eigensolver.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.

The generator is splitmix64.  With a 64-bit state ``s`` initialised to the
seed, each draw is::

    s = s + 0x9E3779B97F4A7C15            (mod 2**64)
    z = s
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB   (mod 2**64)
    out = z ^ (z >> 31)

Because the state after ``k`` draws is ``seed + k * gamma``, blocks of draws
are computed vectorised and remain bit-identical to the scalar recurrence.
Uniform doubles use the top 53 bits: ``(out >> 11) * 2**-53``.
"""

import math

import numpy as np

from .errors import ContractError, HsiSaeError, ShapeError

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U_GAMMA = np.uint64(_GAMMA)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_TWO_M53 = 1.0 / (1 << 53)

_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = np.nextafter(1.0, 0.0)


def _mix_array(z):
    z = (z ^ (z >> np.uint64(30))) * _U_M1
    z = (z ^ (z >> np.uint64(27))) * _U_M2
    return z ^ (z >> np.uint64(31))


def _mix_int(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _tag_value(tag):
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK
    # FNV-1a over the UTF-8 bytes
    h = 0xCBF29CE484222325
    for byte in str(tag).encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def derive_seed(seed, *tags):
    """Derive an independent 64-bit seed from ``seed`` and a sequence of tags.

    Tags may be integers or strings.  The derivation is a pure function, so
    per-stage seeds are reproducible from a single experiment seed.
    """
    s = int(seed) & _MASK
    for tag in tags:
        s = _mix_int(s + _GAMMA * (_tag_value(tag) + 1))
    return s


class Rng:
    """Deterministic splitmix64 stream.

    Single owner; every draw advances ``counter``.
    """

    def __init__(self, seed):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    @property
    def state(self):
        return (self.seed + self.counter * _GAMMA) & _MASK

    def next_u64(self, n=1):
        """Return the next ``n`` raw 64-bit outputs as a uint64 array."""
        if n < 0:
            raise ContractError(f"draw count must be >= 0, got {n}")
        start = np.uint64((self.counter + 1) & _MASK)
        ks = np.arange(n, dtype=np.uint64) + start
        states = np.uint64(self.seed) + ks * _U_GAMMA
        self.counter += n
        return _mix_array(states)

    def random(self, size=None):
        """Uniform doubles in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def uniform(self, lo, hi, size=None):
        """Uniform values in [lo, hi)."""
        if not lo < hi:
            raise ContractError(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
        u = self.random(size)
        out = lo + (hi - lo) * np.asarray(u)
        # rounding of lo + span*u can land on hi
        out = np.minimum(out, np.nextafter(hi, lo))
        if size is None:
            return float(out)
        return out

    def normal(self, size=None):
        """Standard normal values by the Box-Muller transform."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.random(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        z = z.reshape(-1)[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n):
        """A uniformly random permutation of ``range(n)``.

        Sorting random 64-bit keys avoids any platform-dependent shuffle.
        """
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")


def rng_uniform(state, lo, hi):
    """Draw one value in [lo, hi) from ``state``, advancing it."""
    return state.uniform(lo, hi)


def matmul(a, b):
    """Matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply a {a.shape} matrix by a {b.shape} matrix")
    return a @ b


def sigmoid(x):
    """Logistic function 1/(1+exp(-x)), kept inside the open interval (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    np.clip(out, _SIG_LO, _SIG_HI, out=out)
    if out.ndim == 0:
        return float(out)
    return out


def sigmoid_prime_from_f(f):
    """Sigmoid derivative expressed through the sigmoid value: f * (1 - f)."""
    f = np.asarray(f, dtype=np.float64)
    out = f * (1.0 - f)
    if out.ndim == 0:
        return float(out)
    return out


def sym_eig(s, tol=1e-12, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    s : array_like, shape (n, n)
        Symmetric matrix (asymmetry above 1e-9 absolute is rejected).
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm falls below
        ``tol * max(1, ||s||_F)``.
    max_sweeps : int
        Upper bound on full cyclic sweeps.

    Returns
    -------
    eigenvalues : ndarray, shape (n,)
        Sorted in descending order.
    eigenvectors : ndarray, shape (n, n)
        Column ``i`` is the unit eigenvector for ``eigenvalues[i]``.
    """
    a = np.array(s, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_eig needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("sym_eig input contains non-finite entries")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > 1e-9:
        raise ContractError(f"sym_eig input is not symmetric (max |s - s^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))

    def off_norm():
        # summed directly: ||A||^2 - ||diag A||^2 cancels catastrophically near convergence
        return float(np.linalg.norm(a - np.diag(np.diag(a))))

    converged = False
    for _ in range(max_sweeps):
        off = off_norm()
        if off <= threshold:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                diff = a[q, q] - a[p, p]
                if apq == 0.0 or abs(apq) < 1e-300 * abs(diff):
                    continue
                theta = diff / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - sn * col_q
                a[:, q] = sn * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - sn * row_q
                a[q, :] = sn * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    if not converged:
        off = off_norm()
        if off > threshold:
            raise HsiSaeError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps (off={off:.3e})")

    evals = np.diag(a).copy()
    order = np.argsort(-evals, kind="stable")
    return evals[order], v[:, order]
