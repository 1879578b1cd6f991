"""Kernels with the derivatives a gradient-field GP needs.

Every kernel exposes

* ``value(z, z2)`` and the batched ``gram(X, Y)``,
* ``grad1(z, z2)``: the input derivative d/dz k(z, z2), shape (d,),
  and the batched ``grad1_rows(z, Y)``, shape (m, d),
* ``grad12(z, z2)``: the mixed derivative with entries
  d^2 k / dz_i dz2_j, shape (d, d).

The empirical NTK is k(z, z2) = <J(z), J(z2)> where J is the parameter
gradient of a small scalar-output MLP frozen at initialisation. Its
input derivatives are obtained analytically from the layer-wise chain rule;
``derivatives="fd"`` swaps in central differences for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

KERNEL_KINDS = ("ntk", "matern52", "rbf")

_SQRT5 = np.sqrt(5.0)


@dataclass
class KernelSpec:
    kind: str = "ntk"
    lengthscale: Optional[float] = None  # None: median pairwise pool distance
    variance: float = 1.0
    widths: tuple = (32, 32)
    activation: str = "tanh"
    init_seed: int = 0
    derivatives: str = "analytic"  # or "fd"

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        self.widths = tuple(int(w) for w in self.widths)
        if self.lengthscale is not None and self.lengthscale <= 0:
            raise ValueError("lengthscale must be positive")
        if self.variance <= 0:
            raise ValueError("variance must be positive")
        if self.kind == "ntk":
            if not self.widths or any(w <= 0 for w in self.widths):
                raise ValueError("ntk widths must be a non-empty list of positive integers")
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")
        if self.derivatives not in ("analytic", "fd"):
            raise ValueError("derivatives must be 'analytic' or 'fd'")


def _check(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("kernel inputs must be finite")


class Kernel:
    """Shared scalar wrappers over the batched primitives."""

    dim: int

    def gram(self, X, Y=None):
        raise NotImplementedError

    def grad1_rows(self, z, Y):
        raise NotImplementedError

    def grad12(self, z, z2):
        raise NotImplementedError

    def value(self, z, z2):
        z = np.asarray(z, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        return float(self.gram(z[None, :], z2[None, :])[0, 0])

    def grad1(self, z, z2):
        z2 = np.asarray(z2, dtype=float)
        return self.grad1_rows(z, z2[None, :])[0]

    def diag(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.value(x, x) for x in X])


class _Stationary(Kernel):
    def __init__(self, dim, lengthscale=1.0, variance=1.0):
        self.dim = int(dim)
        self.lengthscale = float(lengthscale)
        self.variance = float(variance)

    def _sqdist(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
        _check(X, Y)
        diff = X[:, None, :] - Y[None, :, :]
        return np.sum(diff**2, axis=-1)

    def diag(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.variance)


class RBFKernel(_Stationary):
    """k = v exp(-|z - z2|^2 / (2 l^2))."""

    def gram(self, X, Y=None):
        return self.variance * np.exp(-0.5 * self._sqdist(X, Y) / self.lengthscale**2)

    def grad1_rows(self, z, Y):
        z = np.asarray(z, dtype=float)
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        _check(z, Y)
        u = z[None, :] - Y
        k = self.variance * np.exp(-0.5 * np.sum(u**2, axis=1) / self.lengthscale**2)
        return -(u / self.lengthscale**2) * k[:, None]

    def grad12(self, z, z2):
        z = np.asarray(z, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        _check(z, z2)
        ell2 = self.lengthscale**2
        u = z - z2
        k = self.variance * np.exp(-0.5 * (u @ u) / ell2)
        return k * (np.eye(self.dim) / ell2 - np.outer(u, u) / ell2**2)


class Matern52Kernel(_Stationary):
    """k = v (1 + s + s^2/3) exp(-s) with s = sqrt(5) r / l."""

    def gram(self, X, Y=None):
        s = _SQRT5 * np.sqrt(self._sqdist(X, Y)) / self.lengthscale
        return self.variance * (1.0 + s + s**2 / 3.0) * np.exp(-s)

    def grad1_rows(self, z, Y):
        z = np.asarray(z, dtype=float)
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        _check(z, Y)
        ell = self.lengthscale
        u = z[None, :] - Y
        s = _SQRT5 * np.sqrt(np.sum(u**2, axis=1)) / ell
        g = -(5.0 * self.variance / (3.0 * ell**2)) * (1.0 + s) * np.exp(-s)
        return g[:, None] * u

    def grad12(self, z, z2):
        z = np.asarray(z, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        _check(z, z2)
        ell = self.lengthscale
        v = self.variance
        u = z - z2
        s = _SQRT5 * np.sqrt(u @ u) / ell
        e = np.exp(-s)
        return (5.0 * v / (3.0 * ell**2)) * (1.0 + s) * e * np.eye(self.dim) - (
            25.0 * v / (3.0 * ell**4)
        ) * e * np.outer(u, u)


# activation -> (sigma, sigma', sigma'')
def _tanh(x):
    t = np.tanh(x)
    return t, 1.0 - t**2, -2.0 * t * (1.0 - t**2)


def _relu(x):
    # second derivative taken as 0 (valid almost everywhere); sigma'(0) = 0
    return np.maximum(x, 0.0), (x > 0).astype(float), np.zeros_like(x)


def _gelu(x):
    pdf = np.exp(-0.5 * x**2) / np.sqrt(2 * np.pi)
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return x * cdf, cdf + x * pdf, pdf * (2.0 - x**2)


ACTIVATIONS = {"tanh": _tanh, "relu": _relu, "gelu": _gelu}


@dataclass
class NtkNetwork:
    """Frozen MLP phi(theta0, z) with one scalar output.

    ``weights[l]`` has shape (fan_out, fan_in); the last layer maps to a
    single unit.
    """

    dim: int
    widths: tuple
    activation: str
    weights: list = field(repr=False)
    biases: list = field(repr=False)

    @property
    def n_params(self) -> int:
        return int(sum(W.size + b.size for W, b in zip(self.weights, self.biases)))

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_params(self, theta) -> "NtkNetwork":
        theta = np.asarray(theta, dtype=float)
        Ws, bs, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(theta[pos : pos + W.size].reshape(W.shape))
            pos += W.size
            bs.append(theta[pos : pos + b.size].copy())
            pos += b.size
        return NtkNetwork(self.dim, self.widths, self.activation, Ws, bs)

    def forward(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        act = ACTIVATIONS[self.activation]
        a = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = act(a @ W.T + b)[0]
        return a @ self.weights[-1][0] + self.biases[-1][0]


def ntk_init(widths, dim, seed=0, activation="tanh") -> NtkNetwork:
    """Standard NTK parameterisation: W ~ N(0, 1) / sqrt(fan_in), b = 0."""
    widths = tuple(int(w) for w in widths)
    if not widths or any(w <= 0 for w in widths):
        raise ValueError("widths must be positive")
    rng = np.random.default_rng(seed)
    sizes = (int(dim),) + widths + (1,)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        Ws.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        bs.append(np.zeros(fan_out))
    return NtkNetwork(int(dim), widths, activation, Ws, bs)


class NTKKernel(Kernel):
    def __init__(self, network: NtkNetwork, derivatives="analytic", fd_step=1e-4):
        self.net = network
        self.dim = network.dim
        self.derivatives = derivatives
        self.fd_step = fd_step

    # Per-layer terms of the parameter gradient. For layer l with input a_{l-1}
    # and backprop signal delta_l, the gradient block is delta_l a_{l-1}^T for W
    # and delta_l for b, so k = sum_l (delta_l . delta_l')(1 + a_{l-1} . a_{l-1}').
    def _features(self, X, jac=False):
        net = self.net
        act = ACTIVATIONS[net.activation]
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _check(X)
        n, d = X.shape
        a = X
        Ja = np.broadcast_to(np.eye(d), (n, d, d)) if jac else None
        inputs, jinputs, pre = [a], [Ja], []
        for W, b in zip(net.weights[:-1], net.biases[:-1]):
            h = a @ W.T + b
            s0, s1, s2 = act(h)
            Jh = np.einsum("ij,njk->nik", W, Ja) if jac else None
            pre.append((s1, s2, Jh))
            a = s0
            if jac:
                Ja = s1[:, :, None] * Jh
            inputs.append(a)
            jinputs.append(Ja)
        L = len(net.weights)
        deltas = [None] * L
        jdeltas = [None] * L
        deltas[-1] = np.ones((n, 1))
        jdeltas[-1] = np.zeros((n, 1, d)) if jac else None
        for l in range(L - 2, -1, -1):
            s1, s2, Jh = pre[l]
            Wn = net.weights[l + 1]
            g = deltas[l + 1] @ Wn
            deltas[l] = s1 * g
            if jac:
                back = np.einsum("ji,njk->nik", Wn, jdeltas[l + 1])
                jdeltas[l] = (s2 * g)[:, :, None] * Jh + s1[:, :, None] * back
        return inputs, jinputs, deltas, jdeltas

    def gram(self, X, Y=None):
        ax, _, dx, _ = self._features(X)
        if Y is None:
            ay, dy = ax, dx
        else:
            ay, _, dy, _ = self._features(Y)
        K = 0.0
        for l in range(len(dx)):
            K = K + (dx[l] @ dy[l].T) * (1.0 + ax[l] @ ay[l].T)
        return K

    def param_jacobian(self, X):
        """Rows are the parameter gradients at each input (n, p)."""
        ax, _, dx, _ = self._features(X)
        blocks = []
        for l in range(len(dx)):
            blocks.append(np.einsum("ni,nj->nij", dx[l], ax[l]).reshape(len(dx[l]), -1))
            blocks.append(dx[l])
        return np.concatenate(blocks, axis=1)

    def grad1_rows(self, z, Y):
        if self.derivatives == "fd":
            return _fd_grad1_rows(self, z, Y, self.fd_step)
        z = np.asarray(z, dtype=float)
        az, Jaz, dz, Jdz = self._features(z[None, :], jac=True)
        ay, _, dy, _ = self._features(Y)
        out = 0.0
        for l in range(len(dz)):
            A = 1.0 + ay[l] @ az[l][0]  # (m,)
            D = dy[l] @ dz[l][0]
            out = out + (dy[l] @ Jdz[l][0]) * A[:, None] + D[:, None] * (ay[l] @ Jaz[l][0])
        return out

    def grad12(self, z, z2):
        if self.derivatives == "fd":
            return _fd_grad12(self, z, z2, self.fd_step)
        z = np.asarray(z, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        a1, Ja1, d1, Jd1 = self._features(z[None, :], jac=True)
        a2, Ja2, d2, Jd2 = self._features(z2[None, :], jac=True)
        H = np.zeros((self.dim, self.dim))
        for l in range(len(d1)):
            a, ap, Ja, Jap = a1[l][0], a2[l][0], Ja1[l][0], Ja2[l][0]
            dl, dp, Jd, Jdp = d1[l][0], d2[l][0], Jd1[l][0], Jd2[l][0]
            A = 1.0 + a @ ap
            D = dl @ dp
            H += (Jd.T @ Jdp) * A
            H += np.outer(Jd.T @ dp, Jap.T @ a)
            H += np.outer(Ja.T @ ap, Jdp.T @ dl)
            H += D * (Ja.T @ Jap)
        return H


def _fd_grad1_rows(kernel, z, Y, h):
    z = np.asarray(z, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    d = z.shape[0]
    out = np.empty((Y.shape[0], d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[:, i] = (kernel.gram((z + e)[None, :], Y)[0] - kernel.gram((z - e)[None, :], Y)[0]) / (2 * h)
    return out


def _fd_grad12(kernel, z, z2, h):
    z = np.asarray(z, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    d = z.shape[0]
    eye = np.eye(d) * h
    plus = np.vstack([z + eye, z - eye])
    minus = np.vstack([z2 + eye, z2 - eye])
    G = kernel.gram(plus, minus)
    pp, pm = G[:d, :d], G[:d, d:]
    mp, mm = G[d:, :d], G[d:, d:]
    return (pp - pm - mp + mm) / (4 * h * h)


def fd_grad1(kernel, z, z2, h=1e-5):
    """Central-difference d/dz k(z, z2), used as an independent oracle."""
    return _fd_grad1_rows(kernel, z, np.asarray(z2, dtype=float)[None, :], h)[0]


def fd_grad12(kernel, z, z2, h=1e-4):
    return _fd_grad12(kernel, z, z2, h)


def make_kernel(spec: KernelSpec, dim: int, pool=None) -> Kernel:
    if spec.kind == "ntk":
        net = ntk_init(spec.widths, dim, seed=spec.init_seed, activation=spec.activation)
        return NTKKernel(net, derivatives=spec.derivatives)
    ell = spec.lengthscale
    if ell is None:
        ell = pool.median_pairwise_distance() if pool is not None else 1.0
        ell = ell if ell > 0 else 1.0
    cls = RBFKernel if spec.kind == "rbf" else Matern52Kernel
    return cls(dim, lengthscale=ell, variance=spec.variance)


def kernel_bounds(kernel: Kernel, X):
    """Empirical (alpha, kappa): max k(z, z') and max ||k''(z, z)||_2 over X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    alpha = float(np.max(kernel.gram(X)))
    kappa = max(float(np.linalg.norm(kernel.grad12(x, x), 2)) for x in X)
    return alpha, kappa
