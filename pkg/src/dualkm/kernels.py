"""Exact shift-invariant kernels and their random Fourier feature maps.

Two families are supported::

    gaussian   k(x, x') = exp(-||x - x'||_2^2 / (2 sigma^2))
    laplacian  k(x, x') = exp(-||x - x'||_1 / sigma)

Random features use ``psi(x) = sqrt(2/M) cos(W x + b)`` with ``b ~ U[0, 2 pi)``
and the rows of ``W`` drawn from the kernel's spectral density: a normal with
standard deviation ``1/sigma`` (gaussian) or a Cauchy with scale ``1/sigma``
(laplacian).  Sampling uses numpy's PCG64 generator seeded with the given
integer, drawing ``W`` (row-major) before ``b``, so a map is fully determined
by ``(family, sigma, M, d, seed, dtype)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist, pdist

__all__ = [
    "KERNEL_FAMILIES",
    "KernelSpec",
    "RffMap",
    "kernel_eval",
    "kernel_block",
    "kernel_matvec",
    "exact_kernel_grad",
    "rff_sample",
    "rff_map",
    "median_heuristic",
]

KERNEL_FAMILIES = ("gaussian", "laplacian")
_METRIC = {"gaussian": "sqeuclidean", "laplacian": "cityblock"}
_PAIR_METRIC = {"gaussian": "euclidean", "laplacian": "cityblock"}


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"kernel bandwidth must be positive, got {self.sigma!r}")

    def from_distances(self, dist):
        if self.family == "gaussian":
            return np.exp(-dist / (2.0 * self.sigma**2))
        return np.exp(-dist / self.sigma)


def _dense(X, rows=None):
    if rows is not None:
        X = X[rows]
    if sp.issparse(X):
        return X.toarray()
    return np.asarray(X)


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    diff = x - x2
    dist = diff @ diff if spec.family == "gaussian" else np.abs(diff).sum()
    return float(spec.from_distances(dist))


def kernel_block(spec: KernelSpec, XA, XB, dtype=None) -> np.ndarray:
    """Dense ``|A| x |B|`` kernel matrix; sparse rows are densified here."""
    XA = np.atleast_2d(_dense(XA))
    XB = np.atleast_2d(_dense(XB))
    if XA.shape[1] != XB.shape[1]:
        raise ValueError(f"dimension mismatch: {XA.shape[1]} vs {XB.shape[1]}")
    if dtype is None:
        dtype = np.result_type(XA.dtype, XB.dtype, np.float32)
    if XA.shape[0] == 0 or XB.shape[0] == 0:
        return np.zeros((XA.shape[0], XB.shape[0]), dtype=dtype)
    # cdist differences coordinates directly, so k(x, x) is exactly 1
    dist = cdist(XA, XB, metric=_METRIC[spec.family])
    return spec.from_distances(dist).astype(dtype, copy=False)


def kernel_matvec(spec: KernelSpec, XA, XB, v, chunk=2048, dtype=None) -> np.ndarray:
    """``K(XA, XB) @ v`` computed over column chunks of ``XB``.

    Peak memory is ``O(|A| * chunk)`` regardless of ``len(XB)``.
    """
    v = np.asarray(v)
    if dtype is None:
        dtype = v.dtype if v.dtype.kind == "f" else np.float64
    n_b = XB.shape[0]
    if v.shape[0] != n_b:
        raise ValueError(f"vector length {v.shape[0]} does not match {n_b} columns")
    if chunk < 1:
        raise ValueError("chunk must be at least 1")
    XA = _dense(XA)
    out = np.zeros(XA.shape[0], dtype=dtype)
    for start in range(0, n_b, chunk):
        stop = min(start + chunk, n_b)
        vs = v[start:stop]
        if not np.any(vs):
            continue
        out += kernel_block(spec, XA, _dense(XB, slice(start, stop)), dtype=dtype) @ vs
    return out


def exact_kernel_grad(spec: KernelSpec, X, alpha, B, chunk=2048) -> np.ndarray:
    """Row block ``K_{B,:} @ alpha`` without forming the full kernel matrix."""
    B = np.asarray(B)
    return kernel_matvec(spec, _dense(X, B), X, alpha, chunk=chunk)


@dataclass(frozen=True, eq=False)
class RffMap:
    """Sampled random Fourier feature map ``psi(x) = scale * cos(W x + b)``."""

    W: np.ndarray
    b: np.ndarray
    family: str
    sigma: float
    seed: int

    @property
    def n_components(self) -> int:
        return self.W.shape[0]

    @property
    def n_features(self) -> int:
        return self.W.shape[1]

    @property
    def scale(self):
        return np.sqrt(self.W.dtype.type(2) / self.W.dtype.type(self.n_components))

    @property
    def dtype(self):
        return self.W.dtype

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(self.family, self.sigma)


def rff_sample(spec: KernelSpec, M: int, d: int, seed: int = 0, dtype=np.float64) -> RffMap:
    if M < 1 or d < 1:
        raise ValueError(f"need M >= 1 and d >= 1, got M={M}, d={d}")
    rng = np.random.default_rng(seed)
    if spec.family == "gaussian":
        W = rng.standard_normal((M, d)) / spec.sigma
    else:
        # inverse-CDF Cauchy draw with scale 1/sigma
        W = np.tan(np.pi * (rng.random((M, d)) - 0.5)) / spec.sigma
    b = 2.0 * np.pi * rng.random(M)
    b[b >= 2.0 * np.pi] = 0.0
    return RffMap(
        W=np.ascontiguousarray(W, dtype=dtype),
        b=b.astype(dtype),
        family=spec.family,
        sigma=float(spec.sigma),
        seed=int(seed),
    )


def rff_map(fmap: RffMap, X) -> np.ndarray:
    """Feature matrix of shape ``(M, n)`` whose columns are ``psi(x_i)``."""
    if not sp.issparse(X):
        X = np.atleast_2d(np.asarray(X))
    if X.shape[1] != fmap.n_features:
        raise ValueError(
            f"dimension mismatch: map expects {fmap.n_features} features, got {X.shape[1]}"
        )
    if sp.issparse(X):
        Z = np.asarray((X @ fmap.W.T)).T.astype(fmap.dtype, copy=False)
    else:
        Z = fmap.W @ np.asarray(X, dtype=fmap.dtype).T
    Z += fmap.b[:, None]
    np.cos(Z, out=Z)
    Z *= fmap.scale
    return Z


def median_heuristic(X, subsample: int = 2000, seed: int = 0, family: str = "gaussian") -> float:
    """Median pairwise distance over a uniform subsample of the rows of ``X``.

    Euclidean distances for the gaussian family, L1 for the laplacian one.
    """
    if family not in KERNEL_FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}")
    n = X.shape[0]
    if n < 2:
        raise ValueError("median heuristic needs at least two samples")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=subsample, replace=False)) if n > subsample else None
    Xs = np.asarray(_dense(X, rows), dtype=np.float64)
    sigma = float(np.median(pdist(Xs, metric=_PAIR_METRIC[family])))
    if not sigma > 0:
        raise ValueError("degenerate data: median pairwise distance is zero")
    return sigma
