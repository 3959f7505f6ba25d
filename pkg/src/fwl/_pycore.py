"""Pure-Python (numpy) versions of the compiled kernels in ``_core.pyx``.

Signatures and per-element operation order mirror the extension so both
backends agree to rounding.
"""
import numpy as np

from .errors import NotPositiveDefinite


def cholesky_lower(a, jitter):
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        row = L[j, :j]
        pivot = a[j, j] + jitter - row @ row
        if not pivot > 0.0:
            raise NotPositiveDefinite(
                f"non-positive pivot {pivot:.3e} at column {j}")
        d = np.sqrt(pivot)
        L[j, j] = d
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ row) / d
    return L


def solve_lower(L, b):
    """Forward substitution for ``L x = b``; ``b`` is (n, p)."""
    n = L.shape[0]
    x = np.array(b, dtype=np.float64, copy=True)
    for i in range(n):
        if i:
            x[i] -= L[i, :i] @ x[:i]
        x[i] /= L[i, i]
    return x


def solve_lower_t(L, b):
    """Back substitution for ``L^T x = b``; ``b`` is (n, p)."""
    n = L.shape[0]
    x = np.array(b, dtype=np.float64, copy=True)
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] -= L[i + 1:, i] @ x[i + 1:]
        x[i] /= L[i, i]
    return x


def pairwise_sqdist(x, y):
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def nearest_centroid(points, centroids):
    """Index of the closest centroid per row (lowest index wins ties)."""
    d2 = pairwise_sqdist(points, centroids)
    idx = np.argmin(d2, axis=1)
    return idx.astype(np.intp), d2[np.arange(len(points)), idx]


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2, scale):
    """In-place Adam step on flat float64 buffers.

    ``bc1``/``bc2`` are the bias corrections ``1 - beta**t``; the step is
    multiplied by ``scale`` before being applied.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    step = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    param -= scale * step
