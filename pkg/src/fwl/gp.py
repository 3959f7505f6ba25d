"""Gaussian-process teacher.

Exact GP regression with composite kernels, a k-means partitioned variant
that routes queries to the GP of the nearest centroid, and the mappings
that turn a posterior (mean, variance) into a soft label and one scalar
uncertainty per sample.
"""
from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from .errors import (BadDimension, DimensionMismatch, EmptyTrainingSet,
                     InvalidInput, KTooLarge)
from .numerics import DEFAULT_JITTER, Rng, as_matrix, as_vector, cholesky

TEACHER_FORMAT = "fwl-teacher"
TEACHER_VERSION = 1

_SQRT3 = np.sqrt(3.0)


class Task(str, enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class KernelTerm:
    kind: str  # "rbf" | "matern32" | "linear" | "white"
    length_scale: float = 1.0
    sigma0: float = 0.0
    noise_level: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rbf", "matern32", "linear", "white"):
            raise InvalidInput(f"unknown kernel kind {self.kind!r}")
        if self.kind in ("rbf", "matern32") and not self.length_scale > 0:
            raise InvalidInput("length_scale must be > 0")
        if self.kind == "white" and not self.noise_level >= 0:
            raise InvalidInput("noise_level must be >= 0")


@dataclass(frozen=True)
class KernelSpec:
    terms: tuple[KernelTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not any(t.kind != "white" for t in self.terms):
            raise InvalidInput("kernel needs at least one non-white term")

    @property
    def noise(self) -> float:
        return sum(t.noise_level for t in self.terms if t.kind == "white")

    def to_dict(self) -> dict:
        return {"terms": [t.__dict__.copy() for t in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(tuple(KernelTerm(**t) for t in d["terms"]))

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse ``"rbf+white"`` or ``"matern32:l=2+linear+white:0.05"``."""
        terms = []
        for part in text.lower().split("+"):
            name, _, arg = part.strip().partition(":")
            if name in ("rbf", "matern32"):
                val = arg.split("=")[-1] if arg else "1.0"
                terms.append(KernelTerm(name, length_scale=float(val)))
            elif name == "linear":
                val = arg.split("=")[-1] if arg else "0.0"
                terms.append(KernelTerm("linear", sigma0=float(val)))
            elif name == "white":
                val = arg.split("=")[-1] if arg else "0.01"
                terms.append(KernelTerm("white", noise_level=float(val)))
            else:
                raise InvalidInput(f"unknown kernel term {name!r}")
        return cls(tuple(terms))


def rbf_white(length_scale=1.0, noise_level=0.01) -> KernelSpec:
    return KernelSpec((KernelTerm("rbf", length_scale=length_scale),
                       KernelTerm("white", noise_level=noise_level)))


def matern_linear_white(length_scale=1.0, sigma0=0.0, noise_level=0.01) -> KernelSpec:
    return KernelSpec((KernelTerm("matern32", length_scale=length_scale),
                       KernelTerm("linear", sigma0=sigma0),
                       KernelTerm("white", noise_level=noise_level)))


def rbf_linear_white(length_scale=1.0, sigma0=0.0, noise_level=0.01) -> KernelSpec:
    return KernelSpec((KernelTerm("rbf", length_scale=length_scale),
                       KernelTerm("linear", sigma0=sigma0),
                       KernelTerm("white", noise_level=noise_level)))


def kernel_eval(spec: KernelSpec, x1, x2, training_pair: bool = False) -> float:
    """Covariance between two points.

    ``training_pair`` marks a diagonal entry of the training Gram matrix
    (same training row on both sides); only then does the white term count.
    """
    x1 = as_vector(x1)
    x2 = as_vector(x2)
    if x1.shape != x2.shape:
        raise DimensionMismatch(f"points differ in dimension: {x1.size} vs {x2.size}")
    return float(cross_cov(spec, x1[None, :], x2[None, :])[0, 0]
                 + (spec.noise if training_pair else 0.0))


def cross_cov(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Noise-free covariance matrix between rows of ``a`` and ``b``."""
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"inputs differ in dimension: {a.shape[1]} vs {b.shape[1]}")
    out = np.zeros((a.shape[0], b.shape[0]))
    d2 = None
    for t in spec.terms:
        if t.kind == "white":
            continue
        if t.kind == "linear":
            out += t.sigma0 ** 2 + a @ b.T
            continue
        if d2 is None:
            d2 = _backend.pairwise_sqdist(np.ascontiguousarray(a), np.ascontiguousarray(b))
        if t.kind == "rbf":
            out += np.exp(-d2 / (2.0 * t.length_scale ** 2))
        else:
            r = _SQRT3 * np.sqrt(d2) / t.length_scale
            out += (1.0 + r) * np.exp(-r)
    return out


def prior_var(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Noise-free prior variance ``k(x, x)`` for each row."""
    out = np.zeros(x.shape[0])
    for t in spec.terms:
        if t.kind in ("rbf", "matern32"):
            out += 1.0
        elif t.kind == "linear":
            out += t.sigma0 ** 2 + np.einsum("ij,ij->i", x, x)
    return out


@dataclass
class GpModel:
    kernel: KernelSpec
    train_inputs: np.ndarray
    train_targets: np.ndarray
    chol_factor: np.ndarray
    alpha: np.ndarray
    jitter: float = DEFAULT_JITTER

    @property
    def dim(self) -> int:
        return self.train_inputs.shape[1]

    def predict_many(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means (m, p) and variances (m,) for the rows of ``x``."""
        x = as_matrix(x, "query")
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"query dim {x.shape[1]} != model dim {self.dim}")
        ks = cross_cov(self.kernel, self.train_inputs, x)  # (n, m)
        mean = ks.T @ self.alpha
        v = _backend.solve_lower(self.chol_factor, ks)
        var = prior_var(self.kernel, x) - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)


def gp_fit(kernel: KernelSpec, inputs, targets, jitter: float = DEFAULT_JITTER) -> GpModel:
    """Factor the training Gram matrix and precompute ``alpha = K^-1 y``.

    Raises:
        EmptyTrainingSet: no training rows.
        InvalidInput: non-finite inputs or targets.
        NotPositiveDefinite: the Gram matrix cannot be factored.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.size == 0 or inputs.shape[0] == 0:
        raise EmptyTrainingSet("GP needs at least one training sample")
    inputs = as_matrix(inputs, "inputs")
    targets = as_matrix(targets, "targets")
    if targets.shape[0] != inputs.shape[0]:
        raise DimensionMismatch(
            f"{inputs.shape[0]} inputs but {targets.shape[0]} targets")
    gram = cross_cov(kernel, inputs, inputs)
    gram[np.diag_indices_from(gram)] += kernel.noise
    L = cholesky(gram, jitter)
    alpha = _backend.solve_lower_t(L, _backend.solve_lower(L, targets))
    return GpModel(kernel, inputs.copy(), targets.copy(), L, alpha, jitter)


def gp_predict(model: GpModel, x) -> tuple[np.ndarray, float]:
    x = as_vector(x)
    mean, var = model.predict_many(x[None, :])
    return mean[0], float(var[0])


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    sse_history: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def sse(self) -> float:
        return self.sse_history[-1]


def _sse(points, centroids, assign):
    diff = points - centroids[assign]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeans(points, k: int, rng: Rng, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm seeded with ``k`` distinct sample rows.

    A cluster left empty by an assignment step is re-seeded with the point
    farthest from its centroid (taken from a cluster that can spare it).
    ``sse_history`` holds the within-cluster SSE after every iteration and
    is non-increasing.
    """
    points = as_matrix(points, "points")
    n = points.shape[0]
    if k < 1:
        raise InvalidInput("k must be >= 1")
    if k > n:
        raise KTooLarge(f"k={k} exceeds the number of points n={n}")
    centroids = points[np.sort(rng.choice(n, size=k, replace=False))].copy()
    assign, _ = _backend.nearest_centroid(points, centroids)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        assign = _fill_empty(points, centroids, assign, k)
        for j in range(k):
            centroids[j] = points[assign == j].mean(axis=0)
        history.append(_sse(points, centroids, assign))
        new_assign, best = _backend.nearest_centroid(points, centroids)
        # ties keep the current cluster so coincident centroids cannot thrash
        cur = points - centroids[assign]
        keep = np.einsum("ij,ij->i", cur, cur) <= best
        new_assign = np.where(keep, assign, new_assign)
        if np.array_equal(new_assign, assign) and np.bincount(new_assign, minlength=k).min() > 0:
            break
        assign = new_assign
    return KMeansResult(centroids, np.asarray(assign, dtype=np.intp), history, it)


def _fill_empty(points, centroids, assign, k):
    assign = np.array(assign, dtype=np.intp)
    counts = np.bincount(assign, minlength=k)
    for j in np.flatnonzero(counts == 0):
        d2 = np.einsum("ij,ij->i", points - centroids[assign], points - centroids[assign])
        d2[counts[assign] < 2] = -1.0
        far = int(np.argmax(d2))
        counts[assign[far]] -= 1
        assign[far] = j
        counts[j] = 1
        centroids[j] = points[far]
    return assign


@dataclass
class ClusteredGp:
    centroids: np.ndarray
    members: list[np.ndarray]
    gps: list[GpModel]

    @property
    def k(self) -> int:
        return len(self.gps)

    @property
    def kernel(self) -> KernelSpec:
        return self.gps[0].kernel

    def route(self, x) -> np.ndarray:
        x = as_matrix(x, "query")
        if x.shape[1] != self.centroids.shape[1]:
            raise DimensionMismatch(
                f"query dim {x.shape[1]} != model dim {self.centroids.shape[1]}")
        idx, _ = _backend.nearest_centroid(x, self.centroids)
        return idx

    def predict_many(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = as_matrix(x, "query")
        idx = self.route(x)
        p = self.gps[0].train_targets.shape[1]
        mean = np.empty((x.shape[0], p))
        var = np.empty(x.shape[0])
        for c in np.unique(idx):
            rows = idx == c
            mean[rows], var[rows] = self.gps[c].predict_many(x[rows])
        return mean, var


def clustered_fit(kernel: KernelSpec, inputs, targets, k: int, rng: Rng,
                  jitter: float = DEFAULT_JITTER, workers: int = 1) -> ClusteredGp:
    """k-means on ``inputs`` and one independent GP per cluster."""
    inputs = as_matrix(inputs, "inputs")
    targets = as_matrix(targets, "targets")
    if inputs.shape[0] == 0:
        raise EmptyTrainingSet("GP needs at least one training sample")
    km = kmeans(inputs, k, rng)
    members = [np.flatnonzero(km.assignment == c) for c in range(k)]

    def fit_one(rows):
        return gp_fit(kernel, inputs[rows], targets[rows], jitter)

    if workers > 1 and k > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            gps = list(pool.map(fit_one, members))
    else:
        gps = [fit_one(rows) for rows in members]
    return ClusteredGp(km.centroids, members, gps)


def clustered_predict(model: ClusteredGp, x) -> tuple[np.ndarray, float]:
    x = as_vector(x)
    mean, var = model.predict_many(x[None, :])
    return mean[0], float(var[0])


@dataclass
class SoftPrediction:
    soft_label: np.ndarray
    confidence_input: float


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def to_soft(mean, variance_vec, task: Task | str) -> SoftPrediction:
    """Map a posterior to (soft label, scalar uncertainty).

    Regression passes both through; classification applies softmax to the
    mean and averages the per-output variances.
    """
    mean = as_vector(mean)
    variance_vec = as_vector(variance_vec)
    task = Task(task)
    if task is Task.CLASSIFICATION:
        if mean.size < 2:
            raise BadDimension("classification needs at least 2 outputs")
        return SoftPrediction(softmax(mean), float(np.mean(variance_vec)))
    if mean.size != 1 and variance_vec.size != mean.size:
        raise BadDimension("regression variance must match the output dimension")
    return SoftPrediction(mean.copy(), float(np.mean(variance_vec)))


def soft_labels(means: np.ndarray, variances: np.ndarray, task: Task | str):
    """Vectorised ``to_soft`` for a shared-kernel model: (m, p), (m,) -> labels, sigmas."""
    task = Task(task)
    if task is Task.CLASSIFICATION:
        if means.shape[1] < 2:
            raise BadDimension("classification needs at least 2 outputs")
        return softmax(means, axis=1), variances.copy()
    return means.copy(), variances.copy()


def save_teacher(path, model: ClusteredGp) -> None:
    arrays = {
        "format": np.array(TEACHER_FORMAT),
        "version": np.array(TEACHER_VERSION),
        "kernel": np.array(json.dumps(model.kernel.to_dict())),
        "jitter": np.array(model.gps[0].jitter),
        "centroids": model.centroids,
    }
    for c, (rows, gp) in enumerate(zip(model.members, model.gps)):
        arrays[f"members_{c}"] = rows
        arrays[f"inputs_{c}"] = gp.train_inputs
        arrays[f"targets_{c}"] = gp.train_targets
        arrays[f"chol_{c}"] = gp.chol_factor
        arrays[f"alpha_{c}"] = gp.alpha
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_teacher(path) -> ClusteredGp:
    with np.load(Path(path), allow_pickle=False) as data:
        if str(data["format"]) != TEACHER_FORMAT:
            raise InvalidInput(f"{path} is not a teacher file")
        if int(data["version"]) != TEACHER_VERSION:
            raise InvalidInput(f"unsupported teacher version {int(data['version'])}")
        kernel = KernelSpec.from_dict(json.loads(str(data["kernel"])))
        jitter = float(data["jitter"])
        centroids = data["centroids"]
        members, gps = [], []
        for c in range(centroids.shape[0]):
            members.append(data[f"members_{c}"])
            gps.append(GpModel(kernel, data[f"inputs_{c}"], data[f"targets_{c}"],
                               data[f"chol_{c}"], data[f"alpha_{c}"], jitter))
    return ClusteredGp(centroids, members, gps)
