"""Labeled datasets, the toy functions and synthetic weak annotators."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (BadClassCount, BothZero, EmptyRange, InvalidInput,
                     NegativeInput)
from .numerics import Rng

TIERS = ("strong", "weak", "soft")


def _rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a
    return a.reshape(len(a), -1) if a.size else a.reshape(len(a), 1)


@dataclass
class LabeledSet:
    inputs: np.ndarray  # (n, d)
    labels: np.ndarray  # (n, p)
    tier: str
    confidences: np.ndarray | None = None  # per-sample Sigma, soft sets only

    def __post_init__(self):
        if self.tier not in TIERS:
            raise InvalidInput(f"unknown tier {self.tier!r}")
        self.inputs = _rows(self.inputs)
        self.labels = _rows(self.labels)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise InvalidInput("inputs and labels differ in length")
        if (self.confidences is not None) != (self.tier == "soft"):
            raise InvalidInput("confidences are required for, and only for, soft sets")
        if self.confidences is not None:
            self.confidences = np.asarray(self.confidences, dtype=np.float64).reshape(-1)
            if self.confidences.shape[0] != self.n or np.any(self.confidences < 0):
                raise InvalidInput("confidences must be one non-negative value per sample")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.intp)
        conf = None if self.confidences is None else self.confidences[idx]
        return LabeledSet(self.inputs[idx], self.labels[idx], self.tier, conf)

    def head(self, m: int) -> "LabeledSet":
        return self.subset(np.arange(min(m, self.n)))


def write_csv(path, *sets: LabeledSet) -> None:
    """One row per sample: inputs..., labels..., tier, sigma (blank unless soft)."""
    d = sets[0].inputs.shape[1]
    p = sets[0].labels.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow([f"x{i}" for i in range(d)] + [f"y{j}" for j in range(p)] + ["tier", "sigma"])
        for s in sets:
            for i in range(s.n):
                sigma = "" if s.confidences is None else repr(float(s.confidences[i]))
                w.writerow([repr(float(v)) for v in s.inputs[i]]
                           + [repr(float(v)) for v in s.labels[i]] + [s.tier, sigma])


def read_csv(path) -> dict[str, LabeledSet]:
    """Inverse of ``write_csv``; returns one set per tier present."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(h.startswith("x") for h in header)
    p = sum(h.startswith("y") for h in header)
    out = {}
    for tier in TIERS:
        sel = [r for r in body if r[d + p] == tier]
        if not sel:
            continue
        arr = np.array([[float(v) for v in r[:d + p]] for r in sel]).reshape(len(sel), d + p)
        conf = np.array([float(r[d + p + 1]) for r in sel]) if tier == "soft" else None
        out[tier] = LabeledSet(arr[:, :d], arr[:, d:], tier, conf)
    return out


def toy_true(x):
    return np.sin(x)


def toy_weak(x):
    """``2 sin(x) / x`` with the removable singularity filled (value 2 at 0)."""
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(x == 0.0, 1.0, x)
    out = np.where(x == 0.0, 2.0, 2.0 * np.sin(safe) / safe)
    return out if out.ndim else float(out)


@dataclass
class AnnotatorSpec:
    """A weak labeling function.

    ``toy_sinc``: ``amplitude * sinc(x)``. ``affine``: ``slope * x + intercept``.
    ``linear_heuristic``: class probabilities ``softmax((x W + b) / temperature)``,
    with each sample's distribution randomly permuted with probability
    ``noise_rate``. ``custom``: any callable ``fn(x, rng) -> labels``.
    """
    kind: str = "toy_sinc"
    amplitude: float = 2.0
    slope: float = 1.0
    intercept: float = 1.0
    weights: np.ndarray | None = None  # (d, classes)
    bias: np.ndarray | None = None
    temperature: float = 1.0
    noise_rate: float = 0.0
    fn: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("toy_sinc", "affine", "linear_heuristic", "custom"):
            raise InvalidInput(f"unknown annotator kind {self.kind!r}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise InvalidInput("noise_rate must be in [0, 1]")
        if self.kind == "linear_heuristic" and (self.weights is None or self.bias is None):
            raise InvalidInput("linear_heuristic needs weights and bias")
        if self.kind == "custom" and self.fn is None:
            raise InvalidInput("custom annotator needs fn")

    def annotate(self, x, rng: Rng | None = None) -> np.ndarray:
        """Weak labels for the rows of ``x`` as an (n, p) array."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "toy_sinc":
            return (0.5 * self.amplitude * toy_weak(x)).reshape(len(x), -1)
        if self.kind == "affine":
            return (self.slope * x + self.intercept).reshape(len(x), -1)
        if self.kind == "custom":
            return np.asarray(self.fn(x, rng), dtype=np.float64).reshape(len(x), -1)
        scores = (x @ self.weights + self.bias) / self.temperature
        scores -= scores.max(axis=1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=1, keepdims=True)
        if self.noise_rate > 0.0:
            rng = rng if rng is not None else Rng(0)
            flip = rng.uniform(size=len(x)) < self.noise_rate
            for i in np.flatnonzero(flip):
                probs[i] = probs[i][rng.permutation(probs.shape[1])]
        return probs


def gen_toy_data(rng: Rng, n_weak: int = 100, n_strong: int = 10,
                 x_range=(-10.0, 10.0), strong_noise_sd: float = 0.1,
                 annotator: AnnotatorSpec | None = None):
    """Weak samples from the annotator and noisy strong samples of sin(x)."""
    lo, hi = float(x_range[0]), float(x_range[1])
    if not hi > lo:
        raise EmptyRange(f"empty sampling range [{lo}, {hi}]")
    if n_weak < 1 or n_strong < 1:
        raise InvalidInput("n_weak and n_strong must be >= 1")
    annotator = annotator if annotator is not None else AnnotatorSpec()
    xw = rng.uniform(lo, hi, n_weak)[:, None]
    xs = rng.uniform(lo, hi, n_strong)[:, None]
    ys = toy_true(xs) + rng.gaussian(0.0, strong_noise_sd, xs.shape)
    weak = LabeledSet(xw, annotator.annotate(xw, rng), "weak")
    strong = LabeledSet(xs, ys, "strong")
    return weak, strong


def toy_test_set(x_range=(-10.0, 10.0), n: int = 1000) -> LabeledSet:
    x = np.linspace(x_range[0], x_range[1], n)[:, None]
    return LabeledSet(x, toy_true(x), "strong")


def class_centers(classes: int, radius: float = 2.0, dim: int = 2) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(classes) / classes
    c = np.zeros((classes, dim))
    c[:, 0] = radius * np.cos(ang)
    c[:, 1] = radius * np.sin(ang)
    return c


def generative_annotator(centers: np.ndarray, spread: float, **kw) -> AnnotatorSpec:
    """Linear annotator equal to the Bayes boundaries of isotropic blobs."""
    w = centers.T / spread ** 2
    b = -0.5 * np.sum(centers ** 2, axis=1) / spread ** 2
    return AnnotatorSpec("linear_heuristic", weights=w, bias=b, **kw)


def perturbed_annotator(centers: np.ndarray, spread: float, rotation: float = 0.6,
                        shift: float = 1.5, temperature: float = 1.0,
                        noise_rate: float = 0.2) -> AnnotatorSpec:
    """Generative annotator with its input frame rotated and its first class
    score shifted up, so it is systematically wrong in part of the space."""
    ann = generative_annotator(centers, spread)
    c, s = np.cos(rotation), np.sin(rotation)
    rot = np.eye(centers.shape[1])
    rot[:2, :2] = [[c, -s], [s, c]]
    bias = ann.bias.copy()
    bias[0] += shift
    return AnnotatorSpec("linear_heuristic", weights=rot @ ann.weights, bias=bias,
                         temperature=temperature, noise_rate=noise_rate)


def _blobs(rng: Rng, n: int, centers: np.ndarray, spread: float):
    labels = rng.integers(0, centers.shape[0], n)
    x = centers[labels] + rng.gaussian(0.0, spread, (n, centers.shape[1]))
    return x, labels


def gen_classification_task(rng: Rng, n: int = 500, classes: int = 3,
                            blob_spread: float = 1.0,
                            annotator: AnnotatorSpec | None = None,
                            n_strong: int = 30, n_test: int = 1000,
                            dim: int = 2, radius: float = 2.0):
    """Gaussian blobs: soft weak labels, one-hot strong labels, one-hot test set."""
    if classes < 2:
        raise BadClassCount(f"need at least 2 classes, got {classes}")
    centers = class_centers(classes, radius, dim)
    if annotator is None:
        annotator = perturbed_annotator(centers, blob_spread)
    eye = np.eye(classes)
    xw, _ = _blobs(rng, n, centers, blob_spread)
    weak = LabeledSet(xw, annotator.annotate(xw, rng), "weak")
    xs, ls = _blobs(rng, n_strong, centers, blob_spread)
    strong = LabeledSet(xs, eye[ls], "strong")
    xt, lt = _blobs(rng, n_test, centers, blob_spread)
    test = LabeledSet(xt, eye[lt], "strong")
    return weak, strong, test


def pairwise_preference(score_pos: float, score_neg: float) -> float:
    """Probability that the positive item outranks the negative one.

    Computed so that ``p(a, b) + p(b, a) == 1`` holds exactly.
    """
    if score_pos < 0 or score_neg < 0:
        raise NegativeInput("scores must be non-negative")
    if score_pos == 0 and score_neg == 0:
        raise BothZero("both scores are zero")
    total = score_pos + score_neg
    if score_pos <= score_neg:
        return score_pos / total
    return 1.0 - score_neg / total

