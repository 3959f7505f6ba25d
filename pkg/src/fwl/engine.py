"""Pipeline orchestration: pretrain, fit teacher, fine-tune, and baselines."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigParse, EmptyDataset, InvalidInput,
                     MissingConfidences, NegativeInput)
from .gp import ClusteredGp, KernelSpec, Task, clustered_fit, soft_labels
from .numerics import Rng
from .student import (AdamState, LossSpec, StudentNet, TrainResult,
                      train_epochs, weighted_batches)
from .weak import (AnnotatorSpec, LabeledSet, class_centers, gen_classification_task,
                   gen_toy_data, perturbed_annotator, toy_test_set)

STRATEGIES = ("WA", "NN_W", "NN_S", "NN_SplusW", "NN_WtoS", "NN_WomegaToS",
              "FWL_unsuprep", "FWL_noSigma", "FWL", "FWL_s")

# stream keys: Rng(root_seed, (seed, STAGE))
DATA, INIT, PRETRAIN, TEACHER, FINETUNE, STRONG_ONLY, ANNOTATE, SUBSAMPLE = range(8)


@dataclass
class TrainConfig:
    strategy: str = "FWL"
    preset: str = "toy"
    task: str = "regression"
    beta: float = 1.0
    omega: float | None = None
    seed: int = 0
    root_seed: int = 0
    # student
    hidden: tuple = (128, 128, 128)
    activation: str = "tanh"
    loss: str = "mse"
    l2: float = 0.0
    lr: float = 1e-3
    batch_size: int = 32
    epochs_pretrain: int = 300
    epochs_finetune: int = 20
    epochs_strong: int = 300
    # teacher
    kernel: str = "rbf+white:0.01"
    jitter: float = 1e-8
    teacher_input: str = "repr"  # "repr" | "raw"
    cluster_count: int | None = None
    # data
    weak_fn: str = "sinc"  # toy: "sinc" | "affine"; classification: "linear_heuristic"
    n_weak: int = 100
    n_strong: int = 10
    n_test: int = 1000
    x_range: tuple = (-10.0, 10.0)
    strong_noise_sd: float = 0.1
    classes: int = 3
    dim: int = 2
    blob_spread: float = 1.0
    annotator_rotation: float = 0.6
    annotator_shift: float = 1.5
    annotator_noise: float = 0.2
    soft_fraction: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.x_range = tuple(float(v) for v in self.x_range)
        if self.strategy not in STRATEGIES:
            raise ConfigParse(f"unknown strategy {self.strategy!r}")
        if self.task not in ("regression", "classification"):
            raise ConfigParse(f"unknown task {self.task!r}")
        if not self.beta >= 0:
            raise ConfigParse(f"beta must be >= 0, got {self.beta}")
        if self.omega is not None and not 0.0 <= self.omega <= 1.0:
            raise ConfigParse(f"omega must be in [0, 1], got {self.omega}")
        if self.cluster_count is not None and self.cluster_count < 1:
            raise ConfigParse("cluster_count must be >= 1")
        if self.teacher_input not in ("repr", "raw"):
            raise ConfigParse(f"unknown teacher_input {self.teacher_input!r}")
        if self.dim < 2:
            raise ConfigParse("dim must be >= 2")
        if not 0.0 < self.soft_fraction <= 1.0:
            raise ConfigParse("soft_fraction must be in (0, 1]")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["x_range"] = list(self.x_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigParse(f"unknown config key {unknown[0]!r}")
        base = preset_config(d["preset"]) if "preset" in d else cls()
        try:
            return base.replace(**d)
        except TypeError as exc:
            raise ConfigParse(str(exc)) from exc

    def digest(self, exclude=("strategy", "seed")) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in exclude}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def rng(self, stage: int) -> Rng:
        return Rng(self.root_seed, (self.seed, stage))


PRESETS = {
    "toy": {},
    "toy-star": {"n_strong": 5},
    "toy-doublestar": {"weak_fn": "affine"},
    "synth-class": {
        "task": "classification", "loss": "cross_entropy", "hidden": (64, 64),
        "activation": "tanh", "kernel": "rbf+linear+white:0.01",
        "weak_fn": "linear_heuristic", "n_weak": 500, "n_strong": 30,
        "n_test": 1000, "epochs_pretrain": 60, "epochs_finetune": 60,
        "epochs_strong": 200,
    },
}


def preset_config(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigParse(f"unknown preset {name!r}")
    return TrainConfig(preset=name, **{**PRESETS[name], **overrides})


def fidelity(sigma, beta: float):
    """Per-sample step-size factor ``exp(-beta * sigma)`` in (0, 1]."""
    sigma_arr = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma_arr < 0) or beta < 0:
        raise NegativeInput("sigma and beta must be non-negative")
    out = np.exp(-beta * sigma_arr)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- data

@dataclass
class TaskData:
    weak: LabeledSet
    strong: LabeledSet
    test: LabeledSet
    annotator: AnnotatorSpec
    task: Task


def make_annotator(config: TrainConfig) -> AnnotatorSpec:
    if config.weak_fn == "sinc":
        return AnnotatorSpec("toy_sinc")
    if config.weak_fn == "affine":
        return AnnotatorSpec("affine", slope=1.0, intercept=1.0)
    if config.weak_fn == "linear_heuristic":
        centers = class_centers(config.classes, dim=config.dim)
        return perturbed_annotator(centers, config.blob_spread,
                                   rotation=config.annotator_rotation,
                                   shift=config.annotator_shift,
                                   noise_rate=config.annotator_noise)
    raise ConfigParse(f"unknown weak_fn {config.weak_fn!r}")


def make_data(config: TrainConfig) -> TaskData:
    """Draw the datasets for ``config.seed``; independent of the strategy."""
    rng = config.rng(DATA)
    ann = make_annotator(config)
    if config.task == "regression":
        weak, strong = gen_toy_data(rng, config.n_weak, config.n_strong, config.x_range,
                                    config.strong_noise_sd, ann)
        test = toy_test_set(config.x_range, config.n_test)
        return TaskData(weak, strong, test, ann, Task.REGRESSION)
    weak, strong, test = gen_classification_task(
        rng, config.n_weak, config.classes, config.blob_spread, ann,
        n_strong=config.n_strong, n_test=config.n_test, dim=config.dim)
    return TaskData(weak, strong, test, ann, Task.CLASSIFICATION)


# ---------------------------------------------------------------- steps

def init_student(config: TrainConfig, n_in: int, n_out: int) -> StudentNet:
    return StudentNet.mlp(n_in, config.hidden, n_out, config.rng(INIT), config.activation)


def loss_spec(config: TrainConfig) -> LossSpec:
    return LossSpec(config.loss, config.l2)


def _train(config, net, data: LabeledSet, epochs, stage, fidelities=None, plan=None) -> TrainResult:
    state = AdamState.for_net(net, config.lr)
    return train_epochs(net, data.inputs, data.labels, loss_spec(config), state,
                        fidelities, epochs, config.batch_size, config.rng(stage), plan)


def step1_pretrain(config: TrainConfig, weak: LabeledSet, net: StudentNet | None = None,
                   fidelity_const: float | None = None) -> TrainResult:
    """Train a student on the weak set (uniform fidelity unless given)."""
    if weak.n == 0:
        raise EmptyDataset("weak set is empty")
    if net is None:
        net = init_student(config, weak.inputs.shape[1], weak.labels.shape[1])
    return _train(config, net, weak, config.epochs_pretrain, PRETRAIN, fidelity_const)


def cluster_count(config: TrainConfig, n_strong: int) -> int:
    if config.cluster_count is not None:
        return min(config.cluster_count, n_strong)
    return max(1, n_strong // 10)


def teacher_inputs(config: TrainConfig, net: StudentNet, x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) if config.teacher_input == "raw" else net.represent(x)


def step2_fit_teacher(net: StudentNet, strong: LabeledSet, config: TrainConfig) -> ClusteredGp:
    """Fit the clustered GP on ``(psi(x_j), y_j)`` (or raw inputs)."""
    if strong.n == 0:
        raise EmptyDataset("strong set is empty")
    z = teacher_inputs(config, net, strong.inputs)
    return clustered_fit(KernelSpec.parse(config.kernel), z, strong.labels,
                         cluster_count(config, strong.n), config.rng(TEACHER), config.jitter)


def make_soft_dataset(teacher: ClusteredGp, net: StudentNet, pool_inputs,
                      config: TrainConfig) -> LabeledSet:
    """Relabel every pool input with the teacher's soft label and uncertainty."""
    pool_inputs = np.asarray(pool_inputs, dtype=np.float64)
    if pool_inputs.shape[0] == 0:
        raise EmptyDataset("soft-label pool is empty")
    mean, var = teacher.predict_many(teacher_inputs(config, net, pool_inputs))
    labels, sigma = soft_labels(mean, var, config.task)
    return LabeledSet(pool_inputs, labels, "soft", sigma)


def soft_pool(data: TaskData) -> np.ndarray:
    return np.vstack([data.weak.inputs, data.strong.inputs])


def step3_finetune(net: StudentNet, soft: LabeledSet, config: TrainConfig,
                   sampling: bool = False, epochs: int | None = None) -> TrainResult:
    """Fine-tune on the soft set with per-sample step size ``exp(-beta * sigma)``.

    With ``sampling`` the confidences instead set the minibatch sampling
    probabilities and every update uses the full step size.
    """
    if soft.confidences is None:
        raise MissingConfidences("soft set has no confidences")
    epochs = config.epochs_finetune if epochs is None else epochs
    eta2 = fidelity(soft.confidences, config.beta)
    if not sampling:
        return _train(config, net, soft, epochs, FINETUNE, eta2)
    plan = weighted_batches(sampling_probs(eta2), config.batch_size,
                            math.ceil(soft.n / config.batch_size))
    return _train(config, net, soft, epochs, FINETUNE, plan=plan)


def sampling_probs(confidence) -> np.ndarray:
    c = np.asarray(confidence, dtype=np.float64)
    total = c.sum()
    if not total > 0:
        return np.full(c.size, 1.0 / c.size)
    return c / total


def alternating_plan(n_weak: int, n_strong: int, batch_size: int):
    """Weak batches without replacement interleaved with strong batches drawn
    with replacement; indices >= n_weak address the strong rows."""
    def plan(rng: Rng, epoch: int):
        perm = rng.permutation(n_weak)
        out = []
        for i in range(0, n_weak, batch_size):
            out.append(perm[i:i + batch_size])
            out.append(n_weak + rng.choice(n_strong, size=batch_size, replace=True))
        return out
    return plan


# ---------------------------------------------------------------- evaluation

def macro_f1(pred: np.ndarray, true: np.ndarray, classes: int) -> float:
    scores = []
    for c in range(classes):
        tp = np.sum((pred == c) & (true == c))
        fp = np.sum((pred == c) & (true != c))
        fn = np.sum((pred != c) & (true == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def evaluate(model, test: LabeledSet, task) -> float:
    """RMSE (regression) or macro-F1 (classification) on ``test``.

    ``model`` is a StudentNet, an AnnotatorSpec, or an array of predictions.
    """
    if test.n == 0:
        raise EmptyDataset("test set is empty")
    task = Task(task)
    if isinstance(model, StudentNet):
        pred = model.predict(test.inputs)
    elif isinstance(model, AnnotatorSpec):
        pred = model.annotate(test.inputs, Rng(0, (ANNOTATE,)))
    else:
        pred = np.asarray(model, dtype=np.float64).reshape(test.labels.shape)
    if task is Task.REGRESSION:
        return float(np.sqrt(np.mean((pred - test.labels) ** 2)))
    return macro_f1(np.argmax(pred, axis=1), np.argmax(test.labels, axis=1),
                    test.labels.shape[1])


# ---------------------------------------------------------------- runs

@dataclass
class RunReport:
    strategy: str
    config: dict
    metrics: dict
    traces: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def metric(self) -> float:
        return next(iter(self.metrics.values()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, timings: bool = True) -> str:
        d = self.to_dict()
        if not timings:
            d.pop("timings")
        return json.dumps(d, indent=2, sort_keys=True)


class Session:
    """Shares strategy-independent stages across runs with one config and seed.

    Every stage draws from its own stream, so a stage computed here is
    identical to the one a standalone run would compute.
    """

    def __init__(self, config: TrainConfig, data: TaskData | None = None):
        self.config = config
        self.data = data if data is not None else make_data(config)
        self._cache = {}
        self.timings = {}

    def _stage(self, key, fn):
        if key not in self._cache:
            t0 = time.perf_counter()
            self._cache[key] = fn()
            self.timings[key if isinstance(key, str) else key[0]] = time.perf_counter() - t0
        return self._cache[key]

    def with_strong(self, strong: LabeledSet) -> "Session":
        """Session on a different strong set that reuses this one's pretraining."""
        d = self.data
        other = Session(self.config, TaskData(d.weak, strong, d.test, d.annotator, d.task))
        for key in ("init", "pretrain"):
            if key in self._cache:
                other._cache[key] = self._cache[key]
        return other

    @property
    def init_net(self) -> StudentNet:
        d = self.data
        return self._stage("init", lambda: init_student(
            self.config, d.weak.inputs.shape[1], d.weak.labels.shape[1]))

    @property
    def pretrained(self) -> TrainResult:
        return self._stage("pretrain", lambda: step1_pretrain(
            self.config, self.data.weak, self.init_net))

    def teacher(self, raw: bool = False) -> tuple[ClusteredGp, StudentNet, TrainConfig]:
        cfg = self.config.replace(teacher_input="raw") if raw else self.config
        net = self.init_net if raw else self.pretrained.net
        t = self._stage(("teacher", raw), lambda: step2_fit_teacher(net, self.data.strong, cfg))
        return t, net, cfg

    def soft(self, raw: bool = False, fraction: float | None = None) -> LabeledSet:
        """Soft set over the full pool, optionally subsampled to ``fraction``."""
        fraction = self.config.soft_fraction if fraction is None else fraction

        def build():
            teacher, net, cfg = self.teacher(raw)
            return make_soft_dataset(teacher, net, soft_pool(self.data), cfg)
        full = self._stage(("soft", raw), build)
        if fraction >= 1.0:
            return full
        m = max(1, int(round(fraction * full.n)))
        # one permutation per seed, so smaller fractions are nested in larger ones
        perm = self._stage("soft_perm", lambda: self.config.rng(SUBSAMPLE).permutation(full.n))
        return full.subset(np.sort(perm[:m]))

    def mean_eta2(self, beta: float) -> float:
        return float(np.mean(fidelity(self.soft(fraction=1.0).confidences, beta)))

    def run(self, strategy: str, **overrides) -> RunReport:
        """Run one strategy; only stages after the shared ones may be overridden."""
        bad = set(overrides) - {"beta", "omega", "epochs_finetune", "soft_fraction"}
        if bad:
            raise InvalidInput(f"cannot override shared-stage settings {sorted(bad)}")
        return _dispatch(self, self.config.replace(strategy=strategy, **overrides))


def _dispatch(sess: Session, cfg: TrainConfig) -> RunReport:
    d = sess.data
    s = cfg.strategy
    traces, timings, notes, extra = {}, {}, [], {}

    def timed(name, fn):
        t0 = time.perf_counter()
        out = fn()
        timings[name] = time.perf_counter() - t0
        return out

    def pretrained():
        r = sess.pretrained
        traces["pretrain"] = r.losses
        timings["pretrain"] = sess.timings.get("pretrain", 0.0)
        return r.net

    if s == "WA":
        model = d.annotator
    elif s == "NN_W":
        model = pretrained()
    elif s == "NN_S":
        r = timed("strong", lambda: _train(cfg, sess.init_net, d.strong, cfg.epochs_strong, STRONG_ONLY))
        traces["strong"] = r.losses
        model = r.net
    elif s == "NN_SplusW":
        both = LabeledSet(np.vstack([d.weak.inputs, d.strong.inputs]),
                          np.vstack([d.weak.labels, d.strong.labels]), "weak")
        plan = alternating_plan(d.weak.n, d.strong.n, cfg.batch_size)
        r = timed("mixed", lambda: _train(cfg, sess.init_net, both, cfg.epochs_pretrain, PRETRAIN, plan=plan))
        traces["mixed"] = r.losses
        model = r.net
    elif s == "NN_WtoS":
        net = pretrained()
        r = timed("finetune", lambda: _train(cfg, net, d.strong, cfg.epochs_finetune, FINETUNE))
        traces["finetune"] = r.losses
        model = r.net
    elif s == "NN_WomegaToS":
        omega = cfg.omega if cfg.omega is not None else sess.mean_eta2(cfg.beta)
        extra["omega"] = omega
        r1 = timed("pretrain", lambda: step1_pretrain(cfg, d.weak, sess.init_net, omega))
        r2 = timed("finetune", lambda: _train(cfg, r1.net, d.strong, cfg.epochs_finetune, FINETUNE))
        traces["pretrain"], traces["finetune"] = r1.losses, r2.losses
        model = r2.net
    elif s == "FWL_unsuprep":
        notes.append("approximation: teacher on raw inputs, student not pretrained")
        soft = sess.soft(raw=True, fraction=cfg.soft_fraction)
        r = timed("finetune", lambda: step3_finetune(sess.init_net, soft, cfg))
        traces["finetune"] = r.losses
        extra["mean_eta2"] = float(np.mean(fidelity(soft.confidences, cfg.beta)))
        model = r.net
    else:  # FWL, FWL_noSigma, FWL_s
        if s == "FWL_noSigma":
            cfg = cfg.replace(beta=0.0)
        net = pretrained()
        soft = sess.soft(fraction=cfg.soft_fraction)
        timings["teacher"] = sess.timings.get("teacher", 0.0)
        r = timed("finetune", lambda: step3_finetune(net, soft, cfg, sampling=(s == "FWL_s")))
        traces["finetune"] = r.losses
        extra["mean_eta2"] = float(np.mean(fidelity(soft.confidences, cfg.beta)))
        model = r.net
    metric = timed("evaluate", lambda: evaluate(model, d.test, d.task))
    key = "rmse" if d.task is Task.REGRESSION else "macro_f1"
    report = RunReport(s, cfg.to_dict(), {key: metric}, traces, timings, notes, extra)
    report.model = model
    return report


def run_strategy(config: TrainConfig, data: TaskData | None = None) -> RunReport:
    return Session(config, data).run(config.strategy)
