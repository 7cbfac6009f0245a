"""Teacher training and student distillation by feature distribution matching.

The student minimizes ``L_c + lam * L_d`` per minibatch, where ``L_c`` is the
cross-entropy of its own predictions and ``L_d`` a distribution metric
between student and teacher features (see :mod:`kd2m.metrics`). ``L_d``'s
gradient reaches the student encoder only; the head sees ``L_c`` alone.
``classical_kd`` swaps the feature term for temperature-scaled KL between
the two networks' predictions.
"""

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import metrics as M
from .data import Dataset, minibatches
from .errors import ConfigError, DegenerateBatchError, DivergenceError, ShapeError
from .nn import (MlpModel, MlpParams, MlpSpec, backward, cosine_lr, forward, init_model, sgd_momentum_step,
                 softmax_cross_entropy)
from .ot import SolverConfig

METHODS = ("none", *M.FEATURE_METRICS, "classical_kd")
LAMBDA_GRID = (0.01, 0.1, 1.0)


@dataclass(frozen=True)
class ModelSpec:
    encoder: MlpSpec
    head: MlpSpec

    def __post_init__(self):
        if self.encoder.n_out != self.head.n_in:
            raise ConfigError("encoder output size must equal head input size")

    @classmethod
    def build(cls, n_in: int, hidden, latent: int, n_classes: int, activation: str = "relu",
              head_hidden=()) -> "ModelSpec":
        return cls(MlpSpec((n_in, *hidden, latent), activation, "encoder"),
                   MlpSpec((latent, *head_hidden, n_classes), activation, "head"))

    @property
    def latent_dim(self) -> int:
        return self.encoder.n_out

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "head": self.head.to_dict()}


@dataclass(frozen=True)
class DistillConfig:
    metric: str = "none"
    lam: float = 0.0
    beta: float = 1.0
    gaussian_mode: str = "diagonal"
    ridge: float = M.DEFAULT_RIDGE
    solver: SolverConfig = field(default_factory=SolverConfig)
    lr0: float = 0.01
    momentum: float = 0.9
    lr_min: float = 1e-4
    epochs: int = 15
    batch_size: int = 32
    seed: int = 0
    kd_temperature: float = 4.0

    def __post_init__(self):
        if self.metric not in METHODS:
            raise ConfigError(f"unknown metric {self.metric!r}; valid names: {', '.join(METHODS)}")
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ConfigError("lambda must be finite and >= 0")
        if self.lam > 0 and self.metric == "none":
            raise ConfigError("lambda > 0 requires a distillation metric")
        if self.gaussian_mode not in ("diagonal", "full"):
            raise ConfigError("gaussian_mode must be 'diagonal' or 'full'")
        if self.gaussian_mode == "full" and self.metric in ("w2_g", "cw2_g", "kl_g") and self.lam > 0:
            raise ConfigError("full-covariance Gaussian metrics have no gradient; use them for evaluation only")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.kd_temperature <= 0:
            raise ConfigError("kd_temperature must be positive")

    def replace(self, **changes) -> "DistillConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_c: float
    loss_d: float
    train_acc: float
    test_acc: float
    n_fallback: int
    wall_time: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_fallback(self) -> int:
        return sum(r.n_fallback for r in self.records)

    def rows(self, timing: bool = False) -> list[dict]:
        out = []
        for r in self.records:
            d = dataclasses.asdict(r)
            if not timing:
                d.pop("wall_time")
            out.append(d)
        return out

    def to_csv(self, timing: bool = False) -> str:
        fields = [f.name for f in dataclasses.fields(EpochRecord) if timing or f.name != "wall_time"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in self.rows(timing):
            writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_json(self, timing: bool = False) -> str:
        return json.dumps({"records": self.rows(timing)}, indent=1)

    def save(self, path, timing: bool = False) -> None:
        path = Path(path)
        path.write_text(self.to_json(timing) if path.suffix == ".json" else self.to_csv(timing))

    @classmethod
    def load_csv(cls, path) -> "TrainLog":
        with open(path, newline="") as fh:
            recs = []
            for row in csv.DictReader(fh):
                recs.append(EpochRecord(
                    int(row["epoch"]), float(row["lr"]), float(row["loss_c"]), float(row["loss_d"]),
                    float(row["train_acc"]), float(row["test_acc"]), int(row["n_fallback"]),
                    float(row.get("wall_time", "nan"))))
        return cls(recs)


class StepResult(NamedTuple):
    loss_c: float
    loss_d: float
    student: MlpModel
    velocity: tuple[MlpParams, MlpParams]
    fallback: bool


def classical_kd_loss(student_logits, teacher_logits, temperature: float) -> tuple[float, np.ndarray]:
    """``T^2 * KL(softmax(t/T) || softmax(s/T))`` averaged over rows, and its student-logit gradient."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    if s.shape != t.shape:
        raise ShapeError("student and teacher logits must have the same shape")
    n = s.shape[0]
    ls = s / temperature
    lt = t / temperature
    log_q = ls - ls.max(axis=1, keepdims=True)
    log_q -= np.log(np.exp(log_q).sum(axis=1, keepdims=True))
    log_p = lt - lt.max(axis=1, keepdims=True)
    log_p -= np.log(np.exp(log_p).sum(axis=1, keepdims=True))
    p = np.exp(log_p)
    kl = float(np.sum(p * (log_p - log_q))) / n
    grad = temperature * (np.exp(log_q) - p) / n
    return max(temperature**2 * kl, 0.0), grad


def distillation_loss(ZS, ZT, y, logits_S, logits_T, config: DistillConfig) -> M.MetricResult:
    """Feature-level distance between the student and teacher batches."""
    return M.distribution_distance(
        config.metric, M.LabeledBatch(ZS, y, logits_S), M.LabeledBatch(ZT, y, logits_T),
        beta=config.beta, solver=config.solver, gaussian_mode=config.gaussian_mode, ridge=config.ridge)


def composite_loss_and_grads(student: MlpModel, teacher: MlpModel | None, X, y, config: DistillConfig,
                             label_logits=None):
    """Forward/backward of ``L_c + lam * L_d`` on one batch.

    Returns ``(loss_c, loss_d, grad_encoder, grad_head, fallback)``. For
    ``jw2_e`` the student's predicted probabilities enter the label cost as
    constants; ``label_logits`` pins them to given values (used when
    differentiating that objective numerically).
    """
    with np.errstate(over="ignore", invalid="ignore"):
        enc_trace = forward(student.encoder, X)
        ZS = enc_trace.output
        head_trace = forward(student.head, ZS)
        logits_S = head_trace.output
        # squared feature distances must stay representable too
        finite = np.isfinite(np.sum(ZS * ZS)) and np.all(np.isfinite(logits_S))
    if not finite:
        raise DivergenceError("student features or logits became non-finite")
    loss_c, d_logits = softmax_cross_entropy(logits_S, y)
    loss_d = 0.0
    d_feat_extra = None
    fallback = False
    if config.metric != "none" and teacher is not None:
        ZT = teacher.features(X)
        logits_T = forward(teacher.head, ZT).output
        if config.metric == "classical_kd":
            loss_d, d_kd = classical_kd_loss(logits_S, logits_T, config.kd_temperature)
            if config.lam > 0:
                d_logits = d_logits + config.lam * d_kd
        else:
            try:
                res = distillation_loss(ZS, ZT, y, logits_S if label_logits is None else label_logits,
                                        logits_T, config)
                loss_d = res.value
                if config.lam > 0:
                    d_feat_extra = config.lam * res.grad_ZS
            except DegenerateBatchError:
                loss_d = math.nan
                fallback = True
    # overflow here leaves non-finite weights, caught by the next forward pass
    with np.errstate(over="ignore", invalid="ignore"):
        g_head, dZ = backward(student.head, head_trace, d_logits)
        if d_feat_extra is not None:
            dZ = dZ + d_feat_extra
        g_enc, _ = backward(student.encoder, enc_trace, dZ)
    return loss_c, loss_d, g_enc, g_head, fallback


def train_step(student: MlpModel, teacher: MlpModel | None, batch, config: DistillConfig,
               velocity=None, lr: float | None = None) -> StepResult:
    """One SGD-momentum update of the student on ``batch = (X, y)``.

    Batches where the metric is undefined (e.g. no class shared for CW2)
    fall back to ``lam = 0`` and are flagged in the result.
    """
    X, y = batch
    lr = config.lr0 if lr is None else lr
    loss_c, loss_d, g_enc, g_head, fallback = composite_loss_and_grads(student, teacher, X, y, config)
    if not math.isfinite(loss_c) or not (fallback or math.isfinite(loss_d)):
        raise DivergenceError(f"non-finite loss (L_c={loss_c}, L_d={loss_d})", model=student)
    v_enc, v_head = velocity if velocity is not None else (None, None)
    enc, v_enc = sgd_momentum_step(student.encoder, g_enc, v_enc, lr, config.momentum)
    head, v_head = sgd_momentum_step(student.head, g_head, v_head, lr, config.momentum)
    new = MlpModel(enc, head, student.seed, student.training_meta)
    return StepResult(loss_c, loss_d, new, (v_enc, v_head), fallback)


def evaluate(model: MlpModel, dataset: Dataset) -> float:
    """Fraction of rows whose argmax logit (lowest index on ties) equals the label."""
    if model.n_classes != dataset.n_classes:
        raise ShapeError(f"model predicts {model.n_classes} classes, dataset has {dataset.n_classes}")
    # a diverged model's finite weights may still overflow here; argmax copes with inf
    with np.errstate(over="ignore", invalid="ignore"):
        pred = np.argmax(model.logits(dataset.X), axis=1)
    return float(np.mean(pred == dataset.y))


def _fit(model: MlpModel, teacher: MlpModel | None, train: Dataset, test: Dataset | None,
         config: DistillConfig) -> tuple[MlpModel, TrainLog]:
    log = TrainLog()
    velocity = None
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(config.lr0, config.lr_min, epoch, config.epochs)
        sum_c = sum_d = 0.0
        n_c = n_d = n_fb = 0
        for batch in minibatches(train, config.batch_size, config.seed, epoch):
            try:
                step = train_step(model, teacher, batch, config, velocity, lr)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch + 1}: {exc}", model=model, log=log) from None
            model, velocity = step.student, step.velocity
            sum_c += step.loss_c
            n_c += 1
            if step.fallback:
                n_fb += 1
            else:
                sum_d += step.loss_d
                n_d += 1
        log.records.append(EpochRecord(
            epoch=epoch + 1,
            lr=lr,
            loss_c=sum_c / max(n_c, 1),
            loss_d=sum_d / n_d if n_d else math.nan,
            train_acc=evaluate(model, train),
            test_acc=evaluate(model, test) if test is not None else math.nan,
            n_fallback=n_fb,
            wall_time=time.perf_counter() - t0,
        ))
    return model, log


def _meta(config: DistillConfig, log: TrainLog, role: str) -> dict:
    meta = {"role": role, "config": config.to_dict(), "epochs_run": len(log)}
    if log.records:
        last = log.records[-1]
        meta.update(final_loss_c=last.loss_c, final_loss_d=last.loss_d, train_acc=last.train_acc,
                    test_acc=last.test_acc)
    return meta


def train_teacher(spec: ModelSpec, dataset: Dataset, config: DistillConfig,
                  test: Dataset | None = None) -> tuple[MlpModel, TrainLog]:
    """Plain supervised training (no distillation term)."""
    config = config.replace(metric="none", lam=0.0)
    model = init_model(spec.encoder, spec.head, config.seed)
    model, log = _fit(model, None, dataset, test, config)
    model.training_meta = _meta(config, log, "teacher")
    return model, log


def distill(student_spec: ModelSpec, teacher: MlpModel, dataset: Dataset, config: DistillConfig,
            test: Dataset | None = None) -> tuple[MlpModel, TrainLog]:
    """Train a fresh student against a frozen teacher."""
    if student_spec.latent_dim != teacher.latent_dim:
        raise ConfigError(f"student latent dim {student_spec.latent_dim} != teacher latent dim {teacher.latent_dim}")
    if student_spec.head.n_out != teacher.n_classes:
        raise ConfigError("student and teacher must predict the same number of classes")
    if student_spec.encoder.n_in != teacher.encoder.spec.n_in:
        raise ConfigError("student and teacher must share the input dimension")
    student = init_model(student_spec.encoder, student_spec.head, config.seed)
    student, log = _fit(student, teacher, dataset, test, config)
    student.training_meta = _meta(config, log, "student")
    return student, log
