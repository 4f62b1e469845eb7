"""Teacher pretraining and joint student/graph-head distillation training.

The student objective per batch is

    cross_entropy(student_logits, labels) + alpha * kd

where kd is the KL divergence from the teacher's temperature-softened output
distribution to the student's, KL(soft_teacher || soft_student). The teacher
is evaluated off the tape; gradients reach only the student weights and the
distance head (through the batch graph).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import Dataset, batches, flatten_features
from .graph import baseline_graph, build_batch_graph
from .nets import CnnTeacher, GnnStudent, student_forward, teacher_forward
from .optim import ModelParams, sgd_step
from .tensor import (
    ShapeError,
    Tensor,
    _log_softened,
    _softened,
    cross_entropy,
    log_softmax,
    no_grad,
)

__all__ = [
    "DistillConfig",
    "EpochRecord",
    "TrainLog",
    "kd_loss",
    "student_objective",
    "pretrain_teacher",
    "distill_train",
    "baseline_train",
]


@dataclass
class DistillConfig:
    """Training hyperparameters; defaults follow the reference experiment setup."""

    s: int = 50
    tau: float = 48.0
    alpha: float = 1.0
    lr: float = 0.01
    batch_size: int = 100
    epochs: int = 200
    seed: int = 0
    mechanism: str = "batch"

    def validated(self) -> "DistillConfig":
        """Return a copy with s clipped to batch_size - 1; reject bad values."""
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 (a graph needs 2 nodes), got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")
        if self.mechanism not in ("one", "batch"):
            raise ValueError(f"mechanism must be 'one' or 'batch', got {self.mechanism!r}")
        if self.s < 1:
            raise ValueError(f"sparsity s must be >= 1, got {self.s}")
        return replace(self, s=min(self.s, self.batch_size - 1))


@dataclass
class EpochRecord:
    epoch: int
    ce_loss: float
    kd_loss: float
    total_loss: float
    train_acc: float
    wall_ms: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    CSV_HEADER = ["epoch", "ce_loss", "kd_loss", "total_loss", "train_acc", "wall_ms"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for r in self.records:
                writer.writerow(
                    [r.epoch, repr(r.ce_loss), repr(r.kd_loss), repr(r.total_loss), repr(r.train_acc), repr(r.wall_ms)]
                )

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        log = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                log.records.append(
                    EpochRecord(int(row[0]), *(float(v) for v in row[1:6]))
                )
        return log

    def key_rows(self) -> list:
        """Everything except wall-clock noise, for determinism comparisons."""
        return [(r.epoch, r.ce_loss, r.kd_loss, r.total_loss, r.train_acc) for r in self.records]


def kd_loss(teacher_logits, student_logits, tau: float) -> Tensor:
    """Batch-mean KL(softened teacher || softened student).

    The teacher side is detached; gradients flow only through the student
    logits. Zero exactly when the logits agree.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    student_logits = Tensor._lift(student_logits)
    t_data = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    if t_data.shape != student_logits.shape:
        raise ShapeError(
            f"teacher logits {t_data.shape} and student logits {student_logits.shape} must match"
        )
    q_teacher = _softened(t_data, tau)
    # Both entropy terms go through the same ops so identical logits cancel to
    # exactly 0.0.
    log_q_teacher = Tensor(_log_softened(t_data, tau))
    log_q_student = log_softmax(student_logits, tau)
    q = Tensor(q_teacher)
    reference = (q * log_q_teacher).sum(axis=-1).mean()
    cross = (q * log_q_student).sum(axis=-1).mean()
    return reference - cross


def student_objective(
    student: GnnStudent,
    batch,
    labels,
    teacher_logits,
    cfg: DistillConfig,
) -> Tensor:
    """cross_entropy + alpha * kd on one batch graph, differentiable end to end."""
    logits = student_forward(student, batch)
    return _objective_from_logits(logits, labels, teacher_logits, cfg)[2]


def _objective_from_logits(logits: Tensor, labels, teacher_logits, cfg: DistillConfig):
    ce = cross_entropy(logits, labels)
    if cfg.alpha > 0 and teacher_logits is not None:
        kd = kd_loss(teacher_logits, logits, cfg.tau)
        return ce, kd, ce + cfg.alpha * kd
    return ce, None, ce


def pretrain_teacher(teacher: CnnTeacher, train_data: Dataset, cfg: DistillConfig) -> TrainLog:
    """Train the teacher with cross-entropy, then freeze its parameters."""
    if train_data.n == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    cfg = cfg.validated()
    log = TrainLog()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        seen = correct = 0
        ce_sum = 0.0
        for ids in batches(train_data, train_data.ids, cfg.batch_size, cfg.seed, epoch):
            x = Tensor(train_data.features[ids])
            y = train_data.labels[ids]
            logits = teacher_forward(teacher, x)
            loss = cross_entropy(logits, y)
            loss.backward()
            sgd_step(teacher.params, cfg.lr)
            b = ids.shape[0]
            seen += b
            correct += int((logits.data.argmax(axis=1) == y).sum())
            ce_sum += loss.item() * b
        ce = ce_sum / seen
        log.records.append(
            EpochRecord(
                epoch=epoch,
                ce_loss=ce,
                kd_loss=0.0,
                total_loss=ce,
                train_acc=correct / seen,
                wall_ms=(time.perf_counter() - start) * 1000.0,
            )
        )
    teacher.params.freeze()
    return log


def distill_train(
    teacher: Optional[CnnTeacher],
    student: GnnStudent,
    head,
    train_data: Dataset,
    cfg: DistillConfig,
    columns: str = "batch",
) -> TrainLog:
    """Joint optimization of the GNN student and the graph head.

    Per batch: build the learned graph, run the student, evaluate the frozen
    teacher off the tape, backprop the combined objective, and step student
    and head parameters together. ``teacher`` may be None when alpha is 0
    (plain GNN baseline).
    """
    cfg = cfg.validated()
    if train_data.n == 0:
        raise ValueError("cannot distill on an empty dataset")
    if cfg.alpha > 0 and teacher is None:
        raise ValueError("distillation with alpha > 0 needs a teacher")
    if teacher is not None and not teacher.params.frozen:
        raise ValueError("teacher must be frozen before distillation")
    head_params = getattr(head, "params", None)
    flat = flatten_features(train_data.features)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        seen = correct = 0
        ce_sum = kd_sum = total_sum = 0.0
        for ids in batches(train_data, train_data.ids, cfg.batch_size, cfg.seed, epoch):
            b = ids.shape[0]
            x = Tensor(flat[ids])
            y = train_data.labels[ids]
            graph = build_batch_graph(head, x, ids, min(cfg.s, b - 1), columns=columns)
            logits = student_forward(student, graph)
            t_logits = None
            if cfg.alpha > 0:
                with no_grad():
                    t_logits = teacher_forward(teacher, Tensor(train_data.features[ids]))
            ce, kd, total = _objective_from_logits(logits, y, t_logits, cfg)
            total.backward()
            sgd_step(student.params, cfg.lr)
            if isinstance(head_params, ModelParams) and not head_params.frozen:
                sgd_step(head_params, cfg.lr)
            seen += b
            correct += int((logits.data.argmax(axis=1) == y).sum())
            ce_sum += ce.item() * b
            kd_sum += (kd.item() if kd is not None else 0.0) * b
            total_sum += total.item() * b
        log.records.append(
            EpochRecord(
                epoch=epoch,
                ce_loss=ce_sum / seen,
                kd_loss=kd_sum / seen,
                total_loss=total_sum / seen,
                train_acc=correct / seen,
                wall_ms=(time.perf_counter() - start) * 1000.0,
            )
        )
    return log


def baseline_train(
    teacher: Optional[CnnTeacher],
    student: GnnStudent,
    train_data: Dataset,
    cfg: DistillConfig,
    kind: str,
    threshold: float,
) -> TrainLog:
    """Same loop as distill_train but with a fixed-affinity graph per batch.

    The graph comes from raw feature affinities (inner product or Euclidean)
    thresholded at a fixed cutoff, built outside the tape, so only the student
    weights learn. This is the ablation comparison point for the learned head.
    """
    cfg = cfg.validated()
    if train_data.n == 0:
        raise ValueError("cannot train on an empty dataset")
    if cfg.alpha > 0 and teacher is None:
        raise ValueError("distillation with alpha > 0 needs a teacher")
    if teacher is not None and not teacher.params.frozen:
        raise ValueError("teacher must be frozen before distillation")
    flat = flatten_features(train_data.features)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        seen = correct = 0
        ce_sum = kd_sum = total_sum = 0.0
        for ids in batches(train_data, train_data.ids, cfg.batch_size, cfg.seed, epoch):
            b = ids.shape[0]
            y = train_data.labels[ids]
            graph = baseline_graph(flat[ids], kind, threshold, node_ids=ids)
            logits = student_forward(student, graph)
            t_logits = None
            if cfg.alpha > 0:
                with no_grad():
                    t_logits = teacher_forward(teacher, Tensor(train_data.features[ids]))
            ce, kd, total = _objective_from_logits(logits, y, t_logits, cfg)
            total.backward()
            sgd_step(student.params, cfg.lr)
            seen += b
            correct += int((logits.data.argmax(axis=1) == y).sum())
            ce_sum += ce.item() * b
            kd_sum += (kd.item() if kd is not None else 0.0) * b
            total_sum += total.item() * b
        log.records.append(
            EpochRecord(
                epoch=epoch,
                ce_loss=ce_sum / seen,
                kd_loss=kd_sum / seen,
                total_loss=total_sum / seen,
                train_acc=correct / seen,
                wall_ms=(time.perf_counter() - start) * 1000.0,
            )
        )
    return log
