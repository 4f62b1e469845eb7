"""Inductive test-time prediction.

The trained distance head only measures distances to training samples, so a
test node's graph must be induced through the training set. Two mechanisms:

* one-by-one: cascade a single test sample with a fixed training batch, build
  the sparse graph over the combined node set, and read off the test node's
  logits. Train rows never see the test node; its edges enter through
  symmetrization.
* batch-by-batch: for a whole test batch, pick each sample's highest-
  probability training surrogate, approximate test-test distances by the
  surrogates' fitted distances to each other, and propagate the test batch's
  own features through the approximated graph.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, flatten_features
from .distill import DistillConfig
from .graph import GraphBatch, baseline_graph, normalize_dense, sparse_rows_dense, symmetrize_dense
from .nets import GnnStudent, student_forward
from .tensor import Tensor, no_grad

__all__ = [
    "InferenceReport",
    "TrainReference",
    "make_train_reference",
    "infer_one_by_one",
    "infer_batch",
    "evaluate",
    "baseline_evaluate",
    "compare_mechanisms",
]

_REFERENCE_STREAM = 0x7E57  # keeps the reference batch independent of epoch shuffles


@dataclass
class TrainReference:
    """The fixed training batch reused across a whole inference pass."""

    features: np.ndarray  # (B, d) flat
    ids: np.ndarray  # (B,) head column indices


@dataclass
class InferenceReport:
    mechanism: str
    predictions: np.ndarray
    accuracy: float
    wall_ms: float
    agreement: Optional[float] = None

    @property
    def n_test(self) -> int:
        return self.predictions.shape[0]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mechanism", "n_test", "accuracy", "wall_ms"])
            writer.writerow([self.mechanism, self.n_test, repr(self.accuracy), repr(self.wall_ms)])

    def write_predictions_csv(self, path, labels) -> None:
        labels = np.asarray(labels)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["test_id", "pred", "label"])
            for i, pred in enumerate(self.predictions):
                writer.writerow([i, int(pred), int(labels[i])])


def make_train_reference(train_data: Dataset, cfg: DistillConfig) -> TrainReference:
    """One seeded random training batch of (at most) cfg.batch_size samples."""
    rng = np.random.default_rng([cfg.seed, _REFERENCE_STREAM])
    size = min(cfg.batch_size, train_data.n)
    ids = np.sort(rng.choice(train_data.n, size=size, replace=False))
    return TrainReference(features=flatten_features(train_data.features)[ids], ids=ids)


def infer_one_by_one(
    student: GnnStudent,
    head,
    test_sample: np.ndarray,
    train_batch_features: np.ndarray,
    train_batch_ids: np.ndarray,
    s: int,
) -> np.ndarray:
    """Logits for a single test sample cascaded with a training batch."""
    test_sample = np.asarray(test_sample, dtype=np.float64).reshape(-1)
    train_batch_features = np.asarray(train_batch_features, dtype=np.float64)
    train_batch_ids = np.asarray(train_batch_ids, dtype=np.int64)
    n_train = train_batch_ids.shape[0]
    if n_train < s + 1:
        raise ValueError(f"cascade needs a training batch of at least s+1={s + 1}, got {n_train}")
    with no_grad():
        test_to_train = head.forward(Tensor(test_sample[None, :])).data[0, train_batch_ids]
        train_to_train = head.forward(Tensor(train_batch_features)).data[:, train_batch_ids]
        distances = np.full((n_train + 1, n_train + 1), np.inf)
        distances[0, 1:] = test_to_train
        distances[1:, 1:] = train_to_train
        np.fill_diagonal(distances, np.inf)
        directed, _ = sparse_rows_dense(distances, s)
        propagation = normalize_dense(symmetrize_dense(directed))
        nodes = np.vstack([test_sample[None, :], train_batch_features])
        batch = GraphBatch(
            features=Tensor(nodes),
            propagation=Tensor(propagation),
            node_ids=np.concatenate([[-1], train_batch_ids]),
        )
        logits = student_forward(student, batch)
    return logits.data[0].copy()


def _surrogates(conditional: np.ndarray, train_batch_ids: np.ndarray) -> np.ndarray:
    """Highest-probability training column per row; ties to the lowest train id."""
    positions = np.empty(conditional.shape[0], dtype=np.int64)
    for i in range(conditional.shape[0]):
        order = np.lexsort((train_batch_ids, -conditional[i]))
        positions[i] = order[0]
    return positions


def infer_batch(
    student: GnnStudent,
    head,
    test_batch: np.ndarray,
    train_batch_features: np.ndarray,
    train_batch_ids: np.ndarray,
    s: int,
) -> np.ndarray:
    """Logits for a whole test batch through the surrogate-approximated graph."""
    test_batch = np.asarray(test_batch, dtype=np.float64)
    train_batch_features = np.asarray(train_batch_features, dtype=np.float64)
    train_batch_ids = np.asarray(train_batch_ids, dtype=np.int64)
    b_test = test_batch.shape[0]
    if s > b_test - 1:
        raise ValueError(f"sparsity s={s} needs a test batch of at least s+1={s + 1}, got {b_test}")
    if s > train_batch_ids.shape[0] - 1:
        raise ValueError(
            f"sparsity s={s} needs a training batch of at least s+1={s + 1}, "
            f"got {train_batch_ids.shape[0]}"
        )
    with no_grad():
        test_to_train = head.forward(Tensor(test_batch)).data[:, train_batch_ids]
        conditional, _ = sparse_rows_dense(test_to_train, s)
        sim_positions = _surrogates(conditional, train_batch_ids)
        sim_ids = train_batch_ids[sim_positions]
        surrogate_rows = head.forward(Tensor(train_batch_features[sim_positions])).data
        approx = surrogate_rows[:, sim_ids]
        directed, _ = sparse_rows_dense(approx, s, excluded=np.eye(b_test, dtype=bool))
        propagation = normalize_dense(symmetrize_dense(directed))
        batch = GraphBatch(
            features=Tensor(test_batch),
            propagation=Tensor(propagation),
            node_ids=np.arange(b_test),
        )
        logits = student_forward(student, batch)
    return logits.data.copy()


def _single_node_logits(student: GnnStudent, features: np.ndarray) -> np.ndarray:
    # An isolated node's normalized graph is the 1x1 identity.
    batch = GraphBatch(
        features=Tensor(features),
        propagation=Tensor(np.ones((1, 1))),
        node_ids=np.zeros(1, dtype=np.int64),
    )
    with no_grad():
        return student_forward(student, batch).data.copy()


def evaluate(
    student: GnnStudent,
    head,
    test_set: Dataset,
    train_reference: TrainReference,
    cfg: DistillConfig,
) -> InferenceReport:
    """Run the configured mechanism over the whole test set.

    Labels are consulted only after all predictions are made. Wall time covers
    the prediction loop alone.
    """
    if test_set.n == 0:
        raise ValueError("cannot evaluate on an empty test set")
    feats = flatten_features(test_set.features)
    ref_cap = train_reference.ids.shape[0] - 1
    start = time.perf_counter()
    if cfg.mechanism == "one":
        s_eff = min(cfg.s, ref_cap)
        rows = [
            infer_one_by_one(
                student, head, feats[i], train_reference.features, train_reference.ids, s_eff
            )
            for i in range(test_set.n)
        ]
        logits = np.vstack(rows)
    elif cfg.mechanism == "batch":
        chunks = []
        for startpos in range(0, test_set.n, cfg.batch_size):
            chunk = feats[startpos : startpos + cfg.batch_size]
            if chunk.shape[0] == 1:
                chunks.append(_single_node_logits(student, chunk))
                continue
            s_eff = min(cfg.s, chunk.shape[0] - 1, ref_cap)
            chunks.append(
                infer_batch(
                    student, head, chunk, train_reference.features, train_reference.ids, s_eff
                )
            )
        logits = np.vstack(chunks)
    else:
        raise ValueError(f"unknown mechanism {cfg.mechanism!r}")
    predictions = logits.argmax(axis=1)
    wall_ms = (time.perf_counter() - start) * 1000.0
    accuracy = float((predictions == test_set.labels).mean())
    return InferenceReport(
        mechanism=cfg.mechanism,
        predictions=predictions,
        accuracy=accuracy,
        wall_ms=wall_ms,
    )


def baseline_evaluate(
    student: GnnStudent,
    test_set: Dataset,
    cfg: DistillConfig,
    kind: str,
    threshold: float,
) -> InferenceReport:
    """Evaluate a fixed-graph student: affinity graphs built per test batch."""
    if test_set.n == 0:
        raise ValueError("cannot evaluate on an empty test set")
    feats = flatten_features(test_set.features)
    start = time.perf_counter()
    chunks = []
    for startpos in range(0, test_set.n, cfg.batch_size):
        chunk = feats[startpos : startpos + cfg.batch_size]
        if chunk.shape[0] == 1:
            chunks.append(_single_node_logits(student, chunk))
            continue
        graph = baseline_graph(chunk, kind, threshold)
        with no_grad():
            chunks.append(student_forward(student, graph).data.copy())
    logits = np.vstack(chunks)
    predictions = logits.argmax(axis=1)
    wall_ms = (time.perf_counter() - start) * 1000.0
    return InferenceReport(
        mechanism=kind,
        predictions=predictions,
        accuracy=float((predictions == test_set.labels).mean()),
        wall_ms=wall_ms,
    )


def compare_mechanisms(
    student: GnnStudent,
    head,
    test_set: Dataset,
    train_reference: TrainReference,
    cfg: DistillConfig,
) -> tuple[InferenceReport, InferenceReport]:
    """Timing/accuracy harness: run both mechanisms and record their agreement."""
    from dataclasses import replace

    one = evaluate(student, head, test_set, train_reference, replace(cfg, mechanism="one"))
    batch = evaluate(student, head, test_set, train_reference, replace(cfg, mechanism="batch"))
    agreement = float((one.predictions == batch.predictions).mean())
    one.agreement = agreement
    batch.agreement = agreement
    return one, batch
