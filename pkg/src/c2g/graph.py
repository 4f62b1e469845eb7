"""Differentiable sparse graph construction from learned pairwise distances.

Each node's neighborhood is a probability distribution over candidate nodes
with an exact, steerable sparsity ``s``: given distances ``d`` and the
(s+1)-th smallest distance ``d_piv``, the closed form

    p_j = max(d_piv - d_j, 0) / sum_{k in s nearest} (d_piv - d_k)

puts positive mass on exactly the ``s`` nearest candidates (fewer under
boundary ties) and no mass elsewhere. The same distribution is the solution
of a simplex-constrained quadratic program -- minimize expected distance plus
a squared-l2 pull toward the uniform distribution -- which this module also
solves independently (sort-and-threshold simplex projection) as an oracle for
the closed form.

A batch of rows is assembled into an undirected propagation matrix by
symmetrizing, adding self-loops, and applying the symmetric degree
normalization D^{-1/2} (A + I) D^{-1/2}. All steps participate in the
gradient tape: the selected neighbor set and pivot are treated as locally
constant, and gradients flow through the distance values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .optim import ModelParams, glorot_uniform
from .tensor import Tensor, gather_cols, matmul, relu

__all__ = [
    "DistanceRow",
    "SparseAffinity",
    "GraphBatch",
    "sparse_row",
    "oracle_sparse_row",
    "project_to_simplex",
    "regularized_neighbor_program",
    "sparse_rows_dense",
    "sparse_rows_op",
    "DistanceHead",
    "EuclideanStubHead",
    "make_distance_head",
    "distance_head_forward",
    "build_batch_graph",
    "baseline_graph",
    "symmetrize_dense",
    "normalize_dense",
    "write_graph_csv",
]


# -- domain types -------------------------------------------------------------


@dataclass
class DistanceRow:
    """Distances from one node to a set of candidate nodes.

    ``candidate_ids`` aligns with ``values``; if ``self_id`` appears among the
    candidates its distance is treated as +inf before ranking.
    """

    values: np.ndarray
    candidate_ids: np.ndarray
    self_id: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.candidate_ids = np.asarray(self.candidate_ids, dtype=np.int64)
        if self.values.shape != self.candidate_ids.shape:
            raise ValueError(
                f"values ({self.values.shape}) and candidate_ids "
                f"({self.candidate_ids.shape}) must align"
            )


@dataclass
class SparseAffinity:
    """Row-wise sparse neighbor probabilities as (column, probability) pairs."""

    n_rows: int
    n_cols: int
    rows: list = field(default_factory=list)

    @classmethod
    def from_dense(cls, matrix: np.ndarray, tol: float = 0.0) -> "SparseAffinity":
        matrix = np.asarray(matrix)
        rows = []
        for i in range(matrix.shape[0]):
            cols = np.nonzero(matrix[i] > tol)[0]
            rows.append([(int(j), float(matrix[i, j])) for j in cols])
        return cls(n_rows=matrix.shape[0], n_cols=matrix.shape[1], rows=rows)


@dataclass
class GraphBatch:
    """Node features plus the normalized propagation matrix of one batch."""

    features: Tensor
    propagation: Tensor
    node_ids: np.ndarray


# -- single-row closed form and its QP oracle ----------------------------------


def _masked_values(distances: DistanceRow) -> np.ndarray:
    values = distances.values.copy()
    if distances.self_id is not None:
        values[distances.candidate_ids == distances.self_id] = np.inf
    return values


def _check_row(values: np.ndarray, s: int) -> None:
    n = values.shape[0]
    if not 1 <= s <= n - 1:
        raise ValueError(f"sparsity s={s} out of range for {n} candidates")
    finite = int(np.isfinite(values).sum())
    if finite == 0:
        raise ValueError("all candidate distances are non-finite")
    if finite < s:
        raise ValueError(f"only {finite} finite candidates for sparsity s={s}")


def _rank(values: np.ndarray, ids: np.ndarray, s: int):
    """Positions of the s nearest candidates and the pivot, ties by ascending id."""
    order = np.lexsort((ids, values))
    return order[:s], order[s]


def sparse_row(distances: DistanceRow, s: int) -> np.ndarray:
    """Closed-form s-sparse neighbor distribution over the candidates.

    Exactly the ``s`` smallest-distance candidates receive positive
    probability (fewer when they tie the pivot); the row sums to 1. When the
    pivot distance equals the smallest distance the quotient degenerates and
    the row falls back to the uniform distribution over the ``s`` lowest-id
    nearest candidates (the limit under an infinitesimal perturbation).
    """
    values = _masked_values(distances)
    _check_row(values, s)
    selected, pivot = _rank(values, distances.candidate_ids, s)
    p = np.zeros_like(values)
    d_piv = values[pivot]
    if not np.isfinite(d_piv):
        p[selected] = 1.0 / s
        return p
    denom = s * d_piv - values[selected].sum()
    if denom <= 0:
        p[selected] = 1.0 / s
        return p
    p[selected] = np.maximum(d_piv - values[selected], 0.0) / denom
    return p


def project_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {p : p >= 0, sum(p) = 1} (sort and threshold)."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, y.shape[0] + 1)
    rho = np.nonzero(u + (1.0 - css) / j > 0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(y - theta, 0.0)


def regularized_neighbor_program(values: np.ndarray, gamma: float) -> np.ndarray:
    """Solve min_p <p, d> + gamma * ||p - uniform||^2 over the simplex.

    Completing the square reduces the program to the Euclidean projection of
    ``uniform - d / (2*gamma)`` onto the simplex. Non-finite distances get
    zero probability.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    y = 1.0 / finite.sum() - values[finite] / (2.0 * gamma)
    p = np.zeros_like(values)
    p[finite] = project_to_simplex(y)
    return p


def oracle_sparse_row(distances: DistanceRow, s: int) -> np.ndarray:
    """Independent QP route to the s-sparse neighbor distribution.

    Chooses the trade-off gamma = (s*d_piv - sum of the s nearest) / 2 -- the
    value at which the projection's support has exactly ``s`` entries -- and
    solves the program by simplex projection. Degenerate rows (gamma = 0, or
    an infinite pivot) fall back to the same uniform rule as ``sparse_row``;
    the program is ill-posed there.
    """
    values = _masked_values(distances)
    _check_row(values, s)
    selected, pivot = _rank(values, distances.candidate_ids, s)
    d_piv = values[pivot]
    if not np.isfinite(d_piv) or s * d_piv - values[selected].sum() <= 0:
        p = np.zeros_like(values)
        p[selected] = 1.0 / s
        return p
    gamma = (s * d_piv - values[selected].sum()) / 2.0
    return regularized_neighbor_program(values, gamma)


# -- batched rows with gradient support ----------------------------------------


def sparse_rows_dense(
    distances: np.ndarray,
    s: int,
    excluded: Optional[np.ndarray] = None,
):
    """Row-stochastic s-sparse matrix from a dense distance matrix.

    ``excluded`` marks entries (e.g. the diagonal) treated as +inf. Returns
    the probability matrix and per-row bookkeeping for the backward pass:
    (selected positions, pivot position, denominator or None when the row hit
    a uniform fallback).
    """
    distances = np.asarray(distances, dtype=np.float64)
    values = distances.copy()
    if excluded is not None:
        values[excluded] = np.inf
    b, k = values.shape
    col_ids = np.arange(k)
    probs = np.zeros_like(values)
    rows = []
    for i in range(b):
        _check_row(values[i], s)
        selected, pivot = _rank(values[i], col_ids, s)
        d_piv = values[i, pivot]
        denom = s * d_piv - values[i, selected].sum() if np.isfinite(d_piv) else 0.0
        if denom <= 0:
            probs[i, selected] = 1.0 / s
            rows.append((selected, pivot, None))
        else:
            probs[i, selected] = np.maximum(d_piv - values[i, selected], 0.0) / denom
            rows.append((selected, pivot, denom))
    return probs, rows


def _sparse_rows_backward(g, probs, rows, s, shape):
    # Selected set and pivot index are locally constant; within that region
    # p_j = (d_piv - d_j)/T with T = s*d_piv - sum(d_selected), so
    #   dp_j/dd_k   = -delta_jk/T + p_j/T      (k selected)
    #   dp_j/dd_piv = 1/T - s*p_j/T.
    # Rows on the uniform fallback are locally constant and get no gradient.
    grad = np.zeros(shape)
    for i, (selected, pivot, denom) in enumerate(rows):
        if denom is None:
            continue
        p = probs[i, selected]
        a = np.where(p > 0, g[i, selected], 0.0)
        weighted = float((a * p).sum())
        grad[i, selected] += (-a + weighted) / denom
        grad[i, pivot] += (a.sum() - s * weighted) / denom
    return grad


def sparse_rows_op(distances: Tensor, s: int, excluded: Optional[np.ndarray] = None) -> Tensor:
    """Differentiable batched sparse-row construction."""
    probs, rows = sparse_rows_dense(distances.data, s, excluded)

    def backward(g):
        return (_sparse_rows_backward(g, probs, rows, s, distances.shape),)

    return Tensor._from_op(probs, (distances,), backward)


def _renormalize_rows(matrix: Tensor) -> Tensor:
    """Rescale each row to sum 1; zero-mass rows fall back to uniform off-mass."""
    data = matrix.data
    sums = data.sum(axis=1)
    empty = sums <= 0
    out = np.empty_like(data)
    safe = np.where(empty, 1.0, sums)
    out[:] = data / safe[:, None]
    if empty.any():
        b = data.shape[1]
        for i in np.nonzero(empty)[0]:
            row = np.full(b, 1.0 / max(b - 1, 1))
            row[i] = 0.0
            out[i] = row

    def backward(g):
        inner = (g * out).sum(axis=1)
        grad = (g - inner[:, None]) / safe[:, None]
        grad[empty] = 0.0
        return (grad,)

    return Tensor._from_op(out, (matrix,), backward)


# -- distance heads --------------------------------------------------------------


class DistanceHead:
    """MLP whose decision layer has one neuron per training sample.

    Row i of the output holds the fitted distances from input i to every
    training sample; downstream graph construction only compares values
    within a row, so the output range is unconstrained.
    """

    def __init__(self, params: ModelParams, in_dim: int, hidden: Sequence[int], n_train: int):
        self.params = params
        self.in_dim = in_dim
        self.hidden = tuple(hidden)
        self.n_train = n_train

    @property
    def n_outputs(self) -> int:
        return self.n_train

    def forward(self, x: Tensor) -> Tensor:
        x = Tensor._lift(x)
        if x.data.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"distance head expects [batch, {self.in_dim}] features, got {x.shape}"
            )
        h = x
        for i in range(len(self.hidden)):
            h = relu(matmul(h, self.params[f"w{i}"]) + self.params[f"b{i}"])
        return matmul(h, self.params["w_out"]) + self.params["b_out"]


def make_distance_head(
    rng: np.random.Generator,
    in_dim: int,
    n_train: int,
    hidden: Sequence[int] = (512, 256),
) -> DistanceHead:
    params = ModelParams()
    widths = [in_dim, *hidden]
    for i in range(len(widths) - 1):
        params.add(f"w{i}", glorot_uniform(rng, widths[i], widths[i + 1]))
        params.add(f"b{i}", np.zeros(widths[i + 1]))
    params.add("w_out", glorot_uniform(rng, widths[-1], n_train))
    params.add("b_out", np.zeros(n_train))
    return DistanceHead(params, in_dim, hidden, n_train)


def distance_head_forward(head, x) -> Tensor:
    """Fitted distances from each input row to every training sample."""
    return head.forward(Tensor._lift(x))


class EuclideanStubHead:
    """Drop-in head that returns exact Euclidean distances to a reference set.

    Used for tests and as a sanity baseline: with this head the learned-graph
    machinery must recover plain nearest neighbors.
    """

    def __init__(self, reference: np.ndarray):
        self.reference = np.asarray(reference, dtype=np.float64)

    @property
    def n_outputs(self) -> int:
        return self.reference.shape[0]

    def forward(self, x) -> Tensor:
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        deltas = data[:, None, :] - self.reference[None, :, :]
        return Tensor(np.sqrt((deltas**2).sum(axis=-1)))


# -- batch graph assembly -----------------------------------------------------------


def _symmetrize(directed: Tensor) -> Tensor:
    return (directed + directed.T) * 0.5


def _normalize(affinity: Tensor) -> Tensor:
    # A -> D^{-1/2} (A + I) D^{-1/2}; self-loops keep every degree >= 1.
    b = affinity.shape[0]
    hat = affinity + Tensor(np.eye(b))
    inv_root = hat.sum(axis=1) ** -0.5
    return hat * (inv_root.reshape(b, 1) * inv_root.reshape(1, b))


def symmetrize_dense(directed: np.ndarray) -> np.ndarray:
    return (directed + directed.T) * 0.5


def normalize_dense(affinity: np.ndarray) -> np.ndarray:
    hat = affinity + np.eye(affinity.shape[0])
    inv_root = hat.sum(axis=1) ** -0.5
    return hat * np.outer(inv_root, inv_root)


def build_batch_graph(
    head,
    batch_features,
    batch_ids,
    s: int,
    columns: str = "batch",
) -> GraphBatch:
    """Learned propagation matrix for one batch, on the gradient tape.

    ``columns="batch"`` restricts the head's fitted distances to the batch's
    own columns before the sparse rows are formed. ``columns="full"`` forms
    s-sparse rows over every training column first, then restricts to the
    batch and renormalizes; it needs the whole decision layer per step and
    exists for comparison.
    """
    features = Tensor._lift(batch_features)
    ids = np.asarray(batch_ids, dtype=np.int64)
    b = ids.shape[0]
    if b < 2:
        raise ValueError(f"a batch graph needs at least 2 nodes, got {b}")
    distances = distance_head_forward(head, features)
    if columns == "batch":
        if not 1 <= s <= b - 1:
            raise ValueError(f"sparsity s={s} must lie in [1, {b - 1}] for batch size {b}")
        in_batch = gather_cols(distances, ids)
        directed = sparse_rows_op(in_batch, s, excluded=np.eye(b, dtype=bool))
    elif columns == "full":
        k = distances.shape[1]
        if not 1 <= s <= k - 1:
            raise ValueError(f"sparsity s={s} must lie in [1, {k - 1}] for {k} training columns")
        excluded = np.zeros((b, k), dtype=bool)
        excluded[np.arange(b), ids] = True
        full_rows = sparse_rows_op(distances, s, excluded=excluded)
        directed = _renormalize_rows(gather_cols(full_rows, ids))
    else:
        raise ValueError(f"unknown column mode {columns!r}")
    return GraphBatch(
        features=features,
        propagation=_normalize(_symmetrize(directed)),
        node_ids=ids,
    )


def baseline_graph(features, kind: str, threshold: float, node_ids=None) -> GraphBatch:
    """Fixed-affinity propagation matrix (not on the gradient tape).

    ``inner_product`` keeps v_i . v_j, ``euclidean`` keeps exp(-||v_i - v_j||);
    affinities below the threshold are dropped, then the result is symmetrized
    and normalized exactly like the learned graph.
    """
    data = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    b = data.shape[0]
    if b < 2:
        raise ValueError(f"a batch graph needs at least 2 nodes, got {b}")
    if kind == "inner_product":
        affinity = data @ data.T
    elif kind == "euclidean":
        sq = ((data[:, None, :] - data[None, :, :]) ** 2).sum(axis=-1)
        affinity = np.exp(-np.sqrt(np.maximum(sq, 0.0)))
    else:
        raise ValueError(f"unknown baseline graph kind {kind!r}")
    affinity = np.where(affinity >= threshold, affinity, 0.0)
    np.fill_diagonal(affinity, 0.0)
    propagation = normalize_dense(symmetrize_dense(affinity))
    ids = np.arange(b) if node_ids is None else np.asarray(node_ids, dtype=np.int64)
    return GraphBatch(features=Tensor(data), propagation=Tensor(propagation), node_ids=ids)


def write_graph_csv(path, affinity: SparseAffinity, row_ids=None, col_ids=None) -> None:
    """Dump sparse affinities as `row_id,col_id,weight` rows."""
    row_ids = np.arange(affinity.n_rows) if row_ids is None else np.asarray(row_ids)
    col_ids = np.arange(affinity.n_cols) if col_ids is None else np.asarray(col_ids)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "col_id", "weight"])
        for i, row in enumerate(affinity.rows):
            for col, weight in row:
                writer.writerow([int(row_ids[i]), int(col_ids[col]), repr(weight)])
