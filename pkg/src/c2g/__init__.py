"""Heterogeneous CNN-to-GNN distillation with a differentiable sparse graph head."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config
from .data import Dataset, Split, batches, load_csv, load_idx, make_blobs, split
from .distill import (
    DistillConfig,
    TrainLog,
    baseline_train,
    distill_train,
    kd_loss,
    pretrain_teacher,
    student_objective,
)
from .graph import (
    DistanceRow,
    EuclideanStubHead,
    GraphBatch,
    SparseAffinity,
    baseline_graph,
    build_batch_graph,
    distance_head_forward,
    make_distance_head,
    oracle_sparse_row,
    sparse_row,
)
from .inference import (
    InferenceReport,
    baseline_evaluate,
    compare_mechanisms,
    evaluate,
    infer_batch,
    infer_one_by_one,
    make_train_reference,
)
from .nets import (
    CnnTeacher,
    GnnStudent,
    gnn_layer,
    im2col,
    make_student,
    make_teacher,
    student_forward,
    teacher_forward,
)
from .optim import ModelParams, glorot_uniform, sgd_step
from .tensor import (
    ComputationRecord,
    ShapeError,
    Tensor,
    cross_entropy,
    gather_cols,
    matmul,
    no_grad,
    relu,
    softened_softmax,
)

__version__ = "0.1.0"
