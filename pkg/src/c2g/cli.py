"""The `c2g` command line: train-teacher, distill, eval, graph, sweep.

Each subcommand reads one `key = value` config file, writes its artifacts
(checkpoints, CSVs, and matching PNG figures) into the output directory, and
exits 0 on success, 1 on config errors, or 2 when a prerequisite checkpoint
is missing.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config
from .data import Dataset, flatten_features, load_csv, load_idx, make_blobs, split
from .distill import baseline_train, distill_train, pretrain_teacher
from .graph import SparseAffinity, make_distance_head, sparse_rows_dense, symmetrize_dense, write_graph_csv
from .inference import baseline_evaluate, evaluate, make_train_reference
from .nets import CnnTeacher, GnnStudent, make_student, make_teacher
from .optim import ModelParams


class MissingCheckpoint(FileNotFoundError):
    """A stage was run before its prerequisite produced a checkpoint."""


# -- pipeline helpers (also reused by the acceptance suite) ----------------------


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data == "blobs":
        return make_blobs(cfg.blobs_n, cfg.blobs_classes, cfg.blobs_d, cfg.blobs_spread, cfg.seed)
    if cfg.data == "idx":
        return load_idx(cfg.images_path, cfg.labels_path)
    column = int(cfg.label_column) if cfg.label_column.lstrip("-").isdigit() else cfg.label_column
    return load_csv(cfg.csv_path, column)


def split_dataset(cfg: RunConfig, ds: Dataset) -> tuple[Dataset, Dataset]:
    parts = split(ds, cfg.test_fraction, cfg.seed)
    return ds.subset(parts.train_ids), ds.subset(parts.test_ids)


def teacher_input_shape(ds: Dataset) -> tuple[int, int, int]:
    if ds.features.ndim == 4:
        return ds.features.shape[1:]
    # Flat rows are viewed as one-pixel-tall single-channel images.
    return (1, 1, ds.features.shape[1])


def build_teacher(cfg: RunConfig, ds: Dataset, rng: np.random.Generator) -> CnnTeacher:
    return make_teacher(
        rng,
        teacher_input_shape(ds),
        ds.class_count,
        conv_channels=cfg.teacher_channels,
        fc_hidden=cfg.teacher_fc_hidden,
    )


def build_student_and_head(cfg: RunConfig, train_ds: Dataset, rng: np.random.Generator):
    in_dim = flatten_features(train_ds.features).shape[1]
    student = make_student(rng, in_dim, cfg.gnn_hidden, train_ds.class_count)
    head = make_distance_head(rng, in_dim, train_ds.n, hidden=cfg.head_widths)
    return student, head


def save_models(path, **named_params: ModelParams) -> None:
    arrays = {}
    for prefix, params in named_params.items():
        for name, tensor in params.items():
            arrays[f"{prefix}.{name}"] = tensor.data
    save_checkpoint(path, arrays)


def load_into(params: ModelParams, arrays: dict, prefix: str) -> None:
    state = {
        name[len(prefix) + 1 :]: value
        for name, value in arrays.items()
        if name.startswith(prefix + ".")
    }
    params.load_state(state)


def _load_frozen_teacher(cfg: RunConfig, ds: Dataset, out: Path) -> CnnTeacher:
    path = out / "teacher.c2g"
    if not path.exists():
        raise MissingCheckpoint(f"{path} not found; run `c2g train-teacher` first")
    # The checkpoint overwrites every weight, so the init generator is moot.
    teacher = build_teacher(cfg, ds, np.random.default_rng(0))
    load_into(teacher.params, load_checkpoint(path), "teacher")
    teacher.params.freeze()
    return teacher


# -- subcommands -------------------------------------------------------------------


def cmd_train_teacher(cfg: RunConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    train_ds, _ = split_dataset(cfg, ds)
    teacher = build_teacher(cfg, ds, np.random.default_rng(cfg.seed))
    dcfg = cfg.distill_config()
    if cfg.teacher_epochs:
        dcfg = replace(dcfg, epochs=cfg.teacher_epochs)
    log = pretrain_teacher(teacher, train_ds, dcfg)
    save_models(out / "teacher.c2g", teacher=teacher.params)
    log.write_csv(out / "train_log.csv")
    report.render_train_log(log, out / "train_log.png")
    last = log.records[-1]
    print(f"teacher: {cfg.epochs} epochs, final train acc {last.train_acc:.3f}, loss {last.total_loss:.4f}")
    print(f"wrote {out / 'teacher.c2g'}, train_log.csv, train_log.png")
    return 0


def cmd_distill(cfg: RunConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    train_ds, _ = split_dataset(cfg, ds)
    dcfg = cfg.distill_config()
    teacher = _load_frozen_teacher(cfg, ds, out) if dcfg.alpha > 0 else None
    rng = np.random.default_rng(cfg.seed)
    student, head = build_student_and_head(cfg, train_ds, rng)
    if cfg.graph_kind == "learned":
        log = distill_train(teacher, student, head, train_ds, dcfg, columns=cfg.graph_columns)
        save_models(out / "student.c2g", student=student.params, head=head.params)
    else:
        log = baseline_train(teacher, student, train_ds, dcfg, cfg.graph_kind, cfg.graph_threshold)
        save_models(out / "student.c2g", student=student.params)
    log.write_csv(out / "train_log.csv")
    report.render_train_log(log, out / "train_log.png")
    last = log.records[-1]
    print(f"student ({cfg.graph_kind}): {cfg.epochs} epochs, final train acc {last.train_acc:.3f}")
    print(f"wrote {out / 'student.c2g'}, train_log.csv, train_log.png")
    return 0


def _load_student_and_head(cfg: RunConfig, train_ds: Dataset, out: Path):
    path = out / "student.c2g"
    if not path.exists():
        raise MissingCheckpoint(f"{path} not found; run `c2g distill` first")
    arrays = load_checkpoint(path)
    student, head = build_student_and_head(cfg, train_ds, np.random.default_rng(0))
    load_into(student.params, arrays, "student")
    student.params.freeze()
    if cfg.graph_kind == "learned":
        load_into(head.params, arrays, "head")
        head.params.freeze()
    return student, head


def cmd_eval(cfg: RunConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    train_ds, test_ds = split_dataset(cfg, ds)
    student, head = _load_student_and_head(cfg, train_ds, out)
    dcfg = cfg.distill_config()
    if cfg.graph_kind == "learned":
        reference = make_train_reference(train_ds, dcfg)
        rep = evaluate(student, head, test_ds, reference, dcfg)
    else:
        rep = baseline_evaluate(student, test_ds, dcfg, cfg.graph_kind, cfg.graph_threshold)
    rep.write_csv(out / "eval.csv")
    rep.write_predictions_csv(out / "eval_predictions.csv", test_ds.labels)
    report.render_eval(rep, test_ds.labels, out / "eval.png")
    print(f"eval ({rep.mechanism}): accuracy {rep.accuracy:.4f} on {rep.n_test} samples, {rep.wall_ms:.0f} ms")
    print(f"wrote {out / 'eval.csv'}, eval_predictions.csv, eval.png")
    return 0


def cmd_graph(cfg: RunConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    train_ds, _ = split_dataset(cfg, ds)
    student, head = _load_student_and_head(cfg, train_ds, out)
    dcfg = cfg.distill_config()
    reference = make_train_reference(train_ds, dcfg)
    n_ref = reference.ids.shape[0]
    s_eff = min(dcfg.s, n_ref - 1)
    if cfg.graph_kind == "learned":
        from .tensor import Tensor, no_grad

        with no_grad():
            distances = head.forward(Tensor(reference.features)).data[:, reference.ids]
        directed, _ = sparse_rows_dense(distances, s_eff, excluded=np.eye(n_ref, dtype=bool))
        matrix = directed
    else:
        from .graph import baseline_graph

        graph = baseline_graph(reference.features, cfg.graph_kind, cfg.graph_threshold)
        matrix = graph.propagation.data
    affinity = SparseAffinity.from_dense(matrix)
    write_graph_csv(out / "graph_edges.csv", affinity, row_ids=reference.ids, col_ids=reference.ids)
    report.render_graph(symmetrize_dense(matrix), out / "graph_edges.png")
    edges = sum(len(row) for row in affinity.rows)
    print(f"graph: {edges} edges over {n_ref} nodes (s={s_eff})")
    print(f"wrote {out / 'graph_edges.csv'}, graph_edges.png")
    return 0


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    train_ds, test_ds = split_dataset(cfg, ds)
    base = cfg.distill_config()
    teacher = _load_frozen_teacher(cfg, ds, out) if base.alpha > 0 else None
    s_values = []
    for s in cfg.s_list:
        clipped = min(s, cfg.batch_size - 1)
        if clipped not in s_values:
            s_values.append(clipped)
    rows = []
    for tau in cfg.tau_list:
        for s in s_values:
            dcfg = replace(base, tau=tau, s=s)
            rng = np.random.default_rng(cfg.seed)
            student, head = build_student_and_head(cfg, train_ds, rng)
            distill_train(teacher, student, head, train_ds, dcfg, columns=cfg.graph_columns)
            reference = make_train_reference(train_ds, dcfg)
            rep = evaluate(student, head, test_ds, reference, dcfg)
            rows.append((tau, s, rep.accuracy))
            print(f"sweep: tau={tau} s={s} accuracy={rep.accuracy:.4f}")
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "s", "accuracy"])
        for tau, s, acc in rows:
            writer.writerow([repr(float(tau)), s, repr(acc)])
    report.render_sweep(rows, out / "sweep.png")
    print(f"wrote {out / 'sweep.csv'}, sweep.png")
    return 0


_COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "graph": cmd_graph,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="c2g",
        description="Heterogeneous CNN-to-GNN distillation with a learned sparse graph head.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("train-teacher", "pretrain the CNN teacher and checkpoint it"),
        ("distill", "train the GNN student and graph head against the teacher"),
        ("eval", "inductive evaluation of a distilled student"),
        ("graph", "dump one reference batch's learned affinities"),
        ("sweep", "temperature/sparsity sensitivity grid"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a key = value config file")
        p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--mechanism",
            choices=["one", "batch"],
            default=None,
            help="override the inference mechanism",
        )
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.mechanism is not None:
            cfg.mechanism = args.mechanism
        cfg.validate()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[args.command](cfg, out)
    except MissingCheckpoint as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
