import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from c2g.data import make_blobs
from c2g.distill import (
    DistillConfig,
    TrainLog,
    baseline_train,
    distill_train,
    kd_loss,
    pretrain_teacher,
    student_objective,
)
from c2g.graph import EuclideanStubHead, build_batch_graph, make_distance_head
from c2g.nets import make_student, make_teacher, student_forward, teacher_forward
from c2g.tensor import ShapeError, Tensor
from helpers import central_difference, rel_error


def tiny_config(**overrides):
    base = dict(s=3, tau=4.0, alpha=1.0, lr=0.05, batch_size=10, epochs=8, seed=0)
    base.update(overrides)
    return DistillConfig(**base)


class TestKdLoss:
    def test_identical_logits_give_exact_zero(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(scale=5, size=(4, 6))
        for tau in (0.25, 1.0, 48.0, 1e4):
            assert kd_loss(Tensor(logits), Tensor(logits.copy()), tau).item() == 0.0

    def test_hand_value(self):
        value = kd_loss(Tensor([[math.log(3), 0.0]]), Tensor([[0.0, 0.0]]), tau=1.0)
        expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
        assert abs(value.item() - expected) < 1e-12
        assert abs(value.item() - 0.13081) < 1e-5

    def test_huge_temperature_flattens_to_zero(self):
        rng = np.random.default_rng(1)
        t = rng.normal(scale=3, size=(5, 4))
        s = rng.normal(scale=3, size=(5, 4))
        assert kd_loss(Tensor(t), Tensor(s), tau=1e6).item() < 1e-6

    def test_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            t = rng.normal(scale=rng.uniform(0.5, 10), size=(3, 5))
            s = rng.normal(scale=rng.uniform(0.5, 10), size=(3, 5))
            assert kd_loss(Tensor(t), Tensor(s), float(rng.uniform(0.1, 60))).item() >= 0.0

    def test_teacher_side_detached(self):
        teacher = Tensor(np.random.default_rng(3).normal(size=(2, 3)), requires_grad=True)
        student = Tensor(np.random.default_rng(4).normal(size=(2, 3)), requires_grad=True)
        kd_loss(teacher, student, tau=2.0).backward()
        assert teacher.grad is None
        assert student.grad is not None
        assert np.abs(student.grad).max() > 0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        t = rng.normal(size=(3, 4))
        s = rng.normal(size=(3, 4))

        def f():
            return kd_loss(Tensor(t), Tensor(s), tau=3.0).item()

        st = Tensor(s, requires_grad=True)
        kd_loss(Tensor(t), st, tau=3.0).backward()
        assert rel_error(st.grad, central_difference(f, s)) < 1e-4

    def test_rejects_bad_temperature_and_shapes(self):
        with pytest.raises(ValueError):
            kd_loss(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))), tau=0.0)
        with pytest.raises(ShapeError):
            kd_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))), tau=1.0)


class TestStudentObjective:
    def setup_method(self):
        rng = np.random.default_rng(6)
        self.head = make_distance_head(rng, in_dim=4, n_train=8, hidden=(8,))
        self.student = make_student(rng, in_dim=4, hidden=6, classes=3)
        self.feats = rng.normal(size=(6, 4))
        self.ids = np.arange(6)
        self.labels = np.array([0, 1, 2, 0, 1, 2])
        self.teacher_logits = rng.normal(size=(6, 3))

    def batch(self):
        return build_batch_graph(self.head, self.feats, self.ids, s=2)

    def test_alpha_zero_reduces_to_cross_entropy(self):
        from c2g.tensor import cross_entropy

        cfg = tiny_config(alpha=0.0)
        loss = student_objective(self.student, self.batch(), self.labels, self.teacher_logits, cfg)
        logits = student_forward(self.student, self.batch())
        assert loss.item() == cross_entropy(logits, self.labels).item()

    def test_affine_in_alpha(self):
        losses = {}
        for alpha in (0.0, 1.0, 2.0, 5.0):
            cfg = tiny_config(alpha=alpha)
            losses[alpha] = student_objective(
                self.student, self.batch(), self.labels, self.teacher_logits, cfg
            ).item()
        ce = losses[0.0]
        kd = losses[1.0] - ce
        for alpha, value in losses.items():
            assert abs(value - (ce + alpha * kd)) < 1e-12

    def test_matching_logits_and_labels_leave_only_cross_entropy(self):
        from c2g.tensor import cross_entropy

        cfg = tiny_config(alpha=1.0)
        logits = student_forward(self.student, self.batch())
        labels = logits.data.argmax(axis=1)
        loss = student_objective(self.student, self.batch(), labels, logits.data.copy(), cfg)
        assert loss.item() == cross_entropy(logits, labels).item()

    def test_gradient_reaches_head_parameters(self):
        cfg = tiny_config(alpha=1.0)
        self.head.params.zero_grad()
        loss = student_objective(self.student, self.batch(), self.labels, self.teacher_logits, cfg)
        loss.backward()
        total = sum(
            float(np.abs(t.grad).sum()) for _, t in self.head.params.items() if t.grad is not None
        )
        assert total > 0

    def test_head_gradient_matches_finite_differences(self):
        cfg = tiny_config(alpha=1.0)

        def f():
            return student_objective(
                self.student, self.batch(), self.labels, self.teacher_logits, cfg
            ).item()

        self.head.params.zero_grad()
        self.student.params.zero_grad()
        student_objective(self.student, self.batch(), self.labels, self.teacher_logits, cfg).backward()
        w0 = self.head.params["w0"]
        fd = central_difference(f, w0.data)
        assert rel_error(w0.grad, fd) < 1e-3


class TestPretrainTeacher:
    def run(self, epochs=12):
        ds = make_blobs(60, 3, 8, spread=0.3, seed=1)
        teacher = make_teacher(
            np.random.default_rng(0), (1, 1, 8), 3, conv_channels=(4,), fc_hidden=8
        )
        log = pretrain_teacher(teacher, ds, tiny_config(epochs=epochs))
        return teacher, log, ds

    def test_loss_decreases_over_first_epochs(self):
        _, log, _ = self.run(epochs=10)
        losses = [r.total_loss for r in log.records]
        assert losses[-1] < losses[0]
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))

    def test_one_record_per_epoch(self):
        _, log, _ = self.run(epochs=12)
        assert [r.epoch for r in log.records] == list(range(12))
        assert all(r.wall_ms >= 0 for r in log.records)

    def test_frozen_teacher_is_deterministic(self):
        teacher, _, ds = self.run(epochs=3)
        assert teacher.params.frozen
        x = ds.features[:5]
        a = teacher_forward(teacher, x).data
        b = teacher_forward(teacher, x).data
        assert_array_equal(a, b)

    def test_empty_dataset_rejected(self):
        ds = make_blobs(10, 2, 4, 0.3, seed=0).subset([])
        teacher = make_teacher(np.random.default_rng(0), (1, 1, 4), 2, conv_channels=(2,), fc_hidden=4)
        with pytest.raises(ValueError, match="empty"):
            pretrain_teacher(teacher, ds, tiny_config())


def make_pipeline(seed=0, n=60, alpha=1.0):
    ds = make_blobs(n, 3, 8, spread=0.4, seed=2)
    rng = np.random.default_rng(seed)
    teacher = make_teacher(rng, (1, 1, 8), 3, conv_channels=(4,), fc_hidden=8)
    pretrain_teacher(teacher, ds, tiny_config(epochs=5))
    init = np.random.default_rng(seed)
    student = make_student(init, 8, 12, 3)
    head = make_distance_head(init, 8, ds.n, hidden=(16,))
    return ds, teacher, student, head


class TestDistillTrain:
    def test_loss_improves(self):
        ds, teacher, student, head = make_pipeline()
        log = distill_train(teacher, student, head, ds, tiny_config(epochs=15))
        assert log.records[-1].total_loss < log.records[0].total_loss

    def test_alpha_zero_matches_teacherless_run(self):
        ds, teacher, _, _ = make_pipeline()
        cfg = tiny_config(alpha=0.0, epochs=6)

        init = np.random.default_rng(7)
        student_a = make_student(init, 8, 12, 3)
        head_a = make_distance_head(init, 8, ds.n, hidden=(16,))
        with_teacher = distill_train(teacher, student_a, head_a, ds, cfg)

        init = np.random.default_rng(7)
        student_b = make_student(init, 8, 12, 3)
        head_b = make_distance_head(init, 8, ds.n, hidden=(16,))
        without = distill_train(None, student_b, head_b, ds, cfg)

        assert with_teacher.key_rows() == without.key_rows()
        for name in student_a.params.names():
            assert_array_equal(student_a.params[name].data, student_b.params[name].data)

    def test_stub_head_trains_student_only(self):
        ds, teacher, student, _ = make_pipeline()
        stub = EuclideanStubHead(ds.features)
        log = distill_train(teacher, student, stub, ds, tiny_config(epochs=4))
        assert len(log.records) == 4

    def test_teacher_gradients_stay_clear(self):
        ds, teacher, student, head = make_pipeline()
        distill_train(teacher, student, head, ds, tiny_config(epochs=2))
        for _, tensor in teacher.params.items():
            assert tensor.grad is None or np.abs(tensor.grad).max() == 0

    def test_seed_determinism_bit_identical_logs(self):
        logs = []
        for _ in range(2):
            ds, teacher, student, head = make_pipeline(seed=3)
            logs.append(distill_train(teacher, student, head, ds, tiny_config(epochs=4)))
        assert logs[0].key_rows() == logs[1].key_rows()

    def test_unfrozen_teacher_rejected(self):
        ds, teacher, student, head = make_pipeline()
        for _, tensor in teacher.params.items():
            tensor.requires_grad = True
        with pytest.raises(ValueError, match="frozen"):
            distill_train(teacher, student, head, ds, tiny_config())

    def test_alpha_without_teacher_rejected(self):
        ds, _, student, head = make_pipeline()
        with pytest.raises(ValueError, match="teacher"):
            distill_train(None, student, head, ds, tiny_config(alpha=1.0))

    def test_batch_size_below_two_rejected(self):
        with pytest.raises(ValueError, match="batch_size"):
            tiny_config(batch_size=1).validated()

    def test_sparsity_clipped_to_batch(self):
        cfg = tiny_config(s=100, batch_size=10).validated()
        assert cfg.s == 9


class TestBaselineTrain:
    def test_trains_and_logs(self):
        ds, teacher, student, _ = make_pipeline()
        log = baseline_train(teacher, student, ds, tiny_config(epochs=5), "euclidean", 0.5)
        assert len(log.records) == 5
        assert log.records[-1].total_loss < log.records[0].total_loss


class TestTrainLogCsv:
    def test_round_trip(self, tmp_path):
        ds, teacher, student, head = make_pipeline()
        log = distill_train(teacher, student, head, ds, tiny_config(epochs=3))
        path = tmp_path / "train_log.csv"
        log.write_csv(path)
        text = path.read_text().splitlines()
        assert text[0] == "epoch,ce_loss,kd_loss,total_loss,train_acc,wall_ms"
        loaded = TrainLog.read_csv(path)
        assert loaded.key_rows() == log.key_rows()
