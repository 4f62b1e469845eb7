import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from c2g.data import make_blobs
from c2g.distill import DistillConfig
from c2g.graph import EuclideanStubHead, normalize_dense, sparse_rows_dense, symmetrize_dense
from c2g.inference import (
    InferenceReport,
    TrainReference,
    compare_mechanisms,
    evaluate,
    infer_batch,
    infer_one_by_one,
    make_train_reference,
)
from c2g.nets import make_student


def memorizing_student(d, classes):
    """Student whose logits argmax reproduces the blob class of e_k features."""
    student = make_student(np.random.default_rng(0), d, d, classes)
    student.params["w1"].data = np.eye(d)
    student.params["w2"].data = np.eye(d)[:, :classes]
    return student


class TestInferOneByOne:
    def test_coincident_test_point_attaches_to_its_twin(self):
        rng = np.random.default_rng(1)
        train = rng.normal(size=(8, 3))
        head = EuclideanStubHead(train)
        student = make_student(rng, 3, 4, 2)
        k = 5
        # rebuild the cascade's directed rows to inspect the test node's edges
        test_to_train = np.sqrt(((train - train[k]) ** 2).sum(axis=1))
        d = np.full((9, 9), np.inf)
        d[0, 1:] = test_to_train
        d[1:, 1:] = np.sqrt(((train[:, None] - train[None]) ** 2).sum(-1))
        np.fill_diagonal(d, np.inf)
        directed, _ = sparse_rows_dense(d, s=3)
        assert directed[0].argmax() == k + 1
        # and the public op runs end to end on the same inputs
        logits = infer_one_by_one(student, head, train[k], train, np.arange(8), s=3)
        assert logits.shape == (2,)

    def test_three_node_cascade_by_hand(self):
        # test point 0.5, train points 0 and 2 (1-d features), s=1
        train = np.array([[0.0], [2.0]])
        head = EuclideanStubHead(train)
        student = make_student(np.random.default_rng(2), 1, 2, 2)
        w1 = student.params["w1"].data
        w2 = student.params["w2"].data

        # directed rows: test->r0, r0->r1, r1->r0
        a = symmetrize_dense(np.array([[0, 1, 0], [0, 0, 1], [0, 1, 0]], dtype=float))
        hat = a + np.eye(3)
        deg = hat.sum(axis=1)
        p = hat / np.sqrt(np.outer(deg, deg))
        x = np.array([[0.5], [0.0], [2.0]])
        expected = (p @ np.maximum(p @ x @ w1, 0.0) @ w2)[0]

        logits = infer_one_by_one(student, head, np.array([0.5]), train, np.array([0, 1]), s=1)
        assert_allclose(logits, expected, atol=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        train = rng.normal(size=(6, 4))
        head = EuclideanStubHead(train)
        student = make_student(rng, 4, 5, 3)
        x = rng.normal(size=4)
        a = infer_one_by_one(student, head, x, train, np.arange(6), s=2)
        b = infer_one_by_one(student, head, x, train, np.arange(6), s=2)
        assert_array_equal(a, b)

    def test_small_train_batch_rejected(self):
        train = np.zeros((3, 2))
        head = EuclideanStubHead(train)
        student = make_student(np.random.default_rng(0), 2, 3, 2)
        with pytest.raises(ValueError, match="s\\+1"):
            infer_one_by_one(student, head, np.zeros(2), train, np.arange(3), s=3)

    def test_cascade_preserves_train_train_affinities(self):
        # the extra test node must not disturb the train-only symmetrized graph
        rng = np.random.default_rng(4)
        train = rng.normal(size=(7, 3))
        head = EuclideanStubHead(train)
        test_point = rng.normal(size=3)

        test_to_train = head.forward(test_point[None, :]).data[0]
        train_to_train = head.forward(train).data
        cascade = np.full((8, 8), np.inf)
        cascade[0, 1:] = test_to_train
        cascade[1:, 1:] = train_to_train
        np.fill_diagonal(cascade, np.inf)
        directed_cascade, _ = sparse_rows_dense(cascade, s=2)
        a_cascade = symmetrize_dense(directed_cascade)

        directed_train, _ = sparse_rows_dense(train_to_train, s=2, excluded=np.eye(7, dtype=bool))
        a_train = symmetrize_dense(directed_train)
        assert_allclose(a_cascade[1:, 1:], a_train, atol=1e-12)


class TestInferBatch:
    def test_surrogates_recover_identical_training_samples(self):
        rng = np.random.default_rng(5)
        train = rng.normal(size=(10, 3))
        head = EuclideanStubHead(train)
        student = make_student(rng, 3, 4, 2)
        picks = np.array([7, 2, 9, 4])
        logits = infer_batch(student, head, train[picks], train, np.arange(10), s=2)
        assert logits.shape == (4, 2)
        # selection is exposed through the approximated distances; check directly
        from c2g.inference import _surrogates

        conditional, _ = sparse_rows_dense(head.forward(train[picks]).data, s=2)
        assert_array_equal(_surrogates(conditional, np.arange(10)), picks)

    def test_surrogate_selection_idempotent(self):
        rng = np.random.default_rng(6)
        train = rng.normal(size=(9, 4))
        head = EuclideanStubHead(train)
        from c2g.inference import _surrogates

        members = np.array([1, 3, 8])
        conditional, _ = sparse_rows_dense(head.forward(train[members]).data[:, members], s=1)
        again = _surrogates(conditional, members)
        assert_array_equal(members[again], members)

    def test_two_node_batch_by_hand(self):
        train = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
        head = EuclideanStubHead(train)
        student = make_student(np.random.default_rng(7), 2, 3, 2)
        w1 = student.params["w1"].data
        w2 = student.params["w2"].data

        tests = np.array([[0.1, 0.0], [2.9, 0.0]])  # nearest: train 0 and train 1
        # approximated 2-node graph is fully mixed after self-loops
        p = np.array([[0.5, 0.5], [0.5, 0.5]])
        expected = p @ np.maximum(p @ tests @ w1, 0.0) @ w2

        logits = infer_batch(student, head, tests, train, np.arange(3), s=1)
        assert_allclose(logits, expected, atol=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        train = rng.normal(size=(8, 3))
        head = EuclideanStubHead(train)
        student = make_student(rng, 3, 4, 2)
        tests = rng.normal(size=(5, 3))
        a = infer_batch(student, head, tests, train, np.arange(8), s=2)
        b = infer_batch(student, head, tests, train, np.arange(8), s=2)
        assert_array_equal(a, b)

    def test_sparsity_bounds(self):
        train = np.zeros((6, 2))
        head = EuclideanStubHead(train)
        student = make_student(np.random.default_rng(0), 2, 3, 2)
        with pytest.raises(ValueError, match="test batch"):
            infer_batch(student, head, np.zeros((3, 2)), train, np.arange(6), s=3)
        with pytest.raises(ValueError, match="training batch"):
            infer_batch(student, head, np.zeros((8, 2)), train, np.arange(6), s=6)


class TestEvaluate:
    def setup_memorized(self, n=60, spread=0.0):
        ds = make_blobs(n, 3, 6, spread=spread, seed=9)
        head = EuclideanStubHead(ds.features)
        student = memorizing_student(6, 3)
        reference = TrainReference(features=ds.features, ids=np.arange(n))
        return ds, head, student, reference

    @pytest.mark.parametrize("mechanism", ["one", "batch"])
    def test_memorization_sanity(self, mechanism):
        ds, head, student, reference = self.setup_memorized()
        cfg = DistillConfig(s=3, batch_size=10, mechanism=mechanism, epochs=1)
        test_set = ds.subset(np.arange(0, 60, 3))
        report = evaluate(student, head, test_set, reference, cfg)
        assert report.accuracy == 1.0
        assert report.n_test == test_set.n
        assert report.mechanism == mechanism

    def test_predictions_ignore_labels(self):
        ds, head, student, reference = self.setup_memorized()
        cfg = DistillConfig(s=3, batch_size=10, mechanism="batch", epochs=1)
        test_set = ds.subset(np.arange(20))
        honest = evaluate(student, head, test_set, reference, cfg)
        poisoned = test_set.subset(np.arange(20))
        poisoned.labels[:] = 0
        shuffled = evaluate(student, head, poisoned, reference, cfg)
        assert_array_equal(honest.predictions, shuffled.predictions)

    def test_empty_test_set_rejected(self):
        ds, head, student, reference = self.setup_memorized()
        cfg = DistillConfig(s=3, batch_size=10, epochs=1)
        with pytest.raises(ValueError, match="empty"):
            evaluate(student, head, ds.subset([]), reference, cfg)

    def test_wall_time_grows_with_test_size(self):
        ds, head, student, reference = self.setup_memorized(n=240, spread=0.3)
        cfg = DistillConfig(s=3, batch_size=20, mechanism="one", epochs=1)
        small = evaluate(student, head, ds.subset(np.arange(10)), reference, cfg)
        large = evaluate(student, head, ds.subset(np.arange(200)), reference, cfg)
        assert large.wall_ms > small.wall_ms

    def test_single_sample_tail_batch(self):
        ds, head, student, reference = self.setup_memorized()
        cfg = DistillConfig(s=3, batch_size=7, mechanism="batch", epochs=1)
        test_set = ds.subset(np.arange(8))  # 7 + 1 tail
        report = evaluate(student, head, test_set, reference, cfg)
        assert report.n_test == 8

    def test_compare_mechanisms_sets_agreement(self):
        ds, head, student, reference = self.setup_memorized(n=90, spread=0.2)
        cfg = DistillConfig(s=3, batch_size=15, epochs=1)
        test_set = ds.subset(np.arange(30))
        one, batch = compare_mechanisms(student, head, test_set, reference, cfg)
        assert one.mechanism == "one" and batch.mechanism == "batch"
        assert one.agreement == batch.agreement
        assert 0.0 <= one.agreement <= 1.0

    def test_report_csv(self, tmp_path):
        ds, head, student, reference = self.setup_memorized()
        cfg = DistillConfig(s=3, batch_size=10, mechanism="batch", epochs=1)
        test_set = ds.subset(np.arange(9))
        report = evaluate(student, head, test_set, reference, cfg)
        report.write_csv(tmp_path / "eval.csv")
        lines = (tmp_path / "eval.csv").read_text().splitlines()
        assert lines[0] == "mechanism,n_test,accuracy,wall_ms"
        assert lines[1].startswith("batch,9,1.0,")
        report.write_predictions_csv(tmp_path / "preds.csv", test_set.labels)
        lines = (tmp_path / "preds.csv").read_text().splitlines()
        assert lines[0] == "test_id,pred,label"
        assert len(lines) == 10


class TestTrainReference:
    def test_deterministic_and_bounded(self):
        ds = make_blobs(50, 3, 4, 0.5, seed=0)
        cfg = DistillConfig(batch_size=20, seed=5, epochs=1)
        a = make_train_reference(ds, cfg)
        b = make_train_reference(ds, cfg)
        assert_array_equal(a.ids, b.ids)
        assert len(a.ids) == 20
        assert len(set(a.ids.tolist())) == 20

    def test_smaller_dataset_uses_everything(self):
        ds = make_blobs(8, 2, 4, 0.5, seed=0)
        cfg = DistillConfig(batch_size=20, seed=5, epochs=1)
        ref = make_train_reference(ds, cfg)
        assert len(ref.ids) == 8
