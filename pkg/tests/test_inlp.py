import numpy as np
import pytest

from fairbalance.data import Dataset, SyntheticConfig, generate_synthetic
from fairbalance.inlp import (
    ProjectionStack,
    apply_projection,
    fit_linear_probe,
    inlp_pipeline,
    load_stack,
    nullspace_projection,
    run_inlp,
    save_stack,
)
from fairbalance.train import TrainConfig


def group_axis_data(seed=7, n=4000, d=6, shift=4.0, noise=0.5):
    """Group signal confined to axis 0; everything else is noise."""
    rng = np.random.default_rng(seed)
    groups = rng.integers(0, 2, size=n)
    X = rng.normal(scale=noise, size=(n, d))
    X[:, 0] += (groups - 0.5) * shift
    return X, groups


class TestLinearProbe:
    def test_separable_groups_high_accuracy(self):
        X, groups = group_axis_data()
        probe = fit_linear_probe(X, groups, seed=0)
        assert probe.accuracy >= 0.99

    def test_shuffled_labels_stay_at_majority(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(2000, 6))
        groups = rng.integers(0, 2, size=2000)
        probe = fit_linear_probe(X, groups, regularization=1e-2, seed=0)
        majority = max(groups.mean(), 1 - groups.mean())
        assert probe.accuracy - majority <= 0.03

    def test_duplicated_matrix_identical_probe(self):
        X, groups = group_axis_data(n=500)
        a = fit_linear_probe(X, groups, seed=3)
        b = fit_linear_probe(np.vstack([X, X]), np.concatenate([groups, groups]), seed=3)
        assert np.allclose(a.weights, b.weights, atol=1e-10)
        assert np.allclose(a.bias, b.bias, atol=1e-10)

    def test_single_group_rejected(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        with pytest.raises(ValueError, match="two classes"):
            fit_linear_probe(X, np.zeros(10, dtype=int), seed=0)

    def test_multiclass_directions(self):
        rng = np.random.default_rng(1)
        y = rng.integers(0, 3, size=600)
        X = rng.normal(scale=0.3, size=(600, 5))
        X[np.arange(600), y] += 2.0
        probe = fit_linear_probe(X, y, seed=0)
        assert probe.weights.shape == (2, 5)
        assert probe.accuracy > 0.95


class TestNullspaceProjection:
    def test_axis_direction(self):
        P = nullspace_projection(np.array([1.0, 0.0]))
        assert np.allclose(P, [[0.0, 0.0], [0.0, 1.0]], atol=1e-15)

    def test_projector_identities(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            w = rng.normal(size=7)
            P = nullspace_projection(w)
            assert np.allclose(P @ w, 0.0, atol=1e-10)
            assert np.allclose(P @ P, P, atol=1e-10)
            assert np.allclose(P, P.T, atol=1e-12)

    def test_two_directions_in_three_dims(self):
        P = nullspace_projection(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]))
        rank = int(round(np.trace(P)))
        assert rank == 1

    def test_zero_direction_rejected(self):
        with pytest.raises(ValueError, match="zero direction"):
            nullspace_projection(np.zeros(4))


class TestProjectionStack:
    def test_rank_bookkeeping(self):
        stack = ProjectionStack(5)
        assert stack.rank == 5
        added = stack.add(np.array([1.0, 0, 0, 0, 0]))
        assert added == 1 and stack.rank == 4
        # a dependent direction is dropped
        added = stack.add(np.array([2.0, 0, 0, 0, 0]))
        assert added == 0 and stack.rank == 4

    def test_matrix_annihilates_directions(self):
        rng = np.random.default_rng(4)
        stack = ProjectionStack(6)
        vectors = rng.normal(size=(3, 6))
        stack.add(vectors)
        P = stack.matrix
        for v in vectors:
            assert np.allclose(P @ v, 0.0, atol=1e-10)
        assert np.allclose(P @ P, P, atol=1e-10)

    def test_apply_projection_idempotent(self):
        rng = np.random.default_rng(5)
        stack = ProjectionStack(6)
        stack.add(rng.normal(size=(2, 6)))
        X = rng.normal(size=(40, 6))
        once = apply_projection(stack, X)
        twice = apply_projection(stack, once)
        assert np.allclose(once, twice, atol=1e-10)

    def test_apply_empty_stack_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            apply_projection(ProjectionStack(3), np.zeros((2, 3)))

    def test_width_mismatch_rejected(self):
        stack = ProjectionStack(3)
        stack.add(np.array([1.0, 0.0, 0.0]))
        with pytest.raises(ValueError, match="width"):
            apply_projection(stack, np.zeros((2, 4)))

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        stack = ProjectionStack(5)
        stack.add(rng.normal(size=(2, 5)))
        path = tmp_path / "stack.bin"
        save_stack(stack, path)
        again = load_stack(path)
        assert again.dim == 5 and len(again.directions) == 2
        assert np.array_equal(np.vstack(stack.directions), np.vstack(again.directions))

    def test_load_rejects_truncation(self, tmp_path):
        stack = ProjectionStack(4)
        stack.add(np.array([0.0, 1.0, 0.0, 0.0]))
        path = tmp_path / "stack.bin"
        save_stack(stack, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="payload"):
            load_stack(path)


class TestRunInlp:
    def test_single_axis_signal_removed_in_one_iteration(self):
        X, groups = group_axis_data()
        majority = max(groups.mean(), 1 - groups.mean())
        result = run_inlp(X, groups, iterations=4, stop_margin=0.02, seed=0, regularization=1e-2)
        assert result.probe_accuracies[0] > 0.95
        assert result.probe_accuracies[1] <= majority + 0.02
        assert abs(result.stack.directions[0][0]) > 0.99

    def test_spread_signal_floors_within_k_plus_one(self):
        for k, strengths in ((2, (4.0, 2.5)), (3, (4.0, 2.5, 1.8))):
            rng = np.random.default_rng(200)
            n, d = 4000, 8
            groups = rng.integers(0, 2, size=n)
            X = rng.normal(scale=0.5, size=(n, d))
            for j, s in enumerate(strengths):
                X[:, j] += (groups - 0.5) * s
            majority = max(groups.mean(), 1 - groups.mean())
            result = run_inlp(X, groups, iterations=k + 2, stop_margin=0.02, seed=0,
                              regularization=1e-2)
            assert len(result.probe_accuracies) <= k + 2
            assert result.probe_accuracies[-1] <= majority + 0.02
            # removed directions stay inside the known signal subspace
            for u in result.stack.directions:
                assert np.linalg.norm(u[k:]) < 0.15

    def test_probe_accuracy_non_increasing(self):
        X, groups = group_axis_data(seed=9)
        result = run_inlp(X, groups, iterations=4, stop_margin=0.0, seed=1, regularization=1e-2)
        accs = result.probe_accuracies
        assert all(b <= a + 0.01 for a, b in zip(accs, accs[1:]))

    def test_rank_decreases_by_one_per_iteration(self):
        X, groups = group_axis_data(seed=8, n=1500)
        result = run_inlp(X, groups, iterations=3, stop_margin=0.0, seed=0, regularization=1e-2)
        assert result.stack.rank == X.shape[1] - len(result.stack.directions)
        # the probe that triggers the early stop is recorded but not removed
        expected = len(result.probe_accuracies) - (1 if result.stopped_early else 0)
        assert len(result.stack.directions) == expected

    def test_projection_does_not_raise_probe_accuracy(self):
        X, groups = group_axis_data(seed=10, n=2000)
        before = fit_linear_probe(X, groups, regularization=1e-2, seed=0).accuracy
        result = run_inlp(X, groups, iterations=2, stop_margin=0.0, seed=0, regularization=1e-2)
        projected = apply_projection(result.stack, X)
        after = fit_linear_probe(projected, groups, regularization=1e-2, seed=0).accuracy
        assert after <= before + 0.01

    def test_zero_iterations_rejected(self):
        X, groups = group_axis_data(n=100)
        with pytest.raises(ValueError, match="at least 1"):
            run_inlp(X, groups, iterations=0)

    def test_iterations_beyond_dimension_rejected(self):
        X, groups = group_axis_data(n=100, d=4)
        with pytest.raises(ValueError, match="dimension"):
            run_inlp(X, groups, iterations=5)


class TestPipeline:
    def make_parts(self):
        cfg = dict(d=8, skew=0.8, class_separation=1.5, group_shift=1.5, noise_std=1.0)
        train_data = generate_synthetic(SyntheticConfig(n=1500, seed=0, **cfg))
        dev = generate_synthetic(SyntheticConfig(n=400, seed=1, **{**cfg, "skew": 0.5}))
        test = generate_synthetic(SyntheticConfig(n=600, seed=2, **{**cfg, "skew": 0.5}))
        return train_data, dev, test

    @pytest.mark.parametrize("base_kind", ["standard", "rw", "ds"])
    def test_pipeline_emits_predictions_for_all_instances(self, base_kind):
        train_data, dev, test = self.make_parts()
        config = TrainConfig(epochs=8, batch_size=256, learning_rate=3e-3, seed=5,
                             dev_selection="final_epoch")
        result = inlp_pipeline(base_kind, train_data, dev, test, config,
                               hidden_dims=(12, 12), iterations=8)
        assert len(result.dev_predictions) == dev.n
        assert len(result.test_predictions) == test.n
        assert set(np.unique(result.test_predictions)) <= {0, 1}
        assert len(result.inlp.stack.directions) >= 1

    def test_pipeline_reduces_group_readability(self):
        train_data, dev, test = self.make_parts()
        config = TrainConfig(epochs=8, batch_size=256, learning_rate=3e-3, seed=5,
                             dev_selection="final_epoch")
        result = inlp_pipeline("standard", train_data, dev, test, config,
                               hidden_dims=(12, 12), iterations=10)
        reps = result.base_model.hidden(train_data.features)
        before = fit_linear_probe(reps, train_data.groups, regularization=1e-2, seed=0).accuracy
        projected = reps @ result.inlp.stack.matrix
        after = fit_linear_probe(projected, train_data.groups, regularization=1e-2, seed=0).accuracy
        assert after < before

    def test_unknown_base_kind_rejected(self):
        train_data, dev, test = self.make_parts()
        with pytest.raises(ValueError, match="base_kind"):
            inlp_pipeline("adversarial", train_data, dev, test, TrainConfig(epochs=1))

    def test_main_task_survives_projection(self):
        # class signal orthogonal to the group axis: removing the group
        # subspace must not hurt main-task linear accuracy much
        rng = np.random.default_rng(3)
        n, d = 3000, 6
        groups = rng.integers(0, 2, size=n)
        labels = rng.integers(0, 2, size=n)
        X = rng.normal(scale=0.6, size=(n, d))
        X[:, 0] += (groups - 0.5) * 3.0
        X[:, 1] += (labels - 0.5) * 3.0
        result = run_inlp(X, groups, iterations=3, stop_margin=0.02, seed=0, regularization=1e-2)
        before = fit_linear_probe(X, labels, seed=0).accuracy
        after = fit_linear_probe(apply_projection(result.stack, X), labels, seed=0).accuracy
        assert after >= before - 0.03
