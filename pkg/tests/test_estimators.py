import numpy as np
import pytest

from vflsim.dataplane import generate_synthetic, partition_features
from vflsim.estimators import (
    SagaTable,
    apply_update,
    saga_estimate,
    sgd_estimate,
    svrg_estimate,
)
from vflsim.losses import (
    LossSpec,
    ModelView,
    full_block_gradient,
    sample_block_gradient,
)


def all_sample_gradients(spec, model, ds, part, worker):
    w = model.to_full(part)
    out = []
    for i in range(ds.n_samples):
        score = float(np.dot(w, ds.features[i]))
        out.append(sample_block_gradient(spec, model, ds, part, i, worker, score))
    return np.array(out)


@pytest.fixture(scope="module")
def problem():
    ds = generate_synthetic(40, 6, seed=21)
    part = partition_features(6, 2)
    spec = LossSpec("logistic", 0.05)
    rng = np.random.default_rng(3)
    model = ModelView.from_full(rng.normal(size=6), part)
    snapshot = ModelView.from_full(rng.normal(size=6), part)
    return ds, part, spec, model, snapshot


class TestSgd:
    def test_identity(self):
        g = np.array([1.0, -2.0])
        np.testing.assert_array_equal(sgd_estimate(g), g)
        np.testing.assert_array_equal(sgd_estimate(np.zeros(3)), np.zeros(3))

    def test_unbiased(self, problem):
        ds, part, spec, model, _ = problem
        for worker in (1, 2):
            grads = all_sample_gradients(spec, model, ds, part, worker)
            full = full_block_gradient(spec, model, ds, part, worker)
            np.testing.assert_allclose(grads.mean(axis=0), full, atol=1e-10)


class TestSvrg:
    def test_cancellation(self):
        g = np.array([0.3, -0.1])
        full = np.array([5.0, 6.0])
        np.testing.assert_array_equal(svrg_estimate(g, g, full), full)
        np.testing.assert_array_equal(svrg_estimate(g, g, np.zeros(2)), np.zeros(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            svrg_estimate(np.zeros(2), np.zeros(2), np.zeros(3))

    def test_unbiased(self, problem):
        ds, part, spec, model, snapshot = problem
        for worker in (1, 2):
            live = all_sample_gradients(spec, model, ds, part, worker)
            snap = all_sample_gradients(spec, snapshot, ds, part, worker)
            snap_full = full_block_gradient(spec, snapshot, ds, part, worker)
            estimates = np.array(
                [svrg_estimate(live[i], snap[i], snap_full) for i in range(ds.n_samples)]
            )
            full = full_block_gradient(spec, model, ds, part, worker)
            np.testing.assert_allclose(estimates.mean(axis=0), full, atol=1e-10)

    def test_variance_vanishes_at_snapshot(self, problem):
        """At the snapshot point the corrected estimator is exact while the
        plain one still carries sampling variance."""
        ds, part, spec, _, snapshot = problem
        live = all_sample_gradients(spec, snapshot, ds, part, 1)
        snap_full = full_block_gradient(spec, snapshot, ds, part, 1)
        corrected = np.array(
            [svrg_estimate(live[i], live[i], snap_full) for i in range(ds.n_samples)]
        )
        var_corrected = corrected.var(axis=0).sum()
        var_plain = live.var(axis=0).sum()
        assert var_corrected < var_plain
        assert var_corrected <= 1e-30


class TestSaga:
    def test_fresh_table_reduces_to_full_gradient(self, problem):
        ds, part, spec, model, _ = problem
        grads = all_sample_gradients(spec, model, ds, part, 1)
        table = SagaTable(grads)
        full = full_block_gradient(spec, model, ds, part, 1)
        for i in range(ds.n_samples):
            est = saga_estimate(grads[i], table, i)
            np.testing.assert_allclose(est, table.mean, atol=1e-12)
        np.testing.assert_allclose(table.mean, full, atol=1e-10)

    def test_zero_table_passes_gradient_through(self):
        table = SagaTable(np.zeros((4, 2)))
        g = np.array([0.7, -0.2])
        np.testing.assert_array_equal(saga_estimate(g, table, 2), g)

    def test_unbiased(self, problem):
        ds, part, spec, model, snapshot = problem
        stale = all_sample_gradients(spec, snapshot, ds, part, 2)
        table = SagaTable(stale)
        live = all_sample_gradients(spec, model, ds, part, 2)
        estimates = np.array(
            [saga_estimate(live[i], table, i) for i in range(ds.n_samples)]
        )
        full = full_block_gradient(spec, model, ds, part, 2)
        np.testing.assert_allclose(estimates.mean(axis=0), full, atol=1e-10)


class TestSagaTable:
    def test_replacing_entry_with_itself(self):
        table = SagaTable(np.array([[1.0], [3.0]]))
        before = table.mean.copy()
        table.update_entry(0, np.array([1.0]))
        np.testing.assert_allclose(table.mean, before, atol=1e-15)

    def test_hand_example(self):
        table = SagaTable(np.array([[0.0], [2.0]]))
        table.update_entry(0, np.array([4.0]))
        np.testing.assert_allclose(table.mean, [3.0], atol=1e-15)

    def test_thousand_updates_track_exact_mean(self):
        rng = np.random.default_rng(9)
        table = SagaTable(rng.normal(size=(30, 3)))
        for _ in range(1000):
            i = int(rng.integers(30))
            table.update_entry(i, rng.normal(size=3))
            np.testing.assert_allclose(
                table.mean, table.entries.mean(axis=0), atol=1e-10
            )

    def test_scalar_entries(self):
        table = SagaTable(np.array([1.0, 2.0, 3.0]))
        table.update_entry(1, np.float64(5.0))
        np.testing.assert_allclose(table.mean, 3.0, atol=1e-15)


class TestApplyUpdate:
    def test_hand_example(self):
        out = apply_update(np.array([1.0, 1.0]), np.array([2.0, 0.0]), 0.1)
        np.testing.assert_allclose(out, [0.8, 1.0], atol=1e-15)

    def test_zero_direction(self):
        w = np.array([0.4, -0.2])
        np.testing.assert_array_equal(apply_update(w, np.zeros(2), 0.5), w)

    def test_updates_on_disjoint_blocks_commute(self):
        rng = np.random.default_rng(17)
        part = partition_features(6, 2)
        w = rng.normal(size=6)
        v1, v2 = rng.normal(size=3), rng.normal(size=3)
        a = w.copy()
        a[part.group(1)] = apply_update(a[part.group(1)], v1, 0.3)
        a[part.group(2)] = apply_update(a[part.group(2)], v2, 0.3)
        b = w.copy()
        b[part.group(2)] = apply_update(b[part.group(2)], v2, 0.3)
        b[part.group(1)] = apply_update(b[part.group(1)], v1, 0.3)
        np.testing.assert_array_equal(a, b)

    def test_gamma_must_be_positive(self):
        with pytest.raises(ValueError):
            apply_update(np.zeros(2), np.zeros(2), 0.0)
