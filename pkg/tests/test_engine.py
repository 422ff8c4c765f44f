import numpy as np
import pytest

from vflsim.dataplane import generate_synthetic, partition_features
from vflsim.engine import (
    AFSAGA,
    AFSGD,
    AFSVRG,
    Cluster,
    RunConfig,
    inject_straggler,
    replay_log,
    run_async,
    run_sync,
    worker_rngs,
)
from vflsim.losses import LossSpec, residual_scalar, residual_vector


# ------------------------------------------------------------------------
# Sequential single-process references. These re-state each optimizer as a
# straight loop so a q=1 run of the concurrent engine can be compared
# against them bit for bit.
# ------------------------------------------------------------------------


def reference_sgd(ds, spec, gamma, updates, seed):
    rng = worker_rngs(seed, 1)[0]
    X = ds.features.copy()
    y = ds.labels
    w = np.zeros(ds.n_features)
    b = 0.0
    ridge = spec.kind == "ridge"
    for _ in range(updates):
        i = int(rng.integers(ds.n_samples))
        score = float(np.dot(w, X[i]))
        r = residual_scalar(spec, float(y[i]), score, b if ridge else 0.0)
        grad = r * X[i] + spec.lam * w
        w = w - gamma * grad
        if ridge and spec.has_bias:
            b = b - gamma * (r + spec.lam * b)
    return w, b


def reference_svrg(ds, spec, gamma, updates, inner, seed):
    rng = worker_rngs(seed, 1)[0]
    X = ds.features.copy()
    y = ds.labels
    n = ds.n_samples
    w = np.zeros(ds.n_features)
    done = 0
    while done < updates:
        w_s = w.copy()
        scores = np.empty(n)
        for i in range(n):
            scores[i] = float(np.dot(w_s, X[i]))
        r_s = residual_vector(spec, y, scores, 0.0)
        full = (X.T @ r_s) / n + spec.lam * w_s
        budget = min(inner, updates - done)
        for _ in range(budget):
            i = int(rng.integers(n))
            score = float(np.dot(w, X[i]))
            r = residual_scalar(spec, float(y[i]), score, 0.0)
            grad = r * X[i] + spec.lam * w
            grad_s = r_s[i] * X[i] + spec.lam * w_s
            v = grad - grad_s + full
            w = w - gamma * v
        done += budget
    return w


def reference_saga(ds, spec, gamma, updates, seed):
    rng = worker_rngs(seed, 1)[0]
    X = ds.features.copy()
    y = ds.labels
    n = ds.n_samples
    w = np.zeros(ds.n_features)
    scores = np.empty(n)
    for i in range(n):
        scores[i] = float(np.dot(w, X[i]))
    r0 = residual_vector(spec, y, scores, 0.0)
    entries = r0[:, None] * X + spec.lam * w
    mean = entries.mean(axis=0)
    since = 0
    for _ in range(updates):
        i = int(rng.integers(n))
        score = float(np.dot(w, X[i]))
        r = residual_scalar(spec, float(y[i]), score, 0.0)
        grad = r * X[i] + spec.lam * w
        v = grad - entries[i] + mean
        mean = mean + (grad - entries[i]) / n
        entries[i] = grad
        since += 1
        if since >= n:
            mean = entries.mean(axis=0)
            since = 0
        w = w - gamma * v
    return w


@pytest.fixture(scope="module")
def logi():
    ds = generate_synthetic(30, 6, seed=40)
    return ds, LossSpec("logistic", 1e-3)


class TestSingleWorkerEquivalence:
    def test_sgd_bitwise(self, logi):
        ds, spec = logi
        part = partition_features(6, 1)
        cfg = RunConfig(algorithm=AFSGD, gamma=0.1, total_updates=250, loss=spec, seed=5)
        model, _, _ = run_async(cfg, ds, part)
        w_ref, _ = reference_sgd(ds, spec, 0.1, 250, 5)
        assert np.array_equal(model.to_full(part), w_ref)

    def test_svrg_bitwise(self, logi):
        ds, spec = logi
        part = partition_features(6, 1)
        cfg = RunConfig(
            algorithm=AFSVRG, gamma=0.1, total_updates=170, loss=spec,
            seed=6, snapshot_interval=50,
        )
        model, _, _ = run_async(cfg, ds, part)
        w_ref = reference_svrg(ds, spec, 0.1, 170, 50, 6)
        assert np.array_equal(model.to_full(part), w_ref)

    def test_saga_bitwise(self, logi):
        ds, spec = logi
        part = partition_features(6, 1)
        cfg = RunConfig(algorithm=AFSAGA, gamma=0.05, total_updates=200, loss=spec, seed=7)
        model, _, _ = run_async(cfg, ds, part)
        w_ref = reference_saga(ds, spec, 0.05, 200, 7)
        assert np.array_equal(model.to_full(part), w_ref)

    def test_sgd_ridge_with_bias_bitwise(self):
        ds = generate_synthetic(25, 5, "regression", seed=41)
        spec = LossSpec("ridge", 1e-3, has_bias=True)
        part = partition_features(5, 1)
        cfg = RunConfig(algorithm=AFSGD, gamma=0.02, total_updates=150, loss=spec, seed=8)
        model, _, _ = run_async(cfg, ds, part)
        w_ref, b_ref = reference_sgd(ds, spec, 0.02, 150, 8)
        assert np.array_equal(model.to_full(part), w_ref)
        assert model.bias == b_ref

    def test_sync_equals_async_when_alone(self, logi):
        """With one worker there is nothing to be asynchronous about."""
        ds, spec = logi
        part = partition_features(6, 1)
        cfg = RunConfig(algorithm=AFSGD, gamma=0.1, total_updates=120, loss=spec, seed=9)
        async_model, _, _ = run_async(cfg, ds, part)
        sync_model, _, _ = run_sync(cfg, ds, part)
        assert np.array_equal(async_model.to_full(part), sync_model.to_full(part))


class TestPullProducts:
    def _cluster(self, mask_mode="plain"):
        ds = generate_synthetic(20, 8, seed=42)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.1, total_updates=10,
            loss=LossSpec("logistic", 1e-4), seed=11, mask_mode=mask_mode,
        )
        return ds, part, Cluster(cfg, ds, part)

    def test_single_worker_score_is_local_product(self):
        ds = generate_synthetic(10, 4, seed=43)
        part = partition_features(4, 1)
        cfg = RunConfig(total_updates=5, loss=LossSpec("logistic", 1e-4))
        cluster = Cluster(cfg, ds, part)
        cluster.shards[0].w = np.array([1.0, -2.0, 0.5, 3.0])
        score, versions = cluster.pull_products(1, 3)
        assert score == float(np.dot(cluster.shards[0].w, ds.features[3]))
        assert versions == (0,)
        assert cluster.log.events[0].staleness == 0

    def test_frozen_workers_give_consistent_read(self):
        ds, part, cluster = self._cluster()
        rng = np.random.default_rng(1)
        w = rng.normal(size=8)
        for s in cluster.shards:
            s.w = w[s.cols].copy()
        for i in (0, 7, 13):
            score, _ = cluster.pull_products(1, i)
            direct = float(np.dot(w, ds.features[i]))
            np.testing.assert_allclose(score, direct, rtol=1e-12)

    def test_masked_agrees_with_plain_when_frozen(self):
        ds, part, plain = self._cluster("plain")
        _, _, masked = self._cluster("masked")
        rng = np.random.default_rng(2)
        w = rng.normal(size=8)
        for c in (plain, masked):
            for s in c.shards:
                s.w = w[s.cols].copy()
        for i in range(10):
            sp, _ = plain.pull_products(1, i)
            sm, _ = masked.pull_products(1, i)
            assert abs(sm - sp) / max(1.0, abs(sp)) < 1e-9

    def test_versions_track_commits(self):
        ds = generate_synthetic(20, 8, seed=44)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=40,
            loss=LossSpec("logistic", 1e-4), seed=12,
        )
        _, log, metrics = run_async(cfg, ds, part)
        cluster = Cluster(cfg, ds, part)
        cluster.shards[0].version = 5
        _, versions = cluster.pull_products(2, 0)
        assert versions[0] == 5 and versions[1:] == (0, 0, 0)


class TestMessageAccounting:
    @pytest.mark.parametrize("mask_mode,per_pull", [("plain", 3), ("masked", 6)])
    def test_per_event_counts(self, mask_mode, per_pull):
        ds = generate_synthetic(30, 8, seed=45)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=200,
            loss=LossSpec("logistic", 1e-4), seed=13, mask_mode=mask_mode,
        )
        _, log, metrics = run_async(cfg, ds, part)
        assert all(e.messages == per_pull for e in log)
        assert metrics.merge_messages == 200 * per_pull

    def test_saga_setup_pass_counted_separately(self):
        ds = generate_synthetic(30, 8, seed=46)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSAGA, gamma=0.01, total_updates=50,
            loss=LossSpec("logistic", 1e-4), seed=14,
        )
        _, log, metrics = run_async(cfg, ds, part)
        assert metrics.setup_messages == 30 * 3  # one aggregation per sample
        assert metrics.merge_messages == 50 * 3

    def test_svrg_epoch_passes_counted(self):
        ds = generate_synthetic(20, 8, seed=47)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSVRG, gamma=0.05, total_updates=300, loss=LossSpec("logistic", 1e-4),
            seed=15, snapshot_interval=100,
        )
        _, log, metrics = run_async(cfg, ds, part)
        # one pass at start plus one per inner-loop boundary reached
        assert metrics.setup_messages == 3 * 20 * 3
        assert metrics.merge_messages == 300 * 3


class TestReplay:
    @pytest.mark.parametrize("algorithm", [AFSGD, AFSVRG, AFSAGA])
    def test_async_replay_reproduces_final_model(self, algorithm):
        ds = generate_synthetic(30, 9, seed=48)
        part = partition_features(9, 3)
        cfg = RunConfig(
            algorithm=algorithm, gamma=0.05, total_updates=240,
            loss=LossSpec("logistic", 1e-4), seed=16, snapshot_interval=80,
        )
        model, log, _ = run_async(cfg, ds, part)
        w, bias = replay_log(log, part)
        assert np.array_equal(w, model.to_full(part))
        assert bias == model.bias

    def test_sync_replay_with_bias(self):
        ds = generate_synthetic(24, 6, "regression", seed=49)
        part = partition_features(6, 3, active_worker=2)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.02, total_updates=90,
            loss=LossSpec("ridge", 1e-3, has_bias=True), seed=17,
        )
        model, log, _ = run_sync(cfg, ds, part)
        w, bias = replay_log(log, part)
        assert np.array_equal(w, model.to_full(part))
        assert bias == model.bias

    def test_replay_needs_recorded_updates(self):
        ds = generate_synthetic(10, 4, seed=50)
        part = partition_features(4, 2)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=20,
            loss=LossSpec("logistic", 1e-4), seed=18, record_updates=False,
        )
        _, log, _ = run_async(cfg, ds, part)
        with pytest.raises(ValueError):
            replay_log(log, part)


class TestScheduling:
    def test_counter_is_contiguous_and_unique(self):
        ds = generate_synthetic(25, 8, seed=51)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=300,
            loss=LossSpec("logistic", 1e-4), seed=19,
            stragglers={2: 2.5},
        )
        _, log, metrics = run_async(cfg, ds, part)
        assert [e.t for e in log] == list(range(300))
        assert sum(metrics.per_worker_updates.values()) == 300

    def test_straggler_update_share(self):
        """A worker 3x slower should land about a third of the updates of a
        fast worker over a long run."""
        ds = generate_synthetic(30, 8, seed=52)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.01, total_updates=3000,
            loss=LossSpec("logistic", 1e-4), seed=20, stragglers={4: 3.0},
        )
        _, _, metrics = run_async(cfg, ds, part)
        fast = metrics.per_worker_updates[1]
        slow = metrics.per_worker_updates[4]
        assert 0.25 < slow / fast < 0.45

    def test_observed_staleness_without_cap(self):
        ds = generate_synthetic(30, 8, seed=53)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.01, total_updates=500,
            loss=LossSpec("logistic", 1e-4), seed=21, stragglers={4: 4.0},
        )
        _, log, metrics = run_async(cfg, ds, part)
        assert max(e.staleness for e in log) >= 2
        assert metrics.retries == 0

    def test_staleness_cap_enforced_with_retries(self):
        ds = generate_synthetic(30, 8, seed=53)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.01, total_updates=500,
            loss=LossSpec("logistic", 1e-4), seed=21,
            stragglers={4: 4.0}, staleness_cap=1,
        )
        _, log, metrics = run_async(cfg, ds, part)
        assert len(log) == 500
        assert max(e.staleness for e in log) <= 1
        assert metrics.retries > 0

    def test_sample_draws_are_uniform(self):
        """Chi-square of drawn indices; 43.82 is the 0.999 quantile at 19
        degrees of freedom."""
        ds = generate_synthetic(20, 8, seed=54)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.005, total_updates=4000,
            loss=LossSpec("logistic", 1e-4), seed=22, stragglers={3: 2.0},
        )
        _, log, _ = run_async(cfg, ds, part)
        counts = np.bincount([e.sample for e in log], minlength=20)
        expected = 4000 / 20
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 43.82

    def test_deterministic_event_log(self):
        ds = generate_synthetic(20, 8, seed=55)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=200,
            loss=LossSpec("logistic", 1e-4), seed=23, stragglers={2: 1.7},
        )
        _, log_a, _ = run_async(cfg, ds, part)
        _, log_b, _ = run_async(cfg, ds, part)
        assert log_a.to_csv() == log_b.to_csv()


class TestSyncMode:
    def test_rounds_share_one_sample(self):
        ds = generate_synthetic(20, 8, seed=56)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=100,
            loss=LossSpec("logistic", 1e-4), seed=24,
        )
        _, log, _ = run_sync(cfg, ds, part)
        events = list(log)
        for r in range(25):
            chunk = events[4 * r : 4 * r + 4]
            assert len({e.sample for e in chunk}) == 1
            assert [e.worker for e in chunk] == [1, 2, 3, 4]

    def test_straggler_idle_fraction(self):
        """One worker at 3x leaves the other three idle two thirds of every
        round."""
        ds = generate_synthetic(20, 8, seed=57)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=400,
            loss=LossSpec("logistic", 1e-4), seed=25, stragglers={4: 3.0},
        )
        _, _, metrics = run_sync(cfg, ds, part)
        frac = metrics.idle_ms[1] / metrics.duration_ms
        np.testing.assert_allclose(frac, 2.0 / 3.0, atol=1e-9)
        assert metrics.idle_ms[4] == 0.0

    def test_deterministic(self):
        ds = generate_synthetic(20, 8, seed=58)
        part = partition_features(8, 4)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=120,
            loss=LossSpec("logistic", 1e-4), seed=26,
        )
        _, log_a, _ = run_sync(cfg, ds, part)
        _, log_b, _ = run_sync(cfg, ds, part)
        assert log_a.to_csv() == log_b.to_csv()


class TestWallClock:
    def test_async_smoke(self):
        ds = generate_synthetic(20, 6, seed=59)
        part = partition_features(6, 2)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=60,
            loss=LossSpec("logistic", 1e-4), seed=27, clock="wall",
            base_cost_ms=0.2,
        )
        model, log, metrics = run_async(cfg, ds, part)
        assert [e.t for e in log] == list(range(60))
        assert sum(metrics.per_worker_updates.values()) == 60
        w, bias = replay_log(log, part)
        assert np.array_equal(w, model.to_full(part))

    def test_sync_smoke(self):
        ds = generate_synthetic(20, 6, seed=60)
        part = partition_features(6, 2)
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.05, total_updates=40,
            loss=LossSpec("logistic", 1e-4), seed=28, clock="wall",
            base_cost_ms=0.2,
        )
        _, log, _ = run_sync(cfg, ds, part)
        assert [e.t for e in log] == list(range(40))


class TestConfigValidation:
    def _base(self):
        ds = generate_synthetic(10, 4, seed=61)
        return ds, partition_features(4, 2)

    def test_bad_algorithm(self):
        ds, part = self._base()
        with pytest.raises(ValueError):
            Cluster(RunConfig(algorithm="sgd"), ds, part)

    def test_bad_gamma(self):
        ds, part = self._base()
        with pytest.raises(ValueError):
            Cluster(RunConfig(gamma=0.0), ds, part)

    def test_masked_needs_two_workers(self):
        ds = generate_synthetic(10, 4, seed=62)
        part = partition_features(4, 1)
        with pytest.raises(ValueError):
            Cluster(RunConfig(mask_mode="masked"), ds, part)

    def test_logistic_needs_classification_labels(self):
        ds = generate_synthetic(10, 4, "regression", seed=63)
        part = partition_features(4, 2)
        with pytest.raises(ValueError):
            Cluster(RunConfig(loss=LossSpec("logistic", 1e-4)), ds, part)

    def test_inject_straggler(self):
        cfg = RunConfig()
        out = inject_straggler(cfg, 2, 1.4)
        assert out.stragglers == {2: 1.4}
        assert cfg.stragglers == {}
        out = inject_straggler(cfg, 1, 1.0)  # a no-op multiplier is allowed
        assert out.stragglers == {1: 1.0}
        with pytest.raises(ValueError):
            inject_straggler(cfg, 2, 0.5)
        with pytest.raises(ValueError):
            inject_straggler(cfg, 2, 12.0)

    def test_event_csv_header(self):
        ds, part = self._base()
        cfg = RunConfig(
            algorithm=AFSGD, gamma=0.1, total_updates=10,
            loss=LossSpec("logistic", 1e-4), seed=29,
        )
        _, log, _ = run_async(cfg, ds, part)
        header = log.to_csv().splitlines()[0]
        assert header == "t,worker,sample,sim_time_ms,max_staleness,messages"
