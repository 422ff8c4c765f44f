"""Simulated multi-worker runtime for feature-partitioned SGD-family training.

Each of q workers owns one block of the model and the matching feature
columns; one designated active worker also owns the labels (and the bias
for ridge). A worker's loop is: draw a sample, pull the full inner product
for it (every worker contributes its local product; the tree protocol sums
them), form its stochastic block gradient from that possibly-stale score,
and step its own block. Nothing ever locks the model. The global update
counter is assigned at the moment a product aggregation completes, which
makes the drawn sample index independent of the model state it will be
applied to.

Two clocks are provided:

* virtual -- a single-threaded discrete-event scheduler. A worker's
  iteration lasts base_cost_ms times its delay multiplier, split halfway
  between the pull and the commit. Event ties are broken commit-first,
  then by worker id. Runs are bit-reproducible.
* wall -- one OS thread per worker with real concurrent execution, for
  speedup measurements outside CI. No bit-level reproducibility.

Passive workers never receive a label: the active worker turns the
aggregated score into the per-sample residual scalar and hands that out,
which is all a block gradient needs.
"""

from __future__ import annotations

import heapq
import io
import threading
import time as _time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dataplane import Dataset, VerticalPartition
from .estimators import SagaTable, SvrgSnapshot
from .losses import RIDGE, LossSpec, ModelView, residual_scalar, residual_vector
from .treecomm import (
    Transcript,
    TreeTopology,
    build_balanced_tree,
    generate_significantly_different_pair,
    masked_tree_sum,
    tree_sum,
)

AFSGD = "afsgd"
AFSVRG = "afsvrg"
AFSAGA = "afsaga"
ALGORITHMS = (AFSGD, AFSVRG, AFSAGA)

ASYNC = "async"
SYNC = "sync"

PLAIN = "plain"
MASKED = "masked"

VIRTUAL = "virtual"
WALL = "wall"

_PHASE_COMMIT = 0
_PHASE_PULL = 1


@dataclass
class RunConfig:
    """Everything one training run needs beyond the data itself."""

    algorithm: str = AFSGD
    mode: str = ASYNC
    gamma: float = 0.1
    total_updates: int = 1000
    loss: LossSpec = field(default_factory=LossSpec)
    mask_mode: str = PLAIN
    mask_range: Optional[float] = None  # None: 1e3 * largest sample norm
    staleness_cap: Optional[int] = None  # None: observe only, never block
    stragglers: dict = field(default_factory=dict)  # worker id -> multiplier >= 1
    seed: int = 0
    snapshot_interval: int = 0  # afsvrg: updates per inner loop (0: 2*n_samples)
    clock: str = VIRTUAL
    base_cost_ms: float = 1.0
    eval_interval: int = 0  # model snapshots for curves (0: total/200)
    record_updates: bool = True  # keep per-event deltas so runs can be replayed

    def validate(self, q: int) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.mode not in (ASYNC, SYNC):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mask_mode not in (PLAIN, MASKED):
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        if self.clock not in (VIRTUAL, WALL):
            raise ValueError(f"unknown clock {self.clock!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.total_updates < 1:
            raise ValueError("total_updates must be at least 1")
        if self.mask_mode == MASKED and q < 2:
            raise ValueError("masked aggregation needs at least 2 workers")
        for wid, mult in self.stragglers.items():
            if not 1 <= wid <= q:
                raise ValueError(f"straggler id {wid} outside [1, {q}]")
            if not 1.0 <= mult <= 10.0:
                raise ValueError(f"straggler multiplier {mult} outside [1.0, 10.0]")
        if self.staleness_cap is not None and self.staleness_cap < 1:
            raise ValueError("staleness_cap must be at least 1")


def inject_straggler(config: RunConfig, worker: int, multiplier: float) -> RunConfig:
    """Copy of the config with one worker's compute delay scaled."""
    if not 1.0 <= multiplier <= 10.0:
        raise ValueError(f"straggler multiplier {multiplier} outside [1.0, 10.0]")
    stragglers = dict(config.stragglers)
    stragglers[worker] = multiplier
    return replace(config, stragglers=stragglers)


def worker_rngs(seed: int, q: int):
    """Per-worker generators; index 0 belongs to worker 1."""
    seqs = np.random.SeedSequence(seed).spawn(q + 2)
    return [np.random.default_rng(s) for s in seqs[:q]]


def _mask_rng(seed: int, q: int):
    """Mask generator, derived from the same seed but a separate stream."""
    seqs = np.random.SeedSequence(seed).spawn(q + 1)
    return np.random.default_rng(seqs[q])


@dataclass
class EventRecord:
    """One completed product aggregation, labeled with the global counter."""

    t: int
    worker: int
    sample: int
    sim_time_ms: float
    staleness: int
    messages: int
    pending_per_worker: int = 0
    block_delta: Optional[np.ndarray] = None
    bias_delta: float = 0.0


@dataclass
class EventLog:
    events: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def append(self, ev: EventRecord):
        self.events.append(ev)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,worker,sample,sim_time_ms,max_staleness,messages\n")
        for e in self.events:
            buf.write(
                f"{e.t},{e.worker},{e.sample},{e.sim_time_ms!r},{e.staleness},{e.messages}\n"
            )
        return buf.getvalue()


@dataclass
class ModelSnapshot:
    time_ms: float
    updates: int
    weights: np.ndarray
    bias: float = 0.0


@dataclass
class RunMetrics:
    algorithm: str
    mode: str
    total_updates: int = 0
    duration_ms: float = 0.0
    merge_messages: int = 0  # tree merges inside labeled pulls
    setup_messages: int = 0  # tree merges in table-init / snapshot passes
    retries: int = 0
    per_worker_updates: dict = field(default_factory=dict)
    idle_ms: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)


class _Shard:
    """One worker's private state. Only its owner ever writes to it."""

    __slots__ = (
        "wid",
        "cols",
        "X",
        "w",
        "labels",
        "bias",
        "multiplier",
        "rng",
        "version",
        "saga",
        "saga_bias",
        "inflight",
        "idle",
    )

    def __init__(self, wid, cols, X, labels, multiplier, rng):
        self.wid = wid
        self.cols = cols
        self.X = X
        self.w = np.zeros(X.shape[1])
        self.labels = labels
        self.bias = 0.0
        self.multiplier = multiplier
        self.rng = rng
        self.version = 0
        self.saga: Optional[SagaTable] = None
        self.saga_bias: Optional[SagaTable] = None
        self.inflight = None  # (t, i, score, residual, commit_time)
        self.idle = False


class Cluster:
    """q simulated workers over one vertically partitioned dataset."""

    def __init__(self, config: RunConfig, ds: Dataset, partition: VerticalPartition):
        config.validate(partition.q)
        spec = config.loss
        if spec.kind == "logistic" and ds.task != "classification":
            raise ValueError("the logistic loss needs +1/-1 classification labels")
        self.config = config
        self.ds = ds
        self.partition = partition
        self.spec = spec
        self.q = partition.q
        self.n = ds.n_samples

        rngs = worker_rngs(config.seed, self.q)
        self.mask_rng = _mask_rng(config.seed, self.q)
        self.shards = []
        for wid in range(1, self.q + 1):
            cols = partition.group(wid)
            X = np.ascontiguousarray(ds.features[:, cols])
            labels = ds.labels if wid == partition.active_worker else None
            mult = float(config.stragglers.get(wid, 1.0))
            self.shards.append(_Shard(wid, cols, X, labels, mult, rngs[wid - 1]))
        self.active = self.shards[partition.active_worker - 1]

        if config.mask_mode == MASKED:
            self.t1, self.t2 = generate_significantly_different_pair(self.q, config.seed)
            if config.mask_range is not None:
                self.mask_range = float(config.mask_range)
            else:
                row_norms = np.linalg.norm(ds.features, axis=1)
                self.mask_range = 1e3 * max(1.0, float(row_norms.max(initial=0.0)))
        else:
            self.t1 = build_balanced_tree(range(1, self.q + 1))
            self.t2 = None
            self.mask_range = 0.0

        self.now = 0.0
        self.assigned = 0  # next global counter
        self.committed = 0
        self.log = EventLog()
        self.metrics = RunMetrics(
            algorithm=config.algorithm,
            mode=config.mode,
            per_worker_updates={w: 0 for w in range(1, self.q + 1)},
            idle_ms={w: 0.0 for w in range(1, self.q + 1)},
        )
        self.snap: Optional[SvrgSnapshot] = None
        total = config.total_updates
        self.eval_interval = config.eval_interval or max(1, total // 200)
        if config.algorithm == AFSVRG:
            self.inner_len = config.snapshot_interval or 2 * self.n
        else:
            self.inner_len = total
        self._lock = threading.Lock()
        self._inflight_count = 0

    # ---------------------------------------------------------------- core

    def _has_bias(self) -> bool:
        return self.spec.kind == RIDGE and self.spec.has_bias

    def _residual(self, i: int, score: float) -> float:
        """Computed by the label holder; what passive workers receive."""
        y = float(self.active.labels[i])
        bias = self.active.bias if self.spec.kind == RIDGE else 0.0
        return residual_scalar(self.spec, y, score, bias)

    def _aggregate(self, i: int, requester: Optional[int] = None):
        """Sum the per-worker local products for sample i over the tree.

        Every worker contributes the product of its *current* block with its
        slice of the sample; blocks at different update stages is exactly
        the inconsistent read the algorithms tolerate. Returns the score
        and the merge-message count of this aggregation.
        """
        contributions = {s.wid: float(np.dot(s.w, s.X[i])) for s in self.shards}
        tr = Transcript()
        if self.config.mask_mode == MASKED:
            score = masked_tree_sum(
                self.t1, self.t2, contributions, self.mask_range, self.mask_rng, tr
            )
        else:
            score = tree_sum(self.t1, contributions, tr, deliver_to=requester)
        return score, tr.merge_count()

    def pull_products(self, requester: int, i: int):
        """Demand-based pull at the current cluster state.

        Aggregates, assigns the next global counter, appends the event, and
        returns the score plus every block's commit-version counter.
        """
        score, msgs = self._aggregate(i, requester)
        versions = tuple(s.version for s in self.shards)
        pending = [s.inflight[0] for s in self.shards if s.inflight is not None]
        t = self.assigned
        self.assigned += 1
        staleness = (t - min(pending)) if pending else 0
        ev = EventRecord(
            t=t,
            worker=requester,
            sample=i,
            sim_time_ms=self.now,
            staleness=staleness,
            messages=msgs,
            pending_per_worker=1 if pending else 0,
        )
        self.log.append(ev)
        self.metrics.merge_messages += msgs
        return score, versions

    def _block_gradient(self, shard: _Shard, i: int, r: float) -> np.ndarray:
        return r * shard.X[i] + self.spec.lam * shard.w

    def _estimator(self, shard: _Shard, i: int, grad: np.ndarray) -> np.ndarray:
        algo = self.config.algorithm
        if algo == AFSGD:
            return grad
        if algo == AFSVRG:
            snap = self.snap
            rs = snap.residuals[i]
            grad_s = rs * shard.X[i] + self.spec.lam * snap.model.blocks[shard.wid - 1]
            return grad - grad_s + snap.full_block_gradients[shard.wid - 1]
        v = grad - shard.saga.entries[i] + shard.saga.mean
        shard.saga.update_entry(i, grad)
        return v

    def _bias_estimator(self, shard: _Shard, i: int, r: float) -> float:
        gb = r + self.spec.lam * shard.bias
        algo = self.config.algorithm
        if algo == AFSGD:
            return gb
        if algo == AFSVRG:
            snap = self.snap
            gb_s = snap.residuals[i] + self.spec.lam * snap.model.bias
            return gb - gb_s + snap.full_bias_gradient
        vb = gb - shard.saga_bias.entries[i] + shard.saga_bias.mean
        shard.saga_bias.update_entry(i, np.float64(gb))
        return float(vb)

    def _commit(self, shard: _Shard, t: int, i: int, score: float, r: float):
        """Apply one update to the owner's block (and bias, if it holds one)."""
        grad = self._block_gradient(shard, i, r)
        v = self._estimator(shard, i, grad)
        delta = self.config.gamma * v
        shard.w = shard.w - delta
        shard.version += 1
        ev = self.log.events[t]
        if self.config.record_updates:
            ev.block_delta = delta
        if self._has_bias() and shard.wid == self.partition.active_worker:
            vb = self._bias_estimator(shard, i, r)
            delta_b = self.config.gamma * vb
            shard.bias = shard.bias - delta_b
            ev.bias_delta = delta_b
        self.metrics.per_worker_updates[shard.wid] += 1
        self.committed += 1
        if self.committed % self.eval_interval == 0:
            self._take_model_snapshot()

    def _take_model_snapshot(self):
        w = np.zeros(self.partition.n_features)
        for s in self.shards:
            w[s.cols] = s.w
        self.metrics.snapshots.append(
            ModelSnapshot(self.now, self.committed, w, self.active.bias)
        )

    def model_view(self) -> ModelView:
        return ModelView([s.w.copy() for s in self.shards], self.active.bias)

    # -------------------------------------------------------- setup passes

    def _scores_pass(self) -> np.ndarray:
        """Aggregate the score of every sample at the current (frozen) model."""
        scores = np.empty(self.n)
        for i in range(self.n):
            scores[i], msgs = self._aggregate(i)
            self.metrics.setup_messages += msgs
        return scores

    def _charge_pass(self, samples: int) -> float:
        """Advance the clock over a synchronous full pass; returns its span."""
        base = self.config.base_cost_ms
        spans = {s.wid: samples * base * s.multiplier for s in self.shards}
        span = max(spans.values())
        for wid, own in spans.items():
            self.metrics.idle_ms[wid] += span - own
        self.now += span
        return span

    def _init_saga_tables(self):
        scores = self._scores_pass()
        bias = self.active.bias if self.spec.kind == RIDGE else 0.0
        r = residual_vector(self.spec, self.ds.labels, scores, bias)
        for s in self.shards:
            s.saga = SagaTable(r[:, None] * s.X + self.spec.lam * s.w)
        if self._has_bias():
            self.active.saga_bias = SagaTable(r + self.spec.lam * self.active.bias)
        self._charge_pass(self.n)

    def _take_svrg_snapshot(self):
        blocks = [s.w.copy() for s in self.shards]
        bias = self.active.bias
        scores = self._scores_pass()
        r = residual_vector(
            self.spec, self.ds.labels, scores, bias if self.spec.kind == RIDGE else 0.0
        )
        full = [
            (s.X.T @ r) / self.n + self.spec.lam * blocks[s.wid - 1]
            for s in self.shards
        ]
        full_bias = float(r.mean()) + self.spec.lam * bias if self._has_bias() else 0.0
        self.snap = SvrgSnapshot(
            model=ModelView(blocks, bias),
            full_block_gradients=full,
            full_bias_gradient=full_bias,
            scores=scores,
            residuals=r,
        )
        self._charge_pass(self.n)

    def _setup(self):
        self._take_model_snapshot()  # the time-zero point of every curve
        if self.config.algorithm == AFSAGA:
            self._init_saga_tables()
        elif self.config.algorithm == AFSVRG:
            self._take_svrg_snapshot()

    # ----------------------------------------------------- virtual, async

    def run_async(self):
        if self.config.clock == WALL:
            return self._run_async_wall()
        return self._run_async_virtual()

    def _run_async_virtual(self):
        base = self.config.base_cost_ms
        cap = self.config.staleness_cap
        total = self.config.total_updates
        self._setup()
        epoch_end = min(total, self.inner_len)
        heap = []
        for s in self.shards:
            heapq.heappush(heap, (self.now + 0.5 * base * s.multiplier, _PHASE_PULL, s.wid))

        while heap:
            when, phase, wid = heapq.heappop(heap)
            self.now = when
            shard = self.shards[wid - 1]

            if phase == _PHASE_PULL:
                if self.assigned >= epoch_end:
                    shard.idle = True
                    continue
                pending = [
                    (s.inflight[0], s.inflight[4])
                    for s in self.shards
                    if s.inflight is not None
                ]
                t_next = self.assigned
                if cap is not None and pending:
                    offending = [c for (u, c) in pending if t_next - u > cap]
                    if offending:
                        # Wait for the laggard; commits at that instant run first.
                        self.metrics.retries += 1
                        heapq.heappush(heap, (min(offending), _PHASE_PULL, wid))
                        continue
                i = int(shard.rng.integers(self.n))
                score, _versions = self.pull_products(wid, i)
                r = self._residual(i, score)
                commit_at = when + 0.5 * base * shard.multiplier
                shard.inflight = (t_next, i, score, r, commit_at)
                self._inflight_count += 1
                heapq.heappush(heap, (commit_at, _PHASE_COMMIT, wid))
            else:
                t, i, score, r, _ = shard.inflight
                shard.inflight = None
                self._inflight_count -= 1
                self._commit(shard, t, i, score, r)
                if self.assigned < epoch_end:
                    heapq.heappush(
                        heap, (when + 0.5 * base * shard.multiplier, _PHASE_PULL, wid)
                    )
                else:
                    shard.idle = True

            if (
                all(s.idle for s in self.shards)
                and self._inflight_count == 0
                and self.assigned < total
            ):
                # Epoch boundary: a synchronous barrier, then a fresh snapshot.
                self._take_svrg_snapshot()
                epoch_end = min(total, self.assigned + self.inner_len)
                for s in self.shards:
                    s.idle = False
                    heapq.heappush(
                        heap, (self.now + 0.5 * base * s.multiplier, _PHASE_PULL, s.wid)
                    )

        return self._finish()

    # ------------------------------------------------------ virtual, sync

    def run_sync(self):
        if self.config.clock == WALL:
            return self._run_sync_wall()
        return self._run_sync_virtual()

    def _run_sync_virtual(self):
        base = self.config.base_cost_ms
        total = self.config.total_updates
        self._setup()
        round_span = base * max(s.multiplier for s in self.shards)
        inner_rounds = max(1, self.inner_len // self.q)
        rounds_done = 0

        while self.committed < total:
            if (
                self.config.algorithm == AFSVRG
                and rounds_done
                and rounds_done % inner_rounds == 0
            ):
                self._take_svrg_snapshot()
            i = int(self.active.rng.integers(self.n))  # the label holder drives sync rounds
            score, msgs = self._aggregate(i)
            r = self._residual(i, score)
            self.now += round_span
            for s in self.shards:
                self.metrics.idle_ms[s.wid] += round_span - base * s.multiplier
            first = True
            for s in self.shards:
                if self.committed >= total:
                    break
                t = self.assigned
                self.assigned += 1
                self.log.append(
                    EventRecord(
                        t=t,
                        worker=s.wid,
                        sample=i,
                        sim_time_ms=self.now,
                        staleness=0,
                        messages=msgs if first else 0,
                    )
                )
                self.metrics.merge_messages += msgs if first else 0
                first = False
                self._commit(s, t, i, score, r)
            rounds_done += 1

        return self._finish()

    # ------------------------------------------------------------- wall

    def _run_async_wall(self):
        base_s = self.config.base_cost_ms / 1000.0
        cap = self.config.staleness_cap
        total = self.config.total_updates
        self._setup()
        start = _time.perf_counter()
        epoch_state = {"end": min(total, self.inner_len)}
        barrier = None
        if self.config.algorithm == AFSVRG:

            def renew():
                self._take_svrg_snapshot()
                epoch_state["end"] = min(total, self.assigned + self.inner_len)

            barrier = threading.Barrier(self.q, action=renew)

        def loop(shard: _Shard):
            while True:
                with self._lock:
                    if self.assigned >= total:
                        return
                    at_epoch_end = self.assigned >= epoch_state["end"]
                if at_epoch_end:
                    barrier.wait()
                    continue
                i = int(shard.rng.integers(self.n))
                _time.sleep(0.5 * base_s * shard.multiplier)
                while True:
                    contributions = {
                        s.wid: float(np.dot(s.w, s.X[i])) for s in self.shards
                    }
                    with self._lock:
                        if self.assigned >= epoch_state["end"]:
                            score = None
                            break
                        pending = [
                            s.inflight[0] for s in self.shards if s.inflight is not None
                        ]
                        t_next = self.assigned
                        if cap is not None and pending and t_next - min(pending) > cap:
                            self.metrics.retries += 1
                        else:
                            tr = Transcript()
                            if self.config.mask_mode == MASKED:
                                score = masked_tree_sum(
                                    self.t1, self.t2, contributions,
                                    self.mask_range, self.mask_rng, tr,
                                )
                            else:
                                score = tree_sum(self.t1, contributions, tr)
                            msgs = tr.merge_count()
                            t = t_next
                            self.assigned += 1
                            staleness = (t - min(pending)) if pending else 0
                            now_ms = (_time.perf_counter() - start) * 1000.0
                            ev = EventRecord(
                                t=t, worker=shard.wid, sample=i,
                                sim_time_ms=now_ms, staleness=staleness,
                                messages=msgs,
                                pending_per_worker=1 if pending else 0,
                            )
                            self.log.append(ev)
                            self.metrics.merge_messages += msgs
                            shard.inflight = (t, i, score, 0.0, 0.0)
                            break
                    _time.sleep(0.0002)
                if score is None:
                    continue
                r = self._residual(i, score)
                _time.sleep(0.5 * base_s * shard.multiplier)
                with self._lock:
                    shard.inflight = None
                    self._commit(shard, t, i, score, r)
                    self.now = (_time.perf_counter() - start) * 1000.0

        threads = [threading.Thread(target=loop, args=(s,)) for s in self.shards]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        self.now = (_time.perf_counter() - start) * 1000.0
        return self._finish()

    def _run_sync_wall(self):
        base_s = self.config.base_cost_ms / 1000.0
        total = self.config.total_updates
        self._setup()
        start = _time.perf_counter()
        inner_rounds = max(1, self.inner_len // self.q)
        state = {"round": 0}

        def new_round():
            if (
                self.config.algorithm == AFSVRG
                and state["round"]
                and state["round"] % inner_rounds == 0
            ):
                self._take_svrg_snapshot()
            i = int(self.active.rng.integers(self.n))  # the label holder drives sync rounds
            score, msgs = self._aggregate(i)
            state["sample"] = i
            state["score"] = score
            state["residual"] = self._residual(i, score)
            state["messages"] = msgs
            state["counted"] = False
            state["round"] += 1

        barrier = threading.Barrier(self.q, action=new_round)

        def loop(shard: _Shard):
            while True:
                with self._lock:
                    if self.assigned >= total:
                        return
                barrier.wait()
                _time.sleep(base_s * shard.multiplier)
                with self._lock:
                    # A ragged final round: out-of-budget workers still barrier.
                    if self.assigned < total:
                        t = self.assigned
                        self.assigned += 1
                        msgs = 0 if state["counted"] else state["messages"]
                        state["counted"] = True
                        self.now = (_time.perf_counter() - start) * 1000.0
                        self.log.append(
                            EventRecord(
                                t=t, worker=shard.wid, sample=state["sample"],
                                sim_time_ms=self.now, staleness=0, messages=msgs,
                            )
                        )
                        self.metrics.merge_messages += msgs
                        self._commit(shard, t, state["sample"], state["score"], state["residual"])
                barrier.wait()

        threads = [threading.Thread(target=loop, args=(s,)) for s in self.shards]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        self.now = (_time.perf_counter() - start) * 1000.0
        return self._finish()

    # ------------------------------------------------------------ finish

    def _finish(self):
        if not self.metrics.snapshots or self.metrics.snapshots[-1].updates != self.committed:
            self._take_model_snapshot()
        self.metrics.total_updates = self.committed
        self.metrics.duration_ms = self.now
        self.log.events.sort(key=lambda e: e.t)
        return self.model_view(), self.log, self.metrics


def run_async(config: RunConfig, ds: Dataset, partition: VerticalPartition):
    """Run the lock-free algorithm; returns (model, event log, metrics)."""
    config = replace(config, mode=ASYNC)
    return Cluster(config, ds, partition).run_async()


def run_sync(config: RunConfig, ds: Dataset, partition: VerticalPartition):
    """Lockstep baseline: per round all workers share one sample and one
    score, and the round lasts as long as its slowest worker."""
    config = replace(config, mode=SYNC)
    return Cluster(config, ds, partition).run_sync()


def replay_log(log: EventLog, partition: VerticalPartition):
    """Re-apply every recorded update in counter order to a zero model.

    Per block this is the exact operation sequence the owning worker
    executed, so the result matches the final model bit for bit.
    """
    w = np.zeros(partition.n_features)
    bias = 0.0
    for ev in sorted(log.events, key=lambda e: e.t):
        if ev.block_delta is None:
            raise ValueError("the run was recorded without update deltas")
        cols = partition.group(ev.worker)
        w[cols] -= ev.block_delta
        bias -= ev.bias_delta
    return w, bias
