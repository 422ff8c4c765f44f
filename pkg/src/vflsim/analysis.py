"""Offline analysis: reference optimum, convergence curves, time-to-target
speedup, trace-derived delay statistics, and the closed-form step-size /
feasibility calculators for the three algorithms' convergence guarantees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataplane import Dataset, VerticalPartition
from .losses import LOGISTIC, RIDGE, LossSpec, ModelView, objective_value, residual_vector


class AnalysisError(RuntimeError):
    pass


# ---------------------------------------------------------------- optimum


@dataclass
class OptimumResult:
    weights: np.ndarray
    bias: float
    value: float
    grad_inf_norm: float
    iterations: int


def _value_and_grad(spec: LossSpec, X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float):
    l = X.shape[0]
    scores = X @ w
    if spec.kind == LOGISTIC:
        f = float(np.logaddexp(0.0, -y * scores).mean()) + 0.5 * spec.lam * float(w @ w)
        r = residual_vector(spec, y, scores)
        return f, (X.T @ r) / l + spec.lam * w, 0.0
    resid = scores + b - y
    sq = float(w @ w) + (b * b if spec.has_bias else 0.0)
    f = float((resid * resid).mean()) + 0.5 * spec.lam * sq
    gw = (X.T @ (2.0 * resid)) / l + spec.lam * w
    gb = float((2.0 * resid).mean()) + spec.lam * b if spec.has_bias else 0.0
    return f, gw, gb


def _ridge_closed_form(spec: LossSpec, X: np.ndarray, y: np.ndarray):
    """Normal equations for mean squared error plus (lam/2) l2: the gradient
    (2/l) A^T (A theta - y) + lam theta vanishes at the returned theta."""
    l = X.shape[0]
    A = np.hstack([X, np.ones((l, 1))]) if spec.has_bias else X
    lhs = 2.0 * (A.T @ A) / l + spec.lam * np.eye(A.shape[1])
    rhs = 2.0 * (A.T @ y) / l
    theta = np.linalg.solve(lhs, rhs)
    if spec.has_bias:
        return theta[:-1], float(theta[-1])
    return theta, 0.0


def reference_optimum(
    spec: LossSpec,
    ds: Dataset,
    partition: VerticalPartition,
    tol: float = 1e-10,
    max_iters: int = 200_000,
) -> OptimumResult:
    """Full-batch gradient descent with backtracking, run until the gradient
    infinity norm drops below tol.

    For ridge the result is additionally checked against the normal-equations
    solution, which would expose a broken gradient immediately. Needs lam > 0
    so the minimizer is unique.
    """
    if spec.lam <= 0:
        raise ValueError("a unique optimum needs lam > 0")
    X, y = ds.features, ds.labels
    w = np.zeros(ds.n_features)
    b = 0.0
    f, gw, gb = _value_and_grad(spec, X, y, w, b)
    step = 1.0
    it = 0
    for it in range(1, max_iters + 1):
        gnorm = max(float(np.abs(gw).max(initial=0.0)), abs(gb))
        if gnorm <= tol:
            break
        gsq = float(gw @ gw) + gb * gb
        # The step is accepted by Armijo backtracking, with a slack at float
        # resolution so the search cannot stall once per-step decreases fall
        # below what float64 represents. The trial step is the spectral
        # (secant) estimate, which keeps badly conditioned instances from
        # crawling; backtracking still guards every move.
        while True:
            w2 = w - step * gw
            b2 = b - step * gb
            f2, gw2, gb2 = _value_and_grad(spec, X, y, w2, b2)
            if f2 <= f - 0.25 * step * gsq + 4e-16 * max(1.0, abs(f)):
                break
            step *= 0.5
            if step < 1e-20:
                raise AnalysisError(
                    f"line search collapsed with |grad|_inf = {gnorm:.3e}"
                )
        # secant step |dw|^2 / (dw . dg), with dw = -step * g_old
        denom = gsq - (float(gw2 @ gw) + gb2 * gb)
        w, b, f, gw, gb = w2, b2, f2, gw2, gb2
        if denom > 0.0 and np.isfinite(denom):
            step = min(max(step * gsq / denom, 1e-12), 1e6)
        else:
            step = min(step * 2.0, 1e6)
    else:
        gnorm = max(float(np.abs(gw).max(initial=0.0)), abs(gb))
        raise AnalysisError(
            f"no convergence in {max_iters} iterations; |grad|_inf = {gnorm:.3e}"
        )

    if spec.kind == RIDGE:
        w_ne, b_ne = _ridge_closed_form(spec, X, y)
        f_ne, _, _ = _value_and_grad(spec, X, y, w_ne, b_ne)
        scale = max(1.0, abs(f))
        if abs(f - f_ne) > 1e-9 * scale or np.linalg.norm(w - w_ne) > 1e-5 * (
            1.0 + np.linalg.norm(w_ne)
        ):
            raise AnalysisError(
                f"descent result disagrees with the closed form: {f!r} vs {f_ne!r}"
            )
    gnorm = max(float(np.abs(gw).max(initial=0.0)), abs(gb))
    return OptimumResult(w, b, f, gnorm, it)


# ----------------------------------------------------------------- curves


def suboptimality_curve(
    snapshots: Sequence,
    spec: LossSpec,
    ds: Dataset,
    partition: VerticalPartition,
    f_star: float,
) -> list:
    """(time_ms, updates, f(w) - f*) per saved model snapshot.

    A value below -1e-9 means the reference optimum is broken and raises;
    rounding-level negatives are clamped to zero.
    """
    rows = []
    for snap in snapshots:
        model = ModelView.from_full(snap.weights, partition, snap.bias)
        gap = objective_value(spec, model, ds, partition) - f_star
        if gap < -1e-9:
            raise AnalysisError(f"negative sub-optimality {gap!r}: broken reference")
        rows.append((snap.time_ms, snap.updates, max(gap, 0.0)))
    return rows


def _time_to_target(curve: Sequence, target: float, name: str) -> float:
    prev_t = prev_v = None
    for row in curve:
        t, v = row[0], row[-1]
        if v <= target:
            if prev_t is None or prev_v <= target:
                return float(t)
            frac = (prev_v - target) / (prev_v - v)
            return float(prev_t + frac * (t - prev_t))
        prev_t, prev_v = t, v
    raise AnalysisError(f"{name} curve never reaches target {target!r}")


def speedup(async_curve: Sequence, sync_curve: Sequence, target: float) -> float:
    """(sync time to target) / (async time to target), linearly interpolated
    between curve points. Scale-invariant in the time axis."""
    t_async = _time_to_target(async_curve, target, "async")
    t_sync = _time_to_target(sync_curve, target, "sync")
    return t_sync / t_async


# ------------------------------------------------------------ trace stats


@dataclass
class EpochStats:
    """Delay statistics measured from an event log.

    A coverage window starting at position t is the shortest run of
    consecutive events in which every worker appears; epochs counts how
    many such windows tile the log back to back from the start.
    """

    epochs: int
    window_sizes: list
    max_window_visits: int  # most events by any one worker inside a window
    max_staleness: int
    max_pending: int


def epoch_stats(log, q: int) -> EpochStats:
    workers = [e.worker for e in log]
    missing = sorted(set(range(1, q + 1)) - set(workers))
    if missing:
        raise AnalysisError(f"log never covers workers {missing}")

    n = len(workers)
    window_sizes = []
    max_visits = 0
    counts = {w: 0 for w in range(1, q + 1)}
    covered = 0
    end = 0
    for start in range(n):
        while end < n and covered < q:
            counts[workers[end]] += 1
            if counts[workers[end]] == 1:
                covered += 1
            end += 1
        if covered < q:
            break
        window_sizes.append(end - start)
        max_visits = max(max_visits, max(counts.values()))
        counts[workers[start]] -= 1
        if counts[workers[start]] == 0:
            covered -= 1

    epochs = 0
    pos = 0
    sizes_by_start = dict(zip(range(len(window_sizes)), window_sizes))
    while pos in sizes_by_start:
        pos += sizes_by_start[pos]
        epochs += 1

    max_staleness = max((e.staleness for e in log), default=0)
    max_pending = max((getattr(e, "pending_per_worker", 0) for e in log), default=0)
    return EpochStats(epochs, window_sizes, max_visits, max_staleness, max_pending)


# ------------------------------------------------------- theory calculators


@dataclass
class TheoryConstants:
    """Problem constants the convergence guarantees are stated with."""

    smoothness: float  # L: gradient Lipschitz constant of the per-sample losses
    block_smoothness: float  # worst per-block Lipschitz constant (at most L)
    strong_convexity: float  # mu
    grad_bound: float  # bound on squared block gradient norms
    workers: int
    window_visits: float  # most updates by one worker per coverage window
    pending_updates: float  # most in-flight updates per worker
    max_delay: float  # staleness bound, in counter steps
    accuracy: float  # target sub-optimality

    def __post_init__(self):
        vals = [
            self.smoothness, self.block_smoothness, self.strong_convexity,
            self.grad_bound, self.workers, self.window_visits,
            self.pending_updates, self.max_delay, self.accuracy,
        ]
        if any(v <= 0 for v in vals):
            raise ValueError("all theory constants must be positive")
        lo, hi = self.block_smoothness, self.workers * self.block_smoothness
        if not lo * (1 - 1e-9) <= self.smoothness <= hi * (1 + 1e-9):
            raise ValueError(
                "smoothness must lie between the block constant and workers times it"
            )


@dataclass
class StepSizePlan:
    gamma: float
    min_epochs: float


@dataclass
class FeasibilityReport:
    values: dict = field(default_factory=dict)
    conditions: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return all(self.conditions.values())

    def to_text(self) -> str:
        lines = []
        for k, ok in self.conditions.items():
            lines.append(f"{'ok  ' if ok else 'FAIL'} {k}")
        for k, v in self.values.items():
            lines.append(f"     {k} = {v!r}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def sgd_step_size(c: TheoryConstants, initial_gap: float = 1.0) -> StepSizePlan:
    """Largest safe constant step for the plain asynchronous algorithm, and
    the epoch count that then reaches the target accuracy.

    gamma = (-Lmax + sqrt(Lmax^2 + 2 mu eps (L^2 q e1^2 + e2 L^2 tau)/(G e1 q)))
            / (2 L^2 (q e1^2 + e2 tau))
    epochs >= (2 / (mu gamma)) log(2 gap / eps)
    """
    L, Lm = c.smoothness, c.block_smoothness
    mu, G, q = c.strong_convexity, c.grad_bound, c.workers
    e1, e2, tau, eps = c.window_visits, c.pending_updates, c.max_delay, c.accuracy
    disc = Lm * Lm + 2.0 * mu * eps * (L * L * q * e1 * e1 + e2 * L * L * tau) / (G * e1 * q)
    denom = 2.0 * L * L * (q * e1 * e1 + e2 * tau)
    if denom == 0:
        raise AnalysisError("zero denominator in the step-size formula")
    gamma = (-Lm + math.sqrt(disc)) / denom
    min_epochs = (2.0 / (mu * gamma)) * math.log(2.0 * initial_gap / eps)
    return StepSizePlan(gamma, min_epochs)


def svrg_feasibility(
    c: TheoryConstants, gamma: float, initial_gap: float = 1.0
) -> FeasibilityReport:
    """Per-condition check of the snapshot-corrected variant's guarantee at a
    given step size.

    With C = (e1 gamma L^2 q e1 + Lmax) gamma^2 / 2 and
    rho = gamma mu / 2 - 16 L^2 e1 q C / mu, the requirements are rho > 0,
    8 L^2 e1 q C / (rho mu) <= 1/2, and a gamma^3 residual term below eps/8;
    the inner loop then needs log(1/4)/log(1-rho) epochs and the outer loop
    log(2 gap/eps)/log(4/3) rounds. The contraction argument needs rho
    strictly positive; a statement of these conditions with the opposite
    sign on rho does not admit a contraction and is not what is checked.
    """
    L, Lm = c.smoothness, c.block_smoothness
    mu, G, q = c.strong_convexity, c.grad_bound, c.workers
    e1, e2, tau, eps = c.window_visits, c.pending_updates, c.max_delay, c.accuracy
    C = (e1 * gamma * L * L * q * e1 + Lm) * gamma * gamma / 2.0
    rho = gamma * mu / 2.0 - 16.0 * L * L * e1 * q * C / mu
    rep = FeasibilityReport()
    rep.values["C"] = C
    rep.values["rho"] = rho
    rep.conditions["contraction (rho > 0)"] = rho > 0.0
    if rho > 0.0:
        geometric = 8.0 * L * L * e1 * q * C / (rho * mu)
        residual = (
            gamma ** 3
            * ((0.5 + 2.0 * C / gamma) * e2 * tau + 4.0 * (C / gamma) * e1 * e1 * q)
            * (e1 * q * L * L * G / rho)
        )
        rep.values["geometric_term"] = geometric
        rep.values["residual_term"] = residual
        rep.conditions["geometric term <= 0.5"] = geometric <= 0.5
        rep.conditions["residual term <= eps/8"] = residual <= eps / 8.0
        if rho < 1.0:
            rep.values["min_inner_epochs"] = math.log(0.25) / math.log(1.0 - rho)
    else:
        rep.conditions["geometric term <= 0.5"] = False
        rep.conditions["residual term <= eps/8"] = False
        rep.notes.append("rho <= 0: no contraction at this step size")
    rep.values["min_outer_loops"] = math.log(2.0 * initial_gap / eps) / math.log(4.0 / 3.0)
    return rep


def saga_feasibility(
    c: TheoryConstants,
    gamma: float,
    rho: float,
    n_samples: int,
    initial_gap: float = 1.0,
) -> FeasibilityReport:
    """Per-condition check of the table-corrected variant's guarantee at a
    given step size and contraction parameter rho in (1 - 1/l, 1)."""
    l = n_samples
    if not (1.0 - 1.0 / l) < rho < 1.0:
        raise ValueError("rho must lie in (1 - 1/n_samples, 1)")
    L, Lm = c.smoothness, c.block_smoothness
    mu, G, q = c.strong_convexity, c.grad_bound, c.workers
    e1, e2, tau, eps = c.window_visits, c.pending_updates, c.max_delay, c.accuracy

    c0 = (
        (e2 / 2.0 + 3.0 * (gamma * q * e1 * e1 + Lm) * (e1 + 2.0 * e2)) * tau
        + (gamma * L * L * q * e1 * e1 + 8.0 * Lm) * e1 * q * e1
    ) * gamma ** 4 * L * L * e1 * q * G
    c1 = (gamma * L * L * q * e1 * e1 + Lm) * gamma * gamma * e1 * q * 2.0 * L * L
    c2 = 4.0 * (gamma * L * L * q * e1 * e1 + Lm) * (L * L * e1 * e1 * q / l) * gamma ** 2
    geo = 1.0 / (1.0 - (1.0 - 1.0 / l) / rho)
    denom = gamma * mu * mu / 4.0 - 2.0 * c1 - c2

    rep = FeasibilityReport()
    rep.values.update({"c0": c0, "c1": c1, "c2": c2, "denominator": denom})
    if denom > 0.0:
        noise = 4.0 * c0 / (gamma * mu * (1.0 - rho) * denom)
        rep.values["noise_term"] = noise
        rep.conditions["noise term <= eps/2"] = noise <= eps / 2.0
    else:
        rep.conditions["noise term <= eps/2"] = False
        rep.notes.append("unusable: gamma mu^2/4 - 2 c1 - c2 is not positive")
    rep.conditions["0 < 1 - gamma mu/4 < 1"] = 0.0 < 1.0 - gamma * mu / 4.0 < 1.0
    lhs13 = -gamma * mu * mu / 4.0 + 2.0 * c1 + c2 * (1.0 + geo)
    lhs14 = -gamma * mu * mu / 4.0 + c2 + c1 * (2.0 + geo)
    rep.values["drift_term_a"] = lhs13
    rep.values["drift_term_b"] = lhs14
    rep.conditions["drift term a <= 0"] = lhs13 <= 0.0
    rep.conditions["drift term b <= 0"] = lhs14 <= 0.0
    shrink = rho - 1.0 + gamma * mu / 4.0
    if denom > 0.0 and shrink > 0.0:
        arg = (
            2.0 * (2.0 * rho - 1.0 + gamma * mu / 4.0) * initial_gap
            / (eps * shrink * denom)
        )
        if arg > 0.0:
            rep.values["min_epochs"] = math.log(arg) / math.log(1.0 / rho)
    return rep


# --------------------------------------------------- estimated constants


def _top_eigenvalue(X: np.ndarray, iters: int = 200, seed: int = 0) -> float:
    """Largest eigenvalue of X^T X / l by power iteration."""
    l, d = X.shape
    rng = np.random.default_rng(seed)
    v = rng.normal(size=d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = X.T @ (X @ v) / l
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        v = u / norm
        lam = norm
    return float(lam)


def estimate_constants(
    spec: LossSpec,
    ds: Dataset,
    partition: VerticalPartition,
    model: Optional[ModelView] = None,
    accuracy: float = 1e-3,
    window_visits: float = 1.0,
    pending_updates: float = 1.0,
    max_delay: Optional[float] = None,
) -> TheoryConstants:
    """Conservative data-driven constants for the calculators.

    mu is taken as the regularization coefficient; smoothness comes from the
    top Gram eigenvalue scaled by the loss curvature bound (1/4 logistic,
    2 ridge); the gradient bound is the largest squared per-sample block
    gradient at the given model (zero by default). The delay parameters are
    runtime properties, so they are caller-supplied.
    """
    if model is None:
        model = ModelView.zeros(partition)
    curvature = 0.25 if spec.kind == LOGISTIC else 2.0
    L = curvature * _top_eigenvalue(ds.features) + spec.lam
    Lm = max(
        curvature * _top_eigenvalue(ds.features[:, g]) + spec.lam
        for g in partition.groups
    )
    q = partition.q
    L = min(max(L, Lm), q * Lm)  # estimation noise must not break the ordering

    w = model.to_full(partition)
    scores = ds.features @ w
    bias = model.bias if spec.kind == RIDGE else 0.0
    r = residual_vector(spec, ds.labels, scores, bias)
    G = 0.0
    for wid in range(1, q + 1):
        cols = partition.group(wid)
        M = ds.features[:, cols] * r[:, None] + spec.lam * model.blocks[wid - 1]
        G = max(G, float((M * M).sum(axis=1).max()))
    return TheoryConstants(
        smoothness=L,
        block_smoothness=Lm,
        strong_convexity=spec.lam,
        grad_bound=max(G, 1e-12),
        workers=q,
        window_visits=window_visits,
        pending_updates=pending_updates,
        max_delay=float(q) if max_delay is None else max_delay,
        accuracy=accuracy,
    )
