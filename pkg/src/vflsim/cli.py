"""Config-driven experiment runner.

A config file is flat `key = value` lines with `#` comments. Every key can
also be overridden on the command line with a flag of the same name, e.g.
``--gamma 0.05`` or ``--straggler.2 3.0``. Outputs per run are a
convergence curve CSV, the event log CSV, and a human-readable summary.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis, engine
from .dataplane import (
    CLASSIFICATION,
    parse_libsvm,
    partition_features,
    generate_synthetic,
)
from .losses import LOGISTIC, RIDGE, LossSpec
from .treecomm import generate_significantly_different_pair, is_significantly_different


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    data: str = ""  # path of a LIBSVM file; empty means synthetic
    synthetic_n: int = 200
    synthetic_d: int = 20
    task: str = CLASSIFICATION
    q: int = 4
    partition: str = "contiguous"
    algorithm: str = engine.AFSGD
    mode: str = engine.ASYNC  # async | sync | both
    gamma: list = field(default_factory=lambda: [0.1])
    lam: float = 1e-4
    updates: int = 2000
    snapshot_interval: int = 0
    stragglers: dict = field(default_factory=dict)
    mask: str = engine.PLAIN
    mask_range: float = 0.0  # 0 means automatic
    staleness_cap: int = 0  # 0 means unenforced
    seed: int = 7
    out: str = "out"

    def echo_lines(self) -> list:
        gam = ",".join("%g" % g for g in self.gamma)
        lines = [
            f"data = {self.data}",
            f"synthetic.n = {self.synthetic_n}",
            f"synthetic.d = {self.synthetic_d}",
            f"task = {self.task}",
            f"q = {self.q}",
            f"partition = {self.partition}",
            f"algorithm = {self.algorithm}",
            f"mode = {self.mode}",
            f"gamma = {gam}",
            f"lambda = {self.lam:g}",
            f"updates = {self.updates}",
            f"snapshot_interval = {self.snapshot_interval}",
            f"mask = {self.mask}",
            f"mask_range = {self.mask_range:g}",
            f"staleness_cap = {self.staleness_cap}",
            f"seed = {self.seed}",
            f"out = {self.out}",
        ]
        for wid in sorted(self.stragglers):
            lines.append(f"straggler.{wid} = {self.stragglers[wid]:g}")
        return lines


def load_config(path: str) -> dict:
    raw = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def build_experiment(raw: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    try:
        for key, value in raw.items():
            if key == "data":
                cfg.data = value
            elif key == "synthetic.n":
                cfg.synthetic_n = int(value)
            elif key == "synthetic.d":
                cfg.synthetic_d = int(value)
            elif key == "task":
                cfg.task = value
            elif key == "q":
                cfg.q = int(value)
            elif key == "partition":
                cfg.partition = value
            elif key == "algorithm":
                cfg.algorithm = value
            elif key == "mode":
                cfg.mode = value
            elif key == "gamma":
                cfg.gamma = [float(tok) for tok in value.split(",") if tok.strip()]
            elif key == "lambda":
                cfg.lam = float(value)
            elif key == "updates":
                cfg.updates = int(value)
            elif key == "snapshot_interval":
                cfg.snapshot_interval = int(value)
            elif key == "mask":
                cfg.mask = value
            elif key == "mask_range":
                cfg.mask_range = float(value)
            elif key == "staleness_cap":
                cfg.staleness_cap = int(value)
            elif key == "seed":
                cfg.seed = int(value)
            elif key == "out":
                cfg.out = value
            elif key.startswith("straggler."):
                cfg.stragglers[int(key.split(".", 1)[1])] = float(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    if cfg.mode not in (engine.ASYNC, engine.SYNC, "both"):
        raise ConfigError(f"mode must be async, sync, or both, not {cfg.mode!r}")
    if not cfg.gamma:
        raise ConfigError("gamma needs at least one value")
    return cfg


def _load_dataset(cfg: ExperimentConfig):
    if cfg.data:
        text = Path(cfg.data).read_text()
        probe = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        d = 0
        for ln in probe:
            for tok in ln.split()[1:]:
                d = max(d, int(tok.partition(":")[0]))
        ds = parse_libsvm(text, d, task=cfg.task, zero_one_labels=True)
    else:
        ds = generate_synthetic(cfg.synthetic_n, cfg.synthetic_d, cfg.task, cfg.seed)
    partition = partition_features(ds.n_features, cfg.q, cfg.partition)
    return ds, partition


def _loss_spec(cfg: ExperimentConfig) -> LossSpec:
    if cfg.task == CLASSIFICATION:
        return LossSpec(LOGISTIC, cfg.lam)
    return LossSpec(RIDGE, cfg.lam, has_bias=True)


def _run_config(cfg: ExperimentConfig, gamma: float, mode: str) -> engine.RunConfig:
    return engine.RunConfig(
        algorithm=cfg.algorithm,
        mode=mode,
        gamma=gamma,
        total_updates=cfg.updates,
        loss=_loss_spec(cfg),
        mask_mode=cfg.mask,
        mask_range=cfg.mask_range or None,
        staleness_cap=cfg.staleness_cap or None,
        stragglers=dict(cfg.stragglers),
        seed=cfg.seed,
        snapshot_interval=cfg.snapshot_interval,
    )


def _write_curve(path: Path, curve) -> None:
    with path.open("w") as fh:
        fh.write("time_ms,updates,suboptimality\n")
        for t, updates, gap in curve:
            fh.write(f"{t!r},{updates},{gap!r}\n")


def read_curve(path) -> list:
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            t, updates, gap = line.strip().split(",")
            rows.append((float(t), int(updates), float(gap)))
    return rows


def speedup_target(async_curve, sync_curve) -> float:
    """The documented pairing rule: 1.5x the larger of the two curves'
    best sub-optimality, so both curves are guaranteed to cross it."""
    best_async = min(r[-1] for r in async_curve)
    best_sync = min(r[-1] for r in sync_curve)
    return max(1.5 * max(best_async, best_sync), 1e-15)


def run_experiment(config_path: str, overrides: dict | None = None) -> int:
    """Execute one experiment; writes curve CSVs, events.csv and summary.txt.

    With a gamma grid there is one curve file per value and the summary
    names the best by final sub-optimality; with both modes requested the
    summary also reports the async-over-sync time-to-target speedup.
    """
    raw = load_config(config_path)
    if overrides:
        raw.update(overrides)
    cfg = build_experiment(raw)
    ds, partition = _load_dataset(cfg)
    spec = _loss_spec(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    opt = analysis.reference_optimum(spec, ds, partition)
    modes = [engine.ASYNC, engine.SYNC] if cfg.mode == "both" else [cfg.mode]

    runs = []  # (mode, gamma, curve, curve_path, log, metrics)
    for mode in modes:
        for gamma in cfg.gamma:
            rc = _run_config(cfg, gamma, mode)
            cluster = engine.Cluster(rc, ds, partition)
            _, log, metrics = cluster.run_async() if mode == engine.ASYNC else cluster.run_sync()
            curve = analysis.suboptimality_curve(
                metrics.snapshots, spec, ds, partition, opt.value
            )
            name = f"curve_{cfg.algorithm}_{mode}.csv"
            if len(cfg.gamma) > 1:
                name = f"curve_{cfg.algorithm}_{mode}_g{gamma:g}.csv"
            path = out / name
            _write_curve(path, curve)
            runs.append((mode, gamma, curve, path, log, metrics))

    best = {}
    for mode in modes:
        candidates = [r for r in runs if r[0] == mode]
        best[mode] = min(candidates, key=lambda r: r[2][-1][-1])

    primary = best.get(engine.ASYNC, best.get(engine.SYNC))
    (out / "events.csv").write_text(primary[4].to_csv())

    lines = ["# experiment summary", "", "[config]"]
    lines += cfg.echo_lines()
    lines += ["", "[reference]", f"f_star = {opt.value!r}",
              f"grad_inf_norm = {opt.grad_inf_norm:.3e}"]
    lines += ["", "[runs]"]
    for mode, gamma, curve, path, _log, metrics in runs:
        lines.append(
            f"{mode} gamma={gamma:g} final_suboptimality={curve[-1][-1]:.6e} "
            f"updates={metrics.total_updates} duration_ms={metrics.duration_ms:.3f} "
            f"messages={metrics.merge_messages} setup_messages={metrics.setup_messages} "
            f"retries={metrics.retries} file={path.name}"
        )
    for mode in modes:
        lines.append(f"best_{mode}: gamma={best[mode][1]:g} file={best[mode][3].name}")

    stats = analysis.epoch_stats(primary[4], cfg.q)
    lines += [
        "",
        "[trace]",
        f"epochs = {stats.epochs}",
        f"max_window_visits = {stats.max_window_visits}",
        f"max_staleness = {stats.max_staleness}",
        f"max_pending = {stats.max_pending}",
    ]

    if cfg.mode == "both":
        a, s = best[engine.ASYNC], best[engine.SYNC]
        target = speedup_target(a[2], s[2])
        ratio = analysis.speedup(a[2], s[2], target)
        lines += [
            "",
            "[speedup]",
            "rule = 1.5 * max(best suboptimality of the two curves)",
            f"target = {target!r}",
            f"async_over_sync = {ratio!r}",
        ]

    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return 0


def verify_trees(q: int, seed: int = 0) -> int:
    """Print a generated reduction-tree pair and whether it is safe to use."""
    t1, t2 = generate_significantly_different_pair(q, seed)
    verdict = is_significantly_different(t1, t2)
    print(f"tree 1: {t1.to_parens()}")
    print(f"tree 2: {t2.to_parens()}")
    print(f"significantly different: {verdict}")
    return 0 if verdict else 1


_OVERRIDE_KEYS = [
    "data", "synthetic.n", "synthetic.d", "task", "q", "partition",
    "algorithm", "mode", "gamma", "lambda", "updates", "snapshot_interval",
    "mask", "mask_range", "staleness_cap", "seed", "out",
]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vflsim")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("config")
    for key in _OVERRIDE_KEYS:
        run_p.add_argument(f"--{key}", dest=key, default=None)

    tree_p = sub.add_parser("verify-trees", help="print a reduction-tree pair")
    tree_p.add_argument("q", type=int)
    tree_p.add_argument("--seed", type=int, default=0)

    args, extra = parser.parse_known_args(argv)

    if args.command == "verify-trees":
        if args.q < 2:
            print("q must be at least 2", file=sys.stderr)
            return 2
        return verify_trees(args.q, args.seed)

    overrides = {}
    ns = vars(args)
    for key in _OVERRIDE_KEYS:
        if ns.get(key) is not None:
            overrides[key] = ns[key]
    k = 0
    while k < len(extra):  # dynamic --straggler.<id> flags
        tok = extra[k]
        if tok.startswith("--straggler.") and k + 1 < len(extra):
            overrides[tok[2:]] = extra[k + 1]
            k += 2
        else:
            print(f"unrecognized argument {tok!r}", file=sys.stderr)
            return 2
    try:
        return run_experiment(args.config, overrides)
    except (ConfigError, FileNotFoundError, ValueError, analysis.AnalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
