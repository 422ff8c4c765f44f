"""Desk-scale simulator for asynchronous SGD-family training over
vertically partitioned features, with masked tree-structured aggregation."""

from .dataplane import (
    Dataset,
    VerticalPartition,
    generate_synthetic,
    parse_libsvm,
    partition_features,
    standardize,
    to_libsvm,
)
from .losses import (
    LossSpec,
    ModelView,
    full_block_gradient,
    local_product,
    objective_value,
    sample_block_gradient,
)
from .treecomm import (
    TreeTopology,
    Transcript,
    build_balanced_tree,
    generate_significantly_different_pair,
    is_significantly_different,
    masked_tree_sum,
    tree_sum,
)
from .estimators import SagaTable, SvrgSnapshot, apply_update, saga_estimate, sgd_estimate, svrg_estimate
from .engine import Cluster, EventLog, EventRecord, RunConfig, inject_straggler, replay_log, run_async, run_sync
from .analysis import (
    EpochStats,
    TheoryConstants,
    epoch_stats,
    reference_optimum,
    saga_feasibility,
    sgd_step_size,
    speedup,
    suboptimality_curve,
    svrg_feasibility,
)

__version__ = "0.1.0"
