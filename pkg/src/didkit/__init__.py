"""Difference-in-differences estimation under staggered adoption.

Modules
-------
panel      long-format panel data, ingestion and validation
regress    design matrices, least squares, cluster-robust covariance, splines
did        2x2 and group-time ATT estimators, aggregation, TWFE, diagnostics
inference  cluster bootstrap and the pre-trend Wald test
simgen     synthetic panels with known effects and Monte Carlo studies
pipeline   end-to-end runs and JSON result documents
cli        the ``didkit`` command
"""

import logging

__version__ = "0.1.0"

logging.getLogger("didkit").addHandler(logging.NullHandler())

from didkit.did import (  # noqa: E402
    AggregationResult,
    CovariateMode,
    Estimator,
    EstimatorConfig,
    GroupTimeATT,
    aggregate_event,
    aggregate_overall,
    att_2x2_means,
    att_2x2_regression,
    att_gt_all,
    att_or_adjusted,
    group_sizes,
    pretrend_atts,
    stratified_att,
    twfe_estimate,
)
from didkit.errors import (  # noqa: E402
    DidError,
    EstimationError,
    InestimableError,
    PanelDataError,
)
from didkit.inference import BootstrapPlan, cluster_bootstrap, pretrend_wald_test  # noqa: E402
from didkit.panel import ColumnMapping, ControlRule, PanelDataset, load_csv, write_csv  # noqa: E402
from didkit.simgen import DgpConfig, generate_panel, monte_carlo_run  # noqa: E402

__all__ = [
    "__version__",
    "AggregationResult",
    "BootstrapPlan",
    "ColumnMapping",
    "ControlRule",
    "CovariateMode",
    "DgpConfig",
    "DidError",
    "EstimationError",
    "Estimator",
    "EstimatorConfig",
    "GroupTimeATT",
    "InestimableError",
    "PanelDataError",
    "PanelDataset",
    "aggregate_event",
    "aggregate_overall",
    "att_2x2_means",
    "att_2x2_regression",
    "att_gt_all",
    "att_or_adjusted",
    "cluster_bootstrap",
    "generate_panel",
    "group_sizes",
    "load_csv",
    "monte_carlo_run",
    "pretrend_atts",
    "pretrend_wald_test",
    "stratified_att",
    "twfe_estimate",
    "write_csv",
]
