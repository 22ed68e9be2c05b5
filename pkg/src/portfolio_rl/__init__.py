"""Portfolio management with reinforcement learning under transaction costs.

Modules: ``market_data`` (OHLCV, features, amplified states), ``environment``
(cost-aware trading simulator), ``neural`` (numpy CNN/MLP with analytic
gradients), ``pgac`` (policy-gradient actor-critic), ``es`` (evolution
strategy), ``backtest`` (held-out evaluation and metrics), ``cli``.
"""

from .backtest import (
    BASELINES,
    BestSingleAsset,
    EqualWeightBuyHold,
    EsAgent,
    HoldRiskless,
    MetricsReport,
    PgacAgent,
    compare,
    metrics_report,
    run_backtest,
)
from .environment import CostModel, EnvConfig, complete_weights, cost_shrinkage, reset, step
from .es import EsConfig, train_es
from .market_data import (
    DEFAULT_FEATURES,
    FeatureCube,
    PriceSeries,
    StateTensor,
    SyntheticSpec,
    amplify_state,
    build_feature_cube,
    generate_synthetic,
    load_ohlcv,
)
from .pgac import PgacConfig, train_pgac

__version__ = "0.1.0"

__all__ = [
    "BASELINES",
    "BestSingleAsset",
    "CostModel",
    "DEFAULT_FEATURES",
    "EnvConfig",
    "EqualWeightBuyHold",
    "EsAgent",
    "EsConfig",
    "FeatureCube",
    "HoldRiskless",
    "MetricsReport",
    "PgacAgent",
    "PgacConfig",
    "PriceSeries",
    "StateTensor",
    "SyntheticSpec",
    "amplify_state",
    "build_feature_cube",
    "compare",
    "complete_weights",
    "cost_shrinkage",
    "generate_synthetic",
    "load_ohlcv",
    "metrics_report",
    "reset",
    "run_backtest",
    "step",
    "train_es",
    "train_pgac",
]
