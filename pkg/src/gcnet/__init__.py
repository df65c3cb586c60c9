"""gcnet: gated-compression neural networks for always-on workloads.

Train networks with early-exit gates and learned binary compression masks,
evaluate them with an early-exit inference engine and a gate/compression
metric suite, and simulate deployment across heterogeneous compute islands.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    EquivalenceError,
    GCNetError,
    NumericError,
    UndefinedMetricError,
)
from .network import (
    BlockSpec,
    GCConfig,
    GCLayerState,
    Network,
    build_network,
    forward_train,
    insert_gc,
    split_at_gc,
)
from .objective import ClassMapping, LossWeights
from .tensor import Tensor

__all__ = [
    "BlockSpec",
    "ClassMapping",
    "ConfigError",
    "DataError",
    "DimensionError",
    "EquivalenceError",
    "GCConfig",
    "GCLayerState",
    "GCNetError",
    "LossWeights",
    "Network",
    "NumericError",
    "Tensor",
    "UndefinedMetricError",
    "build_network",
    "forward_train",
    "insert_gc",
    "split_at_gc",
    "__version__",
]
