"""Count-sketch gradient compression and a simulator for sketched federated learning."""

from .analysis import (
    Regime,
    TheoryParams,
    omega_for,
    privacy_epsilon,
    recommended_lr,
    sketch_rows,
    stepsize_ok,
)
from .compressors import (
    CompressorSpec,
    EstimateVector,
    FillMode,
    Kind,
    ValueMode,
    compressor_stats,
    heaprix_decode,
    heaprix_device,
    heaprix_server,
    heaprix_share,
    heavymix,
    privix,
    privix_share,
    residual_family,
)
from .errors import (
    ConfigError,
    DimensionError,
    IncompatibleSketchError,
    MissingOracleError,
    ParameterError,
)
from .fedsim import Algorithm, FedConfig, Readout, RoundTrace, Variant, run
from .problems import (
    Dataset,
    LogisticProblem,
    Partition,
    QuadraticProblem,
    load_csv,
    make_logistic,
    make_quadratic,
    partition_heterogeneous,
    partition_homogeneous,
    stochastic_grad,
)
from .sketch import (
    HashFamily,
    SketchTable,
    compress,
    derive_family,
    l2_estimate,
    point_query,
    table_add,
    table_scale,
    table_sub,
)

__version__ = "0.1.0"
