"""Decentralized bilevel optimization over gossip networks with
compressed communication.

The package simulates a network of nodes that jointly minimize an
upper-level objective whose variables feed a lower-level problem, using
only neighbor-to-neighbor messages.  Lower-level solves run a
gradient-tracking gossip loop whose messages are compressed against
locally maintained reference points; the outer loop assembles a
penalty-based hypergradient from lower-level solutions, so no second
derivatives are ever formed.
"""

from .topology import (
    TopologySpec,
    MixingMatrix,
    build_mixing_matrix,
    spectral_gap,
    effective_matrix,
)
from .compression import (
    Compressor,
    CompressedVector,
    compress,
    decompress,
    payload_words,
    rescale_biased,
    contraction_suite,
)
from .problems import (
    BilevelProblem,
    ProblemConstants,
    QuadraticBilevel,
    CoefficientTuning,
    HyperRepresentation,
    make_quadratic_problem,
    make_coefficient_tuning_problem,
    make_hyper_representation_problem,
    hypergradient_estimate,
    hypergradient_estimate_all,
)
from .datasets import (
    Dataset,
    HeterogeneousSplit,
    make_synthetic_classification,
    partition_heterogeneous,
    write_dataset,
    read_dataset,
)
from .inner import InnerState, InnerReport, inner_init, inner_step, inner_run
from .outer import (
    RunConfig,
    RunLog,
    OuterState,
    run,
    default_schedule,
    ScheduleCoefficients,
)
from .metrics import (
    CSV_SCHEMA,
    DiagnosticsSnapshot,
    PayloadLedger,
    RoundRecord,
    write_log,
    read_log,
    snapshot_outer,
)
from .errors import (
    SimulationError,
    ConfigError,
    DataError,
    SchemaError,
    NumericError,
    DivergenceError,
)

__version__ = "0.1.0"
