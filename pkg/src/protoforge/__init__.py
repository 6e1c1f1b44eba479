"""protoforge: simulation and verification framework for message compression
in synchronous full-information distributed protocols."""

__version__ = "0.1.0"

from .core import (
    AdversaryView,
    Corrupt,
    ProtocolParams,
    ProtocolSpec,
    RngSeed,
    ScheduleHonest,
    SendAs,
    Transcript,
    TranscriptEntry,
    enumerate_honest_outputs,
    run_honest,
    run_with_adversary,
    validate_protocol,
)
from .stats import Distribution, SampleConfig
from .adversaries import SecurityParams, ValueReport, optimal_adaptive_value, value_of
from .compression import (
    CompressionParams,
    MatrixH,
    compressed_protocol,
    ell_formula,
    map_h,
    map_transcript,
    mu_star,
    sample_matrix,
)
from .publiccoin import GeneralProtocolSpec, public_coin_transform

__all__ = [
    "AdversaryView",
    "CompressionParams",
    "Corrupt",
    "Distribution",
    "GeneralProtocolSpec",
    "MatrixH",
    "ProtocolParams",
    "ProtocolSpec",
    "RngSeed",
    "SampleConfig",
    "ScheduleHonest",
    "SecurityParams",
    "SendAs",
    "Transcript",
    "TranscriptEntry",
    "ValueReport",
    "compressed_protocol",
    "ell_formula",
    "enumerate_honest_outputs",
    "map_h",
    "map_transcript",
    "mu_star",
    "optimal_adaptive_value",
    "public_coin_transform",
    "run_honest",
    "run_with_adversary",
    "sample_matrix",
    "validate_protocol",
    "value_of",
]
