"""SGLD on synthetic non-convex problems with stability and PAC-Bayes generalization certificates."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("sgld-bounds")
except PackageNotFoundError:  # running from a source checkout without installation
    __version__ = "0.1.0"

from .certificates import (
    Certificate,
    GradSqEstimate,
    PacBayesConfig,
    all_certificates,
    ideal_bounds,
    k0,
    k1,
    pac_bayes_certificate,
    prior_sequence,
    stability_certificate,
)
from .langevin import (
    DivergenceError,
    SgldConfig,
    Trajectory,
    TrajectoryBatch,
    run,
    run_replicas,
)
from .problems import (
    DataPoint,
    Dataset,
    NeighborPair,
    ProblemInstance,
    make_problem,
    neighbor_of,
)
from .schedule import StepSchedule

__all__ = [
    "Certificate",
    "DataPoint",
    "Dataset",
    "DivergenceError",
    "GradSqEstimate",
    "NeighborPair",
    "PacBayesConfig",
    "ProblemInstance",
    "SgldConfig",
    "StepSchedule",
    "Trajectory",
    "TrajectoryBatch",
    "all_certificates",
    "ideal_bounds",
    "k0",
    "k1",
    "make_problem",
    "neighbor_of",
    "pac_bayes_certificate",
    "prior_sequence",
    "run",
    "run_replicas",
    "stability_certificate",
]
