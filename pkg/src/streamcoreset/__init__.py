"""Movement-based coresets for constrained clustering, offline and streaming."""

from .assignment import Assignment, assign_exact_matrix, optimal_assignment, wcost
from .constraints import (
    CannotLink,
    Chromatic,
    ConstraintFamily,
    EnumerationCapError,
    Explicit,
    InfeasibleError,
    LDiversity,
    LowerBounds,
    MustLink,
    Outliers,
    PerColorCaps,
    Unconstrained,
    UpperBounds,
    encode_cannot_link,
    encode_chromatic,
    encode_explicit,
    encode_l_diversity,
    encode_lower_bounds,
    encode_must_link,
    encode_outliers,
    encode_per_color_caps,
    encode_unconstrained,
    encode_upper_bounds,
    family_from_text,
)
from .coreset import Coreset, MovementCertificate, bicriteria_seed, build_movement_coreset, verify_certificate
from .geometry import (
    MetricConfig,
    PointSet,
    assignment_cost,
    clustering_cost,
    expand,
    spread,
    weighted_mean,
)
from .oracle import OracleBudget, brute_force_constrained_opt, brute_force_unconstrained_opt
from .solver import (
    InabaParams,
    SolveResult,
    candidate_centers,
    inaba_sample,
    ptas_solve,
    solve_with_transfer,
)
from .stream import StreamConfig, StreamState, merge, process_stream, reduce

__version__ = "0.1.0"
