"""Moment-method toolkit for partial null-controllability of coupled systems.

The package works in spectral coordinates of a block-triangular system
x' = A x + b u on X = Y x Z and answers three questions: what is the
eigen-structure of A, is the family of moment kernels strongly minimal, and
which least-norm control drives the Y component to zero at time t1.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AmbiguousOverlap,
    DimensionMismatch,
    DuplicateEigenvalueWithinBranch,
    EigensolverFailure,
    IllConditionedWarning,
    NearResonance,
    NonPositiveHorizon,
    ParseError,
    SingularGram,
    ToleranceNotReached,
    ValidationError,
    ZeroCoefficient,
)
from .expsum import ExponentialSum, inner_product, l2_norm, quadrature_inner_product, scale_add  # noqa: E402
from .minimality import (  # noqa: E402
    biorthogonal_norms,
    dirichlet_abscissa,
    gap_certificate,
    gram_matrix,
    kernel_family,
    series_convergence_diagnostic,
    strong_minimality_diagnostic,
)
from .moment import moment_targets, residual_report, synthesize_control  # noqa: E402
from .problem import emit_problem, parse_problem, preset_problem  # noqa: E402
from .simulate import propagate, semigroup_consistency_check, verify_partial_null  # noqa: E402
from .spectrum import (  # noqa: E402
    b_coefficients,
    biorthogonality_check,
    build_coupled_model,
    classify_spectra,
    eigenstructure,
    eigenstructure_disjoint,
    eigenstructure_overlap,
)
