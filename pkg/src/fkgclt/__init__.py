"""Numerical checks of the information-theoretic CLT for FKG (positively associated) systems."""
from .inequalities import (
    DecompositionReport,
    JointSmoothedDensity,
    Quad2DSpec,
    ThetaSeminorm,
    delta,
    factorization_bounds,
    fishdecomp_residual,
    joint_scores,
    joint_smooth,
    m_function,
    moment_bound_audit,
    product_term_audit,
    score_of_sum_check,
    theorem_gap,
    theta_seminorm,
)
from .infotheory import (
    gaussian_distances,
    info_functionals,
    relative_entropy_debruijn,
    relative_entropy_direct,
)
from .lattice import (
    BoxSpec,
    CovarianceProfile,
    LatticeSample,
    ModelSpec,
    SampleSet,
    box_sums,
    covariance_profile,
    quadrant_dependence,
    sample_system,
)
from .quadrature import QuadratureSpec
from .smoothing import SmoothedDensity, TailProfile, evaluate, fisher, rescale, smooth, tail_profile

__version__ = "0.1.0"
