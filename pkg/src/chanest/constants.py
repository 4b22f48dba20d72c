"""Numerical tolerances shared across the package.

These values are part of the public contract: tests import them rather than
repeating literals.
"""

# numerics
ORTHONORMAL_TOL = 1e-10
SVD_RECON_TOL = 1e-9
HERMITIAN_TOL = 1e-10
EIG_RESIDUAL_TOL = 1e-9

# solver
DEFAULT_TOL = 1e-6
DEFAULT_MAX_SWEEPS = 5000
REFERENCE_TOL = 1e-12
DESCENT_SLACK = 1e-12
SCHEDULE_DECAY = 0.85
SCHEDULE_LENGTH = 40
PATH_TOL = 1e-4

# support detection: relative to the largest block Frobenius norm
SUPPORT_REL_THRESHOLD = 1e-3

# recovery
AOA_GRID_STEP_DEG = 0.5
RANK_RATIO = 0.2
REFINE_FACTOR = 10
REFINE_HALF_WIDTH_CELLS = 1
REFINE_MAX_SWEEPS = 500

# baselines
DEFAULT_SUBBAND = 8
