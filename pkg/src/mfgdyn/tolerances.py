"""Named numerical tolerances.

Every threshold used across the package lives here so it can be audited and
overridden in one place; functions take these as keyword defaults.
"""

# conservative-generator row sums
ROW_SUM = 1e-10

# distribution sum-to-one / negativity clamp
SIMPLEX_SUM = 1e-9
SIMPLEX_NEG = 1e-9

# projection preconditions (integrator step sanity)
PROJECT_SUM = 1e-6
PROJECT_NEG = 1e-6

# best-response optimality band (absolute, on qceiling values)
OPT = 1e-9

# policy-iteration strict improvement
IMPROVE = 1e-12

# mixed-strategy row-stochasticity
MIXED_ROW_SUM = 1e-12

# integrator
RK_RTOL = 1e-9
RK_ATOL = 1e-9
CONVERGED_FIELD = 1e-10   # ||f||_1 below this means stationary
EVENT_TIME = 1e-10        # switching-time bisection width
FIELD_SUM = 1e-12         # conservation of evaluated fields

# equilibrium search
STATIONARY_RESIDUAL = 1e-8
ROOT_DEDUP = 1e-6
NEAR_MISS_FACTOR = 10.0

# stability checkers
ZERO_EIG = 1e-9           # |Re lambda| band treated as zero
ALIGN_ANGLE = 1e-6        # radians, null eigenvector vs equilibrium
GRAD_MIN_NORM = 1e-7      # nondegenerate switching-surface gradient
WEAK_SIGN_SLACK = 1e-9    # slack for weak inequalities at sampled points
FD_STEP = 1e-6            # central-difference step for gradients
CONSTANT_Q = 1e-10        # sampling tolerance for m-independence
