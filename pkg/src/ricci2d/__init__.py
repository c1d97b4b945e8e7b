"""Two-dimensional Ricci flow in conformal-factor form."""

from .exact import (
    BigBang,
    ExactFlow,
    ExpandingHyperbolic,
    FlatStatic,
    ShrinkingSphere,
    TopologyTag,
    eval_exact,
    maximal_time,
    pde_residual,
)
from .geometry import (
    Chart,
    ConformalField,
    HyperbolicModel,
    deviation_norm,
    gauss_curvature,
    metric_order,
    volume,
)
from .solver import (
    DirichletBarrier,
    DirichletExact,
    DirichletFrozen,
    FlowState,
    Scheme,
    StepControl,
    StepRefused,
    Trajectory,
    evolve,
    evolve_normalized,
    exhaustion_solve,
    plane_solve,
    step,
)

__version__ = "0.1.0"
