"""Dynamic user equilibrium solver built on a fixed-point state operator.

The library computes ODE trajectories driven by square-integrable controls
via Picard iteration with contraction certificates, differentiates them in
the control, evaluates path travel delays on road networks, and solves the
resulting equilibrium problem by projection onto the flow-conservation
feasible set.
"""

__version__ = "0.1.0"

from .delay import (
    ArrivalPenalty,
    DelayField,
    INSTANTANEOUS,
    PathFlowProfile,
    WHOLE_LINK,
    compute_delays,
    effective_delay,
    effective_delay_profile,
    free_flow_delay,
    uniform_profile,
)
from .equilibrium import (
    Certificate,
    EquilibriumReport,
    FeasibleSet,
    SolverConfig,
    certify,
    cumulative_state,
    cumulative_state_system,
    cumulative_state_variation,
    min_effective_costs,
    project,
    solve_due,
    vi_gap,
)
from .errors import (
    CapabilityError,
    ControlBoxWarning,
    DelayModelError,
    DivergedError,
    DueSolveError,
    FifoViolationError,
    GridMismatchError,
    InputError,
    NoConvergenceError,
)
from .function_space import (
    PIECEWISE_CONSTANT,
    PIECEWISE_LINEAR,
    SampledFunction,
    TimeGrid,
    cumulative_integral,
    inner_product,
    l2_norm,
    sup_norm,
    weighted_norm,
)
from .network import (
    Link,
    NetworkSpec,
    OdPair,
    Path,
    load_network,
    network_to_dict,
    parse_network,
    path_incidence,
    save_network,
    validate,
)
from .scenario import ScenarioConfig, load_scenario, parse_scenario
from .sensitivity import (
    FundamentalMatrix,
    SensitivityResult,
    finite_difference_gateaux,
    fundamental_matrix,
    solve_variational,
    variation_via_fundamental,
)
from .state_operator import (
    OdeSystem,
    PicardReport,
    TerminalCondition,
    aposteriori_bound,
    apply_picard_map,
    continuity_probe,
    picard_solve,
    probe_declared_bounds,
    terminal_residual,
)
