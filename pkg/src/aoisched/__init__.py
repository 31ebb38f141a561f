"""Age-of-information scheduling: Whittle indices, MDP oracles, random access
and deadline admission on a single shared channel."""

from .access import (
    AccessConfig,
    ChannelPhase,
    aloha_step,
    apply_arrivals,
    ipra_step,
    run_access,
    staggered_states,
    tune_ipra,
)
from .core import (
    Network,
    PolicyError,
    RunMetrics,
    TerminalSpec,
    TerminalState,
    run_slots,
    symmetric_specs,
)
from .deadline import (
    DeadlineSpec,
    InfeasibleDeadline,
    PeriodicSchedule,
    admit,
    build_schedule,
    lambert_w_neg1,
    max_interval,
    simulate_schedule,
    stationary_cdf,
)
from .indices import (
    DecoupledSolution,
    index_bernoulli,
    index_periodic,
    index_unreliable,
    solve_decoupled,
    whittle_threshold_policy,
)
from .mdp import ConvergenceError, indifference_charge, rvi_decoupled, rvi_full
from .policies import (
    FixedSchedulePolicy,
    NoBufferPolicy,
    OptimalPolicy,
    RROnePolicy,
    WhittlePolicy,
    make_policy,
)

__version__ = "0.1.0"
