"""Heterogeneous-agent economies under pluggable price expectations.

The package splits into a shared stochastic kernel (stoch), learning
rules and the belief contract (learning), two small laboratories
(cobweb, rl, bistable), the production economy (economy, beliefs), the
outer simulation loop with its fixed-point driver and diagnostics
(simulate), and artifact plumbing with a scenario CLI (artifacts, cli).
"""

__version__ = "0.1.0"

from .beliefs import (
    ConstantPriceBelief,
    MomentBelief,
    Observation,
    PricePlmBelief,
    build_forecast_grid,
)
from .bistable import DoubleWellSpec, hopping_stats, linearized_comparison, simulate_em, stationary_density
from .cobweb import (
    AdaptiveCobwebBelief,
    CobwebParams,
    CobwebPath,
    RationalCobwebBelief,
    RlsCobwebBelief,
    SampleAverageCobwebBelief,
    run_cobweb,
    t_map,
    t_map_fixed_point,
)
from .economy import (
    BellmanConvergenceError,
    EconomyParams,
    ForecastAtoms,
    ForecastGrid,
    GridSpec,
    Histogram,
    SteadyState,
    TransitionOperator,
    ValueTable,
    aggregate,
    aiyagari_steady_state,
    apply_lottery,
    capital_demand,
    firm_prices,
    policy_at,
    solve_bellman,
    stationary_histogram,
)
from .learning import (
    BeliefModel,
    CoefficientMonitor,
    RlsState,
    StepSizeSchedule,
    adaptive_closed_form,
    adaptive_update,
    check_robbins_monro,
    rls_update,
    sa_update,
    sample_average_update,
)
from .rl import (
    FiniteMdp,
    FiniteMrp,
    PriceBinner,
    QTable,
    q_learn,
    solve_mdp_exact,
    solve_mrp_exact,
    td0_predict,
)
from .simulate import (
    ClampRateError,
    FixedPointReport,
    OscillationError,
    SimRecord,
    SimResult,
    criterion3a_distance,
    ks_fixed_point,
    regime_switch_run,
    run_temporary_equilibrium,
    sce_diagnostic,
)
from .stoch import MarkovChain, RngStream, discretize_ar1, find_root, simulate_chain, stationary_distribution
