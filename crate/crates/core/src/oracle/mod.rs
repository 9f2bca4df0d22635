//! Exact computations on small finite POMDPs and numeric checks of the
//! counterfactual-error bounds and the neighborhood sampling estimator.

mod distance;
mod exact;
mod lemma;
mod pomdp;
mod prop1;
mod theorems;

pub use distance::{tv_distance, w1_distance_1d};
pub use exact::{
    belief_value, counterfactual_tables, delta_exact, horizon_for_slack, mdp_value, mdp_value_linear,
    observation_marginal, predict, push_through_adversary, reachable_pairs, se_update, tree_values,
    uniform_prior_roots, value_slack, Bounded, CounterfactualTables, MdpValue, DEFAULT_TREE_CAP, VALUE_RESIDUAL,
};
pub use lemma::{
    hoeffding_band, lemma_suite, quadrature, verify_sampling_lemma, AnalyticPair, LemmaCheck, LemmaReport,
    LEMMA_DELTA, LEMMA_EPS,
};
pub use pomdp::{
    random_instance, random_line_instance, shift_chain_instance, ExactBelief, FinitePomdp, MAX_ACTIONS,
    MAX_STATES, ROW_TOL,
};
pub use prop1::{
    delta_star, delta_star_enumerate, evaluate_proxy_policy, random_proxy, verify_delta_star, DeltaStar,
    Enumeration, ObservationProxy, Prop1Check, DELTA_STAR_RESIDUAL,
};
pub use theorems::{
    adversary_grid, check_theorem1, check_theorem2, lipschitz_constant, stress_theorem1, verify_theorem1,
    verify_theorem2, xi_tv, xi_w1, Counterexample, InstanceCheck, SuiteConfig, TheoremReport,
};
