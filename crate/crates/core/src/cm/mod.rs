//! Cost-minimisation clearing algorithms.

pub mod bbtree;
pub mod common;
pub mod ibcqp;
pub mod ieqlp;
pub mod ieqp;

pub use common::{
    build_mc_qlp, clean_allocation, cm_objective_given_y, estimate_active_set, mc_value, tight_prices,
    ActiveEstimate, EstimateRule, FixedYSolution, McConstraints, McLayout,
};
pub use ieqlp::{run_ieqlp, run_ieqlp_on, slice_center, IeqLpResult, IeqLpSettings, YStart};
pub use ibcqp::{
    alpha_beta, build_stack_curve, build_stack_curves, build_sub_cqp, recover_x, recover_zone, run_ibcqp,
    run_ibcqp_from, stack_objective, IbCqpSettings, StackSegment, ZonalStackCurve,
};
pub use ieqp::{build_mcqp, mcqp_center, run_ieqp_on, run_ieqp_wr, IeQpResult, IeQpSettings, McQpForm};
pub use bbtree::{
    cnq, lpvy, mccormick_lb, relative_gap, rns_select, run_bbtree, write_node_csv, BBNode, BbResult, BbSettings,
    BbTraceRow, LeafInfo, NodeBounds, SmallNodeBound, NodeRecord, NodeStatus, RnsRule,
};
