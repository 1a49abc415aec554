//! The flow: pointwise right-hand sides, principal symbols and grid time stepping.

mod integrate;
mod lattice;
mod rhs;
mod symbol;

pub use integrate::{integrate_flow, integrate_flow_with, FlowOptions, FlowReport, MonitorRow, CFL_DEFAULT};
pub use lattice::{lattice_rhs, SiteRhs};
pub use rhs::{
    add_gauge_terms, assemble_terms, flow_rows, flow_rows_at, flow_terms, gauge_fields, lie_derivative, lie_parts,
    operator_a, operator_a_via_lie, operator_b, operator_b_manipulated, plus_theta_gauge_residual, rhs_from_traces,
    rhs_gauged, rhs_rows, rhs_unguaged, z_field, Background, FieldAt, FlowPoint, FlowRhs, FlowSettings, FlowTerms,
    GaugeFields, KappaFn, KappaInput, KappaSpec, TOL_KAPPA, TOL_RHS,
};
pub use symbol::{
    metric_operator, pairing, principal_symbol, project_j_variation, random_j_variation, random_metric_variation,
    symbol_rows, xi_norm_sq, SymbolOp, Variation, SYMBOL_EPS, TOL_SYMBOL,
};
