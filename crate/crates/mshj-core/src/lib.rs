//! Coordinate-level Hamilton-Jacobi theory for first-order classical field
//! theories: residual evaluation for the Lagrangian and Hamiltonian HJ
//! systems, Legendre transforms, solution verification on grids, and field
//! reconstruction.

pub mod equivalence;
pub mod error;
pub mod expr;
pub mod ham_residuals;
pub mod jet_core;
pub mod lag_residuals;
pub mod legendre;
mod linalg;
pub mod models;
pub mod reconstruction;

pub use equivalence::{
    complete_solution_check, complete_solution_check_with, equivalence_report,
    pullback_section, pushforward_jetfield, CompleteSolutionFamily, CompleteSolutionReport,
    CompleteSolutionSettings, EquivalenceReport, EquivalenceVerdict, FamilyCandidate,
    FamilySide, TransportConsistency,
};
pub use error::Error;
pub use expr::{derive, eval, parse, Binding, DeriveOrder, Derivatives, ExprAst, ExprError};
pub use jet_core::{
    grid_points, grid_report, grid_report_with, hessian, regularity_check, Axis, Chart,
    ChartPoint, ErrorPolicy, ExtendedMomentumPoint, FamilySpec, FamilyStats, FieldTheorySpec,
    GridSpec, JetPoint, RegularityReport, ResidualOp, ResidualReport, RestrictedMomentumPoint,
    Slot,
};
pub use ham_residuals::{
    classic_hj_residual, gen_ham_hj_residual, ham_closedness_residual, hdw_residual,
    integrability_residual_ham, HamClassicSuite, HamClosedness, HamCoefficients,
    HamGeneralizedSuite, HamIntegrability, HamIntegrabilityOp, HamStandardSuite, HdwOp,
    MomentumSection, SectionDerivs,
};
pub use lag_residuals::{
    el_coefficient_residual, gen_lag_hj_residual, integrability_residual_lag,
    lag_generating_residual, lag_isotropy_residual, ElCoefficientOp, GeneratingForm, JetField,
    JetFieldDerivs, LagClassicSuite, LagCoefficients, LagGeneralizedSuite, LagIntegrability,
    LagIntegrabilityOp, LagIsotropy, LagStandardSuite,
};
pub use models::{builtin, ModelBundle, ModelParams, NamedFamily, NamedSolution, QuadraticParams};
pub use legendre::{
    extended_legendre, hamiltonian, inverse_legendre, restricted_legendre, HamiltonianSpec,
    InitialGuess, LegendreSource, NewtonSettings,
};
pub use reconstruction::{
    el_section_residual, holonomy_residual, holonomy_residual_with, integrate_distribution,
    path_independence_check, FdOrder, FieldResidual, PathIndependenceReport, SectionTrace,
    TraceMeta, BLOWUP_CAP,
};
