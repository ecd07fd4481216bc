//! Numerical toolkit for exterior calculus under flows: invariant
//! differential forms, Hamiltonian structure checks, Hamilton-Jacobi solving
//! by characteristics, eikonal geometry, and the classical fluid transport
//! theorems, plus a declarative scenario runner emitting drift reports.

pub mod chart;
pub mod error;
pub mod flow;
pub mod hamilton;
pub mod invariance;
pub mod forms;
pub mod chains;
pub mod quadrature;

pub use chart::{ChartMap, Point, ScalarField, VectorField};
pub use error::{Error, Result};
pub use flow::{
    extend_to_autonomous, flow_jacobian, integrate_flow, FlowJacobian, FlowMap,
    IntegratorSettings, JacobianMethod, Trajectory,
};
pub use chains::{integrate_over_chain, stokes_residual, transport_chain, Chain, QuadratureSpec, SingularCube};
pub use invariance::{check_pointwise_invariance, check_transport_invariance, CheckSettings, DriftSeries, InvarianceReport, ResidualStats, TransportKind};
pub use hamilton::{canonical_omega, canonical_two_form, poincare_cartan_form, zeta_form, CanonicalPermutation, Hamiltonian, PhasePoint, SectionSpec};
pub use forms::{lie_derivative, DifferentialForm, LieMode, MultiIndex};
