//! Numerical laboratory for thermostat flows on unit sphere bundles.
//!
//! The crate provides model Riemannian manifolds (flat and conformal tori,
//! and a genus-2 hyperbolic octagon quotient), external force fields on them,
//! the associated isokinetic ("thermostat") flows on the unit sphere bundle,
//! and the measurement pipeline built on top: Lyapunov spectra, entropy
//! production, dynamical variances, curvature-type hyperbolicity criteria,
//! and a verification suite for the operator identities that connect them.

pub mod conditions;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod lyapunov;
pub mod scenarios;
pub mod semibasic;
pub mod statistics;
pub mod tensor;

pub mod geometry;

pub use conditions::{
    criterion_values, deformed_sectional, evaluate_criterion, scan_criterion, CriterionReport,
    CriterionTag, CriterionValues, NEGATIVITY_MARGIN,
};
pub use dynamics::{FlowSystem, IntegratorConfig, PhasePoint};
pub use lyapunov::{
    entropy_production, lyapunov_spectrum, EntropyEstimate, LyapunovConfig, LyapunovReport,
};
pub use scenarios::{
    describe_scenario, identity_suite, run_scenario, sample_start, spectrum_sum_drift,
    CheckResult, IdentityRow, ScenarioOutcome, Table, DEFAULT_SEED, IDENTITY_EXACT_FLOOR,
    IDENTITY_NAMES, SCENARIOS,
};
pub use semibasic::{
    alignment_rate_residual, curvature_term_gap, energy_identity_residual, exchange_residual,
    forced_energy_identity_residual, gauss_legendre, gradient_transport_residual,
    quadrature_divergence, verify_commutation, CommutationReport, DivergenceResiduals,
    SemibasicOps,
};
pub use statistics::{
    autocorrelation, autocovariance, batch_means_variance, dynamical_variance, fit_entropy_curve,
    observable_variance, CurveFit, CurvePoint, VarianceEstimate, VarianceRun,
};
pub use error::{Error, Result};
pub use fields::{
    closed_nonexact_form, field_from_potential, lambda_from_section, octagon_band_form,
    ExternalField, FieldConfig, GeneralizedField, HolomorphicSection, LorentzForce, OneForm,
    PotentialSpec,
};
pub use geometry::{
    christoffel, christoffel_partials, gauss_curvature, riemann, riemann_lowered,
    sectional_curvature, ChartPoint, ManifoldModel, TwoPlane,
};
