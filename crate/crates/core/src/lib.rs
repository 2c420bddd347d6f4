//! Variational Bayesian neural networks with a heat-equation residual
//! penalty, for forward field reconstruction and inverse identification of
//! boundary fluxes, convection coefficients and thermal diffusivity.

pub mod bayes;
pub mod error;
pub mod inference;
pub mod physics;
pub mod reference;
pub mod scaling;
pub mod surrogate;
pub mod trainer;

pub use bayes::{
    GaussianVariationalPosterior, KlMode, KlWeight, LikelihoodSpec, Observation, ObservationTag,
    PriorSpec,
};
pub use error::{Error, Result};
pub use inference::{AlphaSummary, IdentifiedBoundary, MetricReport};
pub use physics::{BoundaryCondition, BoundaryKind, Diffusivity, Facet, LossBreakdown, PdeKind, PdeSpec};
pub use reference::{AnalyticCase, DomainSpec, FieldSnapshot, Material, Measurement};
pub use scaling::{AxisMap, NormalizationMap};
pub use surrogate::{Activation, Architecture, NetworkEval, ParameterVector, PointSet, SpaceTimePoint};
pub use trainer::{AdamConfig, AlphaMode, TrainingConfig, TrainingTrace};
