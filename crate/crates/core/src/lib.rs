//! Interval reachability for implicit and feedforward neural networks.
//!
//! The crate evaluates sound box over-approximations (inclusion functions) of
//! network input-output maps through a mixed-monotone embedded system solved
//! by contraction iteration, compares them against interval bound propagation,
//! certifies classification robustness against infinity-norm perturbations,
//! and trains small certifiably robust implicit networks on synthetic data.
//!
//! Entry points:
//! - [`wellposedness_certificate`] / [`solve_fixed_point`] /
//!   [`solve_embedded_fixed_point`] for the contraction machinery,
//! - [`reach_inn`], [`reach_ibp_ffnn`], [`reach_ibp_weight_tied`] for
//!   inclusion functions,
//! - [`certify()`] and [`certified_accuracy`] for robustness certification,
//! - [`train()`] for desk-scale robust training,
//! - [`cli`] for the command-line surface.

// Index-based loops are clearer than iterator chains for the dense matrix
// kernels here; negated comparisons are deliberate so NaN fails validation.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod model_io;
pub mod network;
pub mod oracle;
pub mod reach;
pub mod solver;
pub mod train;

pub use certify::{
    build_specification, certified_accuracy, certify, inclusion_vs_lipschitz,
    lipschitz_upper_bound, margin_lower_bound, CertificationReport, SpecificationMatrix,
    WidthComparison,
};
pub use dataset::{generate_toy, LabeledDataset, ToyGenerator};
pub use error::{Error, Result};
pub use linalg::{
    perron_vector_abs, solve_linear, spectral_radius_abs, weighted_inf_norm,
    weighted_matrix_measure, Matrix, PositiveWeight,
};
pub use model_io::{load_model, model_from_json, model_to_json, save_model, NetworkModel};
pub use network::{
    apply_activation, ffnn_forward, ffnn_to_inn, weight_tied_forward, Activation,
    FeedforwardNetwork, ImplicitNetwork, Layer, WeightTiedNetwork,
};
pub use oracle::{empirical_lipschitz, sampled_tight_inclusion, SamplingPlan, SamplingStrategy};
pub use reach::{
    compare_ffnn_equal, compare_weight_tied_dominance, embedding_map, reach_ibp_ffnn,
    reach_ibp_weight_tied, reach_inn, Depth, DominanceComparison, FfnnComparison, InclusionResult,
    IntervalVector, ReachMethod,
};
pub use solver::{
    solve_embedded_fixed_point, solve_fixed_point, wellposedness_certificate, Alpha,
    EmbeddedFixedPoint, FixedPointResult, SolveDiagnostics, SolverConfig, WellposednessCertificate,
};
pub use train::{
    loss_gradient, project_measure_constraint, robust_loss, train, EpochRecord, GradientMode,
    LossBreakdown, ParameterGradient, TrainConfig, TrainOutcome,
};
