//! Compile ODE models into two-slice dynamic Bayesian networks with an
//! embedded Euler transition, and re-estimate their parameters from sparse
//! evidence with a bootstrap particle filter.

// `!(a < b)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dbn;
pub mod error;
pub mod evidence;
pub mod filter;
pub mod integrate;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod trajectory;

pub use dbn::{compile_dbn, observation_logpdf, transition, DbnTemplate, NoiseConfig, SliceState};
pub use error::{Error, ErrorKind, Result};
pub use evidence::{
    load_evidence, sample_evidence, EvidenceRecord, EvidenceStream, SamplingSchedule,
};
pub use filter::{
    ess, init_particles, posterior_summary, run_filter, systematic_resample, FilterConfig,
    FilterResult, ParticleEnsemble,
};
pub use integrate::{euler_step, integrate, GridSpec, Method, ModelInputs};
pub use metrics::{compute_metrics, MetricReport};
pub use model::{parse_model, rhs, ModelSpec};
pub use trajectory::{resample_trajectory, Trajectory};
