use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::team::PbpOutcome;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("diffusion matrix is singular at t = {t}, x = {x:?}")]
    SingularDiffusion { t: f64, x: Vec<f64> },

    #[error(
        "|σ⁻¹f| = {ratio} exceeds the declared bound {bound} at t = {t}, x = {x:?}, u = {u:?}"
    )]
    UnboundedDriftRatio {
        t: f64,
        x: Vec<f64>,
        u: Vec<f64>,
        ratio: f64,
        bound: f64,
    },

    #[error("action box of agent {agent} is empty or unbounded")]
    EmptyActionBox { agent: usize },

    #[error("evaluator `{what}` returned different values on identical inputs")]
    ImpureEvaluator { what: &'static str },

    #[error("invalid problem: {0}")]
    InvalidSpec(String),

    #[error("agent {agent}: delay {delay} from agent {from} is not a positive whole number of grid steps")]
    DelayNotOnGrid {
        agent: usize,
        from: usize,
        delay: f64,
    },

    #[error("agent {agent} lists itself as a signaling source")]
    SelfSignaling { agent: usize },

    #[error("observation history of agent {source_agent} too short: step {time} requested, {available} available")]
    HistoryTooShort {
        source_agent: usize,
        time: usize,
        available: usize,
    },

    #[error("policy of agent {agent} at step {step} expects {expected} features, information structure provides {provided}")]
    PolicyNotMeasurable {
        agent: usize,
        step: usize,
        expected: usize,
        provided: usize,
    },

    #[error("covariance G Gᵀ of step {step} is not positive definite")]
    NonPDCovariance { step: usize },

    #[error("quadrature needs {dims} dimensions, cap is {cap}")]
    DimensionCapExceeded { dims: usize, cap: usize },

    #[error("regression design is rank deficient even after ridge regularization")]
    RankDeficientRegression,

    #[error("backward sweep did not reach a finite fixed point at step {step}")]
    NonConvergentFixedPoint { step: usize },

    #[error("state became non-finite on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("bundle was generated under the wrong measure: expected {expected}")]
    WrongMeasure { expected: &'static str },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("person-by-person iteration stopped before reaching the residual tolerance")]
    MaxCyclesExceeded { best: Box<PbpOutcome> },
}
