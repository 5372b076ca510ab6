//! Switching-system analysis of tabular Q-learning: exact solution of finite
//! MDPs, the affine switching families of the error recursion, joint spectral
//! radius brackets, Lyapunov certificates and simulation of the error dynamics
//! against every comparison system.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod lyapunov;
pub mod mdp;
pub mod switching;

pub use certify::{certify, Certification, CertificationSummary, CertifyOptions};
pub use dynamics::{run, RunConfig, RunMode, StepRecord, Trace};
pub use error::{Error, Result};
pub use lyapunov::{LyapunovCertificate, CertificateKind};
pub use mdp::{
    solve_q_star, DeterministicPolicy, Layout, Mdp, MdpFile, OptimalSolution, Policy, QVector, StochasticPolicy,
};
pub use switching::{JsrBracket, ModeMatrix, NormKind, SwitchingFamily};

pub use nalgebra::{DMatrix, DVector};
