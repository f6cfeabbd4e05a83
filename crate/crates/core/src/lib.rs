//! Plug-and-play proximal gradient descent with exact denoiser oracles and
//! per-instance certification of its convergence bounds.
//!
//! The library is organised around one idea: when the image prior is a finite
//! Gaussian mixture, the MMSE denoiser for additive white Gaussian noise has a
//! closed form (Tweedie's identity applied to the smoothed mixture), and so do
//! its residual, Jacobian, inverse and the nonconvex potential `phi` it is the
//! proximal operator of. That turns every quantity appearing in the descent
//! and convergence analysis of PnP-PGD — objective values `F = lambda*f + phi`,
//! gradients, per-iteration proximal suboptimality `eps_k`, the gradient
//! residual `delta_k` — into something that can be *measured* instead of
//! assumed, and the convergence bounds into inequalities that can be checked
//! instance by instance.
//!
//! Module map:
//!
//! - [`priors`]: Gaussian mixture calculus — density, smoothing, score,
//!   sampling, group symmetrisation.
//! - [`groups`]: finite affine-isometric group actions with exact (uniform
//!   Haar) averaging, plus density invariance checks.
//! - [`fidelity`]: data-fidelity terms (least squares and the smooth nonconvex
//!   Welsch loss) with gradients and Lipschitz constants.
//! - [`denoisers`]: the denoiser calculus — exact MMSE denoisers, synthetic
//!   linear denoisers, relaxation, controlled bias injection, fixed-point
//!   inversion, and the potential `phi` with its gradient.
//! - [`equivariance`]: group-averaged denoiser wrappers and the exact
//!   squared-bias variance decomposition.
//! - [`solver`]: the PGD / PnP-PGD / equivariant PnP-PGD iterations with full
//!   trace instrumentation.
//! - [`certify`]: turns traces into certificates for the convergence bounds,
//!   error-schedule summability, and the strong convexity of the proximal
//!   subproblem.
//!
//! All numerics are generic over the scalar type through [`Real`]; concrete
//! `f64` (and `f32`) aliases are exported at the crate root. The certification
//! tolerances quoted throughout the documentation assume `f64`.

use std::fmt;

pub mod certify;
pub mod denoisers;
pub mod equivariance;
pub mod fidelity;
pub mod groups;
pub mod numerics;
pub mod priors;
pub mod solver;

/// Scalar type the whole crate is generic over: `f32` or `f64`.
///
/// `nalgebra::RealField` supplies the field operations and elementary
/// functions; the `num-traits` conversions let the crate state its pinned
/// `f64` tolerances and constants once and convert them into `T`.
pub trait Real:
    nalgebra::RealField + num_traits::FromPrimitive + num_traits::ToPrimitive + Copy
{
}

impl<T> Real for T where
    T: nalgebra::RealField + num_traits::FromPrimitive + num_traits::ToPrimitive + Copy
{
}

/// Converts a pinned `f64` constant into the working scalar type.
pub(crate) fn cvt<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must be representable in the scalar type")
}

/// A structural-validation tolerance: the pinned `f64` value, widened when the
/// working scalar type is too coarse to resolve it (e.g. `f32`).
pub(crate) fn scaled_tol<T: Real>(pinned: f64) -> T {
    cvt::<T>(pinned).max(T::default_epsilon() * cvt::<T>(100.0))
}

/// CSV float formatting, 17 significant digits.
pub(crate) fn fmt_float<T: Real>(x: T) -> String {
    format!("{:.16e}", x.to_f64().unwrap_or(f64::NAN))
}

/// Errors shared by every module.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("not a valid group action: {reason}")]
    NotAGroup { reason: String },

    #[error(
        "fixed-point inversion did not converge within {iterations} iterations \
         (last residual {residual:.3e}); the point may lie outside the denoiser's \
         image or the residual may not be contractive"
    )]
    InversionNotConverged { iterations: usize, residual: f64 },

    #[error("iterates diverged at iteration {iteration} (|x| = {norm:.3e})")]
    IterateDiverged { iteration: usize, norm: f64 },

    #[error("density is not invariant under group element {element} (violation {violation:.3e})")]
    NotInvariant { element: usize, violation: f64 },

    #[error("at solver iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {reason}")]
    InvalidInput { reason: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl fmt::Display) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.to_string(),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub use denoisers::{BiasKind, BiasModel, Denoiser};
pub use equivariance::{bias_decompose, check_equivariance, wrap_equivariant, BiasDecomposition};
pub use fidelity::Fidelity;
pub use groups::{check_invariance, GroupAction, GroupElement};
pub use priors::GmmPrior;
pub use solver::{epnp_pgd_run, pgd_exact_run, pnp_pgd_run, ProblemSpec, SolverTrace};

// Concrete scalar instantiations. Library code stays generic; applications
// (and the CLI) work in double precision.
pub type GmmPrior64 = priors::GmmPrior<f64>;
pub type GroupAction64 = groups::GroupAction<f64>;
pub type Fidelity64 = fidelity::Fidelity<f64>;
pub type Denoiser64 = denoisers::Denoiser<f64>;
pub type BiasModel64 = denoisers::BiasModel<f64>;
pub type ProblemSpec64 = solver::ProblemSpec<f64>;
pub type SolverTrace64 = solver::SolverTrace<f64>;
pub type CertificateReport64 = certify::CertificateReport<f64>;

pub type GmmPrior32 = priors::GmmPrior<f32>;
pub type GroupAction32 = groups::GroupAction<f32>;
pub type Fidelity32 = fidelity::Fidelity<f32>;
pub type Denoiser32 = denoisers::Denoiser<f32>;
