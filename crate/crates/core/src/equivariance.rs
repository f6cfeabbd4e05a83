//! Group-averaged denoisers and the exact bias variance decomposition.
//!
//! Wrapping a denoiser `D` with a finite group `G` produces
//! `D~(v) = (1/|G|) Σ_g T_g^{-1} D(T_g v)`. If the target denoiser is built
//! from a `G`-invariant prior it is already equivariant and the wrapper is a
//! no-op; for a biased denoiser `D + E` the wrapper averages the pulled-back
//! bias `V_x(g) = a_g^T E(T_g x)`, and the squared norm of that average
//! decomposes exactly over a finite group:
//!
//! ```text
//! |E~(x)|^2 = E_g[|E(T_g x)|^2] - Var_g(V_x)
//! ```
//!
//! The variance term is the quantity equivariant averaging removes; it is
//! strictly positive exactly when the bias field is anisotropic under `G`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::denoisers::{AveragingMode, Denoiser};
use crate::groups::GroupAction;
use crate::{cvt, Error, Real, Result};

const EQUIVARIANCE_SAMPLE_SEED: u64 = 0xe9_417a4e;

/// Exact finite-group decomposition of squared denoiser bias at a point.
#[derive(Debug, Clone, Serialize)]
pub struct BiasDecomposition<T: Real> {
    /// `|E~(x)|^2`: squared bias of the group-averaged denoiser.
    pub mean_sq_bias: T,
    /// `E_g[|E(T_g x)|^2]`: group-averaged squared bias of the raw denoiser.
    pub avg_sq_bias: T,
    /// `Var_g(T_g^{-1} E(T_g x))`: the reduction achieved by averaging.
    pub variance_gain: T,
}

/// Wraps a denoiser in the group average `(1/|G|) Σ_g T_g^{-1} D(T_g ·)`.
pub fn wrap_equivariant<T: Real>(
    denoiser: Denoiser<T>,
    group: GroupAction<T>,
    mode: AveragingMode,
) -> Result<Denoiser<T>> {
    Denoiser::equivariant(denoiser, group, mode)
}

/// Outcome of a pointwise equivariance check.
#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport<T: Real> {
    pub max_violation: T,
    pub pass: bool,
    pub worst_element: usize,
}

/// Checks `|T_g^{-1} D(T_g x) - D(x)|` over sampled points and all group
/// elements. Points are drawn from the denoiser's smoothed prior when it has
/// one, otherwise from a standard normal.
pub fn check_equivariance<T: Real>(
    denoiser: &Denoiser<T>,
    group: &GroupAction<T>,
    samples: usize,
    tol: T,
) -> Result<EquivarianceReport<T>> {
    if samples == 0 {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    if group.dim() != denoiser.dim() {
        return Err(Error::DimensionMismatch {
            expected: denoiser.dim(),
            got: group.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(EQUIVARIANCE_SAMPLE_SEED);
    let points: Vec<DVector<T>> = match denoiser.prior() {
        Some(prior) => prior
            .smooth(denoiser.sigma())?
            .sample_with_rng(&mut rng, samples)?,
        None => (0..samples)
            .map(|_| {
                DVector::from_fn(denoiser.dim(), |_, _| {
                    cvt::<T>(rand::Rng::sample::<f64, _>(&mut rng, StandardNormal))
                })
            })
            .collect(),
    };
    let mut max_violation = T::zero();
    let mut worst_element = group.identity_index();
    for x in &points {
        let base = denoiser.apply(x)?;
        for (gi, g) in group.elements().iter().enumerate() {
            let pulled = g.apply_inverse(&denoiser.apply(&g.apply(x)?)?)?;
            let violation = (pulled - &base).norm();
            if violation > max_violation {
                max_violation = violation;
                worst_element = gi;
            }
        }
    }
    Ok(EquivarianceReport {
        max_violation,
        pass: max_violation <= tol,
        worst_element,
    })
}

/// Evaluates the bias field `E = D_hat - D_target` around the group orbit of
/// `x` and returns its exact variance decomposition.
pub fn bias_decompose<T: Real>(
    d_hat: &Denoiser<T>,
    d_target: &Denoiser<T>,
    group: &GroupAction<T>,
    x: &DVector<T>,
) -> Result<BiasDecomposition<T>> {
    let pulled = pulled_back_biases(d_hat, d_target, group, x)?;
    let share = group.weight();
    let mut mean = DVector::<T>::zeros(x.len());
    let mut avg_sq = T::zero();
    for v in &pulled {
        mean += v;
        // |a^T E| = |E| for orthogonal a, so the pulled-back norm is the raw
        // bias norm.
        avg_sq += v.norm_squared();
    }
    mean *= share;
    avg_sq *= share;
    let mut variance = T::zero();
    for v in &pulled {
        variance += (v - &mean).norm_squared();
    }
    variance *= share;
    Ok(BiasDecomposition {
        mean_sq_bias: mean.norm_squared(),
        avg_sq_bias: avg_sq,
        variance_gain: variance,
    })
}

/// `max_g |V_x(g) - V_x(identity)|`: a witness that the bias field is
/// anisotropic under the group (zero for isotropic bias).
pub fn anisotropy_witness<T: Real>(
    d_hat: &Denoiser<T>,
    d_target: &Denoiser<T>,
    group: &GroupAction<T>,
    x: &DVector<T>,
) -> Result<T> {
    let pulled = pulled_back_biases(d_hat, d_target, group, x)?;
    let reference = &pulled[group.identity_index()];
    let mut witness = T::zero();
    for v in &pulled {
        witness = witness.max((v - reference).norm());
    }
    Ok(witness)
}

fn pulled_back_biases<T: Real>(
    d_hat: &Denoiser<T>,
    d_target: &Denoiser<T>,
    group: &GroupAction<T>,
    x: &DVector<T>,
) -> Result<Vec<DVector<T>>> {
    if d_hat.dim() != d_target.dim() {
        return Err(Error::DimensionMismatch {
            expected: d_target.dim(),
            got: d_hat.dim(),
        });
    }
    if group.dim() != d_target.dim() {
        return Err(Error::DimensionMismatch {
            expected: d_target.dim(),
            got: group.dim(),
        });
    }
    group
        .elements()
        .iter()
        .map(|g| {
            let moved = g.apply(x)?;
            let bias = d_hat.apply(&moved)? - d_target.apply(&moved)?;
            g.pullback_vector(&bias)
        })
        .collect()
}
