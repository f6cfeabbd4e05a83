//! Gaussian mixture priors with exact density calculus.
//!
//! A [`GmmPrior`] is a weighted mixture of full-covariance Gaussians on R^n.
//! The class is closed under Gaussian smoothing (convolution with isotropic
//! noise adds `sigma^2 I` to every covariance) and under affine-isometric
//! group symmetrisation, and its log-density, score, and score Hessian are
//! available in closed form. Those four facts make the mixture the ground
//! truth behind every denoiser in this crate.
//!
//! Responsibilities and densities are computed in log space throughout;
//! mixtures with far-apart components would underflow otherwise.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::groups::GroupAction;
use crate::numerics::log_sum_exp;
use crate::{cvt, scaled_tol, Error, Real, Result};

/// One mixture component with its cached factorisation.
#[derive(Debug, Clone)]
pub struct GmmComponent<T: Real> {
    weight: T,
    mean: DVector<T>,
    cov: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    precision: DMatrix<T>,
    /// `-(n ln 2π + ln det Σ) / 2`
    log_norm: T,
}

impl<T: Real> GmmComponent<T> {
    pub fn weight(&self) -> T {
        self.weight
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    pub(crate) fn precision(&self) -> &DMatrix<T> {
        &self.precision
    }

    fn log_density(&self, x: &DVector<T>) -> T {
        let centered = x - &self.mean;
        let solved = self.chol.solve(&centered);
        self.log_norm - cvt::<T>(0.5) * centered.dot(&solved)
    }
}

/// A weighted Gaussian mixture on R^n.
#[derive(Debug, Clone)]
pub struct GmmPrior<T: Real> {
    dim: usize,
    components: Vec<GmmComponent<T>>,
}

impl<T: Real> PartialEq for GmmPrior<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.components.len() == other.components.len()
            && self
                .components
                .iter()
                .zip(other.components.iter())
                .all(|(a, b)| a.weight == b.weight && a.mean == b.mean && a.cov == b.cov)
    }
}

impl<T: Real> GmmPrior<T> {
    /// Builds a mixture from `(weight, mean, covariance)` triples.
    ///
    /// Weights must be positive and sum to one within 1e-12; covariances must
    /// be symmetric within 1e-12 and positive definite (checked by Cholesky
    /// factorisation, which is cached for the repeated solves in density,
    /// score, and denoiser evaluations).
    pub fn new(dim: usize, components: Vec<(T, DVector<T>, DMatrix<T>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "dimension must be positive"));
        }
        if components.is_empty() {
            return Err(Error::invalid("components", "mixture needs a component"));
        }
        let mut weight_sum = T::zero();
        let mut built = Vec::with_capacity(components.len());
        for (i, (weight, mean, cov)) in components.into_iter().enumerate() {
            if weight <= T::zero() {
                return Err(Error::invalid(
                    "weight",
                    format!("component {i} has non-positive weight"),
                ));
            }
            weight_sum += weight;
            if mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: mean.len(),
                });
            }
            if cov.nrows() != dim || cov.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: cov.nrows(),
                });
            }
            let asym = (&cov - cov.transpose()).abs().max();
            if asym > scaled_tol::<T>(1e-12) {
                return Err(Error::invalid(
                    "covariance",
                    format!(
                        "component {i} covariance is not symmetric (|Σ - Σ^T| = {:.3e})",
                        asym.to_f64().unwrap_or(f64::NAN)
                    ),
                ));
            }
            let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
                Error::invalid(
                    "covariance",
                    format!("component {i} covariance is not positive definite"),
                )
            })?;
            let mut log_det = T::zero();
            let l = chol.l_dirty();
            for k in 0..dim {
                log_det += l[(k, k)].ln();
            }
            log_det *= cvt::<T>(2.0);
            let log_norm =
                -cvt::<T>(0.5) * (cvt::<T>(dim as f64) * (cvt::<T>(2.0) * T::pi()).ln() + log_det);
            let precision = chol.inverse();
            built.push(GmmComponent {
                weight,
                mean,
                cov,
                chol,
                precision,
                log_norm,
            });
        }
        if (weight_sum - T::one()).abs() > scaled_tol::<T>(1e-12) {
            return Err(Error::invalid(
                "weights",
                format!(
                    "weights sum to {} instead of 1",
                    weight_sum.to_f64().unwrap_or(f64::NAN)
                ),
            ));
        }
        Ok(GmmPrior {
            dim,
            components: built,
        })
    }

    /// A single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let dim = mean.len();
        Self::new(dim, vec![(T::one(), mean, cov)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GmmComponent<T>] {
        &self.components
    }

    fn check_point(&self, x: &DVector<T>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Per-component `log(w_i) + log N(x; mu_i, Sigma_i)`.
    fn weighted_log_densities(&self, x: &DVector<T>) -> Vec<T> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect()
    }

    /// `log p(x)`, evaluated with log-sum-exp over the components.
    pub fn log_density(&self, x: &DVector<T>) -> Result<T> {
        self.check_point(x)?;
        Ok(log_sum_exp(&self.weighted_log_densities(x)))
    }

    /// Posterior component responsibilities at `x`.
    pub fn responsibilities(&self, x: &DVector<T>) -> Result<Vec<T>> {
        self.check_point(x)?;
        let logs = self.weighted_log_densities(x);
        let total = log_sum_exp(&logs);
        Ok(logs.into_iter().map(|l| (l - total).exp()).collect())
    }

    /// Score `∇ log p(x) = Σ_i r_i(x) Σ_i^{-1} (mu_i - x)`.
    pub fn score(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let r = self.responsibilities(x)?;
        let mut score = DVector::<T>::zeros(self.dim);
        for (c, ri) in self.components.iter().zip(r) {
            let pulled = c.chol.solve(&(&c.mean - x));
            score += pulled * ri;
        }
        Ok(score)
    }

    /// Hessian of `log p` at `x`:
    /// `Σ_i r_i (u_i u_i^T - Σ_i^{-1}) - s s^T` with `u_i = Σ_i^{-1}(mu_i - x)`
    /// and `s = Σ_i r_i u_i` the score.
    pub fn log_density_hessian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        let r = self.responsibilities(x)?;
        let mut hess = DMatrix::<T>::zeros(self.dim, self.dim);
        let mut score = DVector::<T>::zeros(self.dim);
        for (c, ri) in self.components.iter().zip(r) {
            let u = c.chol.solve(&(&c.mean - x));
            hess += (&u * u.transpose() - c.precision()) * ri;
            score += u * ri;
        }
        hess -= &score * score.transpose();
        Ok(hess)
    }

    /// Exact Gaussian convolution: every covariance gains `sigma^2 I`, weights
    /// and means are unchanged.
    pub fn smooth(&self, sigma: T) -> Result<GmmPrior<T>> {
        if sigma <= T::zero() {
            return Err(Error::invalid("sigma", "noise level must be positive"));
        }
        let bump = DMatrix::<T>::identity(self.dim, self.dim) * (sigma * sigma);
        let comps = self
            .components
            .iter()
            .map(|c| (c.weight, c.mean.clone(), &c.cov + &bump))
            .collect();
        GmmPrior::new(self.dim, comps)
    }

    /// I.i.d. draws, deterministic for a fixed seed.
    pub fn sample(&self, seed: u64, count: usize) -> Result<Vec<DVector<T>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with_rng(&mut rng, count)
    }

    pub fn sample_with_rng<R: Rng>(&self, rng: &mut R, count: usize) -> Result<Vec<DVector<T>>> {
        if count == 0 {
            return Err(Error::invalid("count", "need at least one draw"));
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.components.len() - 1;
            for (i, c) in self.components.iter().enumerate() {
                acc += c.weight.to_f64().unwrap_or(0.0);
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let c = &self.components[pick];
            let noise = DVector::<T>::from_fn(self.dim, |_, _| {
                cvt::<T>(rng.sample::<f64, _>(StandardNormal))
            });
            out.push(&c.mean + c.chol.l_dirty().lower_triangle() * noise);
        }
        Ok(out)
    }

    /// Group closure: the returned mixture has one component per
    /// `(component, group element)` pair with weight `w_i / |G|`, mean
    /// `a mu_i + c`, and covariance `a Σ_i a^T`, so its density is exactly
    /// invariant under the group.
    pub fn symmetrize(&self, group: &GroupAction<T>) -> Result<GmmPrior<T>> {
        if group.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: group.dim(),
            });
        }
        let share = group.weight();
        let mut comps = Vec::with_capacity(self.components.len() * group.len());
        for g in group.elements() {
            for c in &self.components {
                let mean = g.apply(&c.mean)?;
                let cov = g.linear() * &c.cov * g.linear().transpose();
                // Symmetrise away the rounding from the congruence product.
                let cov = (&cov + cov.transpose()) * cvt::<T>(0.5);
                comps.push((c.weight * share, mean, cov));
            }
        }
        GmmPrior::new(self.dim, comps)
    }

    pub fn to_doc(&self) -> PriorDoc<T> {
        PriorDoc {
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| PriorComponentDoc {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    cov: (0..self.dim)
                        .map(|r| c.cov.row(r).iter().copied().collect())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &PriorDoc<T>) -> Result<Self> {
        let comps = doc
            .components
            .iter()
            .map(|c| {
                let mean = DVector::from_vec(c.mean.clone());
                let cov = DMatrix::from_fn(doc.dim, doc.dim, |r, s| {
                    c.cov
                        .get(r)
                        .and_then(|row| row.get(s))
                        .copied()
                        .unwrap_or_else(T::zero)
                });
                if c.cov.len() != doc.dim || c.cov.iter().any(|row| row.len() != doc.dim) {
                    return Err(Error::invalid("cov", "covariance rows do not match dim"));
                }
                Ok((c.weight, mean, cov))
            })
            .collect::<Result<Vec<_>>>()?;
        GmmPrior::new(doc.dim, comps)
    }
}

/// JSON document form:
/// `{"dim": n, "components": [{"weight": w, "mean": [...], "cov": [[...]]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorDoc<T> {
    pub dim: usize,
    pub components: Vec<PriorComponentDoc<T>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorComponentDoc<T> {
    pub weight: T,
    pub mean: Vec<T>,
    pub cov: Vec<Vec<T>>,
}
