//! Shared generators for oracle tests: random well-conditioned mixtures.

use nalgebra::{DMatrix, DVector};
use pnpcert::priors::GmmPrior;
use rand::Rng;
use rand_distr::StandardNormal;

#[allow(dead_code)]
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    m.qr().q()
}

#[allow(dead_code)]
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, eig_lo: f64, eig_hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let eigs = DVector::<f64>::from_fn(n, |_, _| rng.random_range(eig_lo..eig_hi));
    let d = DMatrix::from_diagonal(&eigs);
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Matrix with singular values in `[ratio * top, top]`.
#[allow(dead_code)]
pub fn random_operator<R: Rng>(rng: &mut R, n: usize, top: f64, ratio: f64) -> DMatrix<f64> {
    let q1 = random_orthogonal(rng, n);
    let q2 = random_orthogonal(rng, n);
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| {
        if i == 0 {
            top
        } else {
            rng.random_range(ratio * top..top)
        }
    }));
    q1 * d * q2.transpose()
}

#[allow(dead_code)]
pub fn random_gmm<R: Rng>(rng: &mut R, dim: usize, components: usize) -> GmmPrior<f64> {
    let mut raw = Vec::with_capacity(components);
    let mut weights: Vec<f64> = (0..components).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    for &w in &weights {
        let mean = DVector::from_fn(dim, |_, _| 1.5 * rng.sample::<f64, _>(StandardNormal));
        let cov = random_spd(rng, dim, 0.5, 2.0);
        raw.push((w, mean, cov));
    }
    GmmPrior::new(dim, raw).unwrap()
}

#[allow(dead_code)]
pub fn random_point<R: Rng>(rng: &mut R, dim: usize, spread: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| spread * rng.sample::<f64, _>(StandardNormal))
}

/// MMSE denoiser of the prior, relaxed below unit residual Lipschitz constant
/// when the raw mixture curvature demands it.
#[allow(dead_code)]
pub fn contractive_mmse(prior: GmmPrior<f64>, sigma: f64) -> pnpcert::denoisers::Denoiser<f64> {
    let d = pnpcert::denoisers::Denoiser::mmse(prior, sigma).unwrap();
    let l = d.lipschitz_residual();
    if l >= 0.95 {
        d.relax(0.9 / l).unwrap()
    } else {
        d
    }
}
