//! Deterministic instance generators for the acceptance suite.
//!
//! Criterion batches draw every parameter from a ChaCha stream keyed by the
//! instance index, so the suite is reproducible run to run.

use nalgebra::{DMatrix, DVector};
use pnpcert::denoisers::{BiasKind, BiasModel, Denoiser};
use pnpcert::fidelity::Fidelity;
use pnpcert::priors::GmmPrior;
use pnpcert::solver::ProblemSpec;
use pnpcert::{Denoiser64, Fidelity64, GmmPrior64, GroupAction64, ProblemSpec64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[allow(dead_code)]
pub const DIMS: [usize; 4] = [1, 2, 4, 8];

#[allow(dead_code)]
pub fn rng_for(master: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(master.wrapping_add(index as u64))
}

#[allow(dead_code)]
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    m.qr().q()
}

#[allow(dead_code)]
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..hi)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Matrix with a controlled singular spectrum in `[ratio * top, top]`.
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
pub fn random_gmm<R: Rng>(
    rng: &mut R,
    dim: usize,
    components: usize,
    mean_spread: f64,
    eig_lo: f64,
    eig_hi: f64,
) -> GmmPrior64 {
    let mut weights: Vec<f64> = (0..components).map(|_| rng.random_range(0.3..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let comps = weights
        .into_iter()
        .map(|w| {
            let mean =
                DVector::from_fn(dim, |_, _| mean_spread * rng.sample::<f64, _>(StandardNormal));
            (w, mean, random_spd(rng, dim, eig_lo, eig_hi))
        })
        .collect();
    GmmPrior::new(dim, comps).unwrap()
}

/// MMSE denoiser relaxed below unit residual Lipschitz constant when needed.
#[allow(dead_code)]
pub fn contractive_target(prior: GmmPrior64, sigma: f64) -> Denoiser64 {
    let d = Denoiser::mmse(prior, sigma).unwrap();
    let l = d.lipschitz_residual();
    if l >= 0.92 {
        d.relax(0.85 / l).unwrap()
    } else {
        d
    }
}

#[allow(dead_code)]
pub fn group_for(dim: usize, pick: usize) -> GroupAction64 {
    match dim {
        1 => GroupAction64::sign_flip(1).unwrap(),
        2 => match pick % 2 {
            0 => GroupAction64::sign_flip(2).unwrap(),
            _ => GroupAction64::coordinate_permutations(2).unwrap(),
        },
        4 => match pick % 3 {
            0 => GroupAction64::sign_flip(4).unwrap(),
            1 => GroupAction64::cyclic_shift(4).unwrap(),
            _ => GroupAction64::dihedral_image(2, 2).unwrap(),
        },
        _ => match pick % 2 {
            0 => GroupAction64::sign_flip(dim).unwrap(),
            _ => GroupAction64::cyclic_shift(dim).unwrap(),
        },
    }
}

#[allow(dead_code)]
pub fn bias_for<R: Rng>(
    rng: &mut R,
    dim: usize,
    pick: usize,
    raw_prior: &GmmPrior64,
) -> BiasModel<f64> {
    match pick % 3 {
        0 => {
            let mut c = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            c /= c.norm();
            BiasModel {
                kind: BiasKind::Constant(c),
                scale: rng.random_range(0.02..0.05),
            }
        }
        1 => {
            let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
            let norm = pnpcert::numerics::spectral_norm(&g);
            BiasModel {
                kind: BiasKind::Linear(g / norm),
                scale: 0.02,
            }
        }
        _ => {
            let comps = raw_prior
                .components()
                .iter()
                .map(|c| {
                    let jitter =
                        DVector::from_fn(dim, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
                    (c.weight(), c.mean() + jitter, c.cov().clone())
                })
                .collect();
            BiasModel {
                kind: BiasKind::WrongPrior(GmmPrior::new(dim, comps).unwrap()),
                scale: rng.random_range(0.02..0.05),
            }
        }
    }
}

pub struct MismatchedInstance {
    pub spec: ProblemSpec64,
    pub target: Denoiser64,
}

/// A randomized mismatched-run instance: symmetrised mixture prior, least
/// squares or Welsch fidelity with `lambda * L_f <= 0.9`, and a small bias of
/// rotating kind.
#[allow(dead_code)]
pub fn mismatched_instance(master: u64, index: usize, iterations: usize) -> MismatchedInstance {
    let mut rng = rng_for(master, index);
    let dim = DIMS[index % DIMS.len()];
    let group = group_for(dim, index / DIMS.len());
    let raw = random_gmm(&mut rng, dim, 2, 1.2, 0.5, 2.0);
    let prior = raw.symmetrize(&group).unwrap();
    let sigma = rng.random_range(0.4..1.0);
    let target = contractive_target(prior.clone(), sigma);

    let top = rng.random_range(0.6..1.4);
    let a = random_operator(&mut rng, dim, top, 0.3);
    let x_true = prior.sample(master ^ index as u64, 1).unwrap().remove(0);
    let noise = DVector::from_fn(dim, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
    let y = &a * x_true + noise;
    let fidelity: Fidelity64 = if index % 2 == 0 {
        Fidelity::least_squares(a, y).unwrap()
    } else {
        Fidelity::welsch(a, y, rng.random_range(0.6..1.5)).unwrap()
    };
    let lambda = rng.random_range(0.3..0.9) / fidelity.lipschitz_grad();

    let bias = bias_for(&mut rng, dim, index, &raw);
    let mismatched = target.perturb(bias).unwrap();

    let x0 = prior
        .smooth(sigma)
        .unwrap()
        .sample(master.wrapping_add(1000 + index as u64), 1)
        .unwrap()
        .remove(0);

    MismatchedInstance {
        spec: ProblemSpec {
            fidelity,
            target: target.clone(),
            run: mismatched,
            lambda,
            sigma,
            x0,
            iterations,
        },
        target,
    }
}

/// A matched-run instance tuned for slow linear convergence: single-Gaussian
/// prior (exact linear denoiser), small noise level, and a small
/// `lambda * L_f`, so the gradient decay is still visible between horizons
/// t = 500 and t = 1000.
#[allow(dead_code)]
pub fn matched_instance(master: u64, index: usize, iterations: usize) -> ProblemSpec64 {
    let mut rng = rng_for(master, index);
    let dim = DIMS[index % DIMS.len()];
    let mean = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let prior = GmmPrior::gaussian(mean, random_spd(&mut rng, dim, 1.5, 3.0)).unwrap();
    let sigma = rng.random_range(0.12..0.2);
    let target = Denoiser::mmse(prior.clone(), sigma).unwrap();
    assert!(target.lipschitz_residual() < 1.0);

    let top = rng.random_range(0.6..1.4);
    let a = random_operator(&mut rng, dim, top, 0.3);
    let x_true = prior.sample(master ^ index as u64, 1).unwrap().remove(0);
    let y = &a * x_true;
    let fidelity = Fidelity::least_squares(a, y).unwrap();
    let lambda = rng.random_range(0.01..0.03) / fidelity.lipschitz_grad();

    let x0 = prior
        .smooth(sigma)
        .unwrap()
        .sample(master.wrapping_add(2000 + index as u64), 1)
        .unwrap()
        .remove(0);

    ProblemSpec {
        fidelity,
        run: target.clone(),
        target,
        lambda,
        sigma,
        x0,
        iterations,
    }
}
