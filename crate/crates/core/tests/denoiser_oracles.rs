//! Independent oracles for the denoiser calculus: quadrature for posterior
//! means, finite differences for Jacobians and potential gradients, a brute
//! grid and an independent descent for the proximal identity, and the
//! Gauss–Legendre line integrator for the closed-form potentials.

mod common;

use common::{random_gmm, random_point};
use nalgebra::{DMatrix, DVector};
use pnpcert::denoisers::{BiasKind, BiasModel, Denoiser};
use pnpcert::numerics::line_integral_from_origin;
use pnpcert::priors::GmmPrior;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn two_mode_prior_1d() -> GmmPrior<f64> {
    GmmPrior::new(
        1,
        vec![
            (0.5, DVector::from_vec(vec![2.0]), DMatrix::identity(1, 1)),
            (0.5, DVector::from_vec(vec![-2.0]), DMatrix::identity(1, 1)),
        ],
    )
    .unwrap()
}

/// Posterior mean by Simpson quadrature of `x p(x) G_sigma(v-x)`, written out
/// from the definition with no shared code.
fn posterior_mean_by_quadrature(prior: &GmmPrior<f64>, sigma: f64, v: f64) -> f64 {
    let density = |x: f64| -> f64 {
        prior
            .components()
            .iter()
            .map(|c| {
                let var = c.cov()[(0, 0)];
                c.weight() * (-(x - c.mean()[0]).powi(2) / (2.0 * var)).exp()
                    / (2.0 * std::f64::consts::PI * var).sqrt()
            })
            .sum()
    };
    let kernel =
        |x: f64| (-(v - x).powi(2) / (2.0 * sigma * sigma)).exp();
    let (lo, hi, n) = (-14.0f64, 14.0f64, 28_000usize);
    let h = (hi - lo) / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = density(x) * kernel(x);
        num += w * x * f;
        den += w * f;
    }
    num / den
}

#[test]
fn mmse_matches_the_quadrature_posterior_mean() {
    let prior = two_mode_prior_1d();
    let d = Denoiser::mmse(prior.clone(), 1.0).unwrap();
    for v in [-3.0, -1.0, 0.5, 2.0, 4.0] {
        let exact = d.apply(&DVector::from_vec(vec![v])).unwrap()[0];
        let quad = posterior_mean_by_quadrature(&prior, 1.0, v);
        assert!(
            (exact - quad).abs() <= 1e-8,
            "v = {v}: tweedie {exact} vs quadrature {quad}"
        );
    }
    // Frozen value at v = 2: E[x|v] = 2 / (1 + e^{-4}).
    let frozen = 1.964_027_580_075_817_f64;
    let at_two = d.apply(&DVector::from_vec(vec![2.0])).unwrap()[0];
    assert!((at_two - frozen).abs() < 1e-12);
}

#[test]
fn residual_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let prior = random_gmm(&mut rng, 3, 3);
    let d = Denoiser::mmse(prior, 0.7).unwrap();
    let h = 1e-5;
    for _ in 0..10 {
        let v = random_point(&mut rng, 3, 1.5);
        let jac = d.jacobian_residual(&v).unwrap();
        for j in 0..3 {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[j] += h;
            vm[j] -= h;
            let col = (d.residual(&vp).unwrap() - d.residual(&vm).unwrap()) / (2.0 * h);
            for i in 0..3 {
                assert!(
                    (jac[(i, j)] - col[i]).abs() <= 1e-4,
                    "entry ({i},{j}): {} vs {}",
                    jac[(i, j)],
                    col[i]
                );
            }
        }
    }
}

#[test]
fn lipschitz_estimate_dominates_the_two_mode_halving_floor() {
    // The two-mode mixture at sigma = 1 is at least as curved as a single
    // Gaussian of the same width, so its residual constant reaches 1/2.
    let d = Denoiser::mmse(two_mode_prior_1d(), 1.0).unwrap();
    assert!(d.lipschitz_residual() >= 0.5 - 1e-12);
    assert!(d.lipschitz_residual() < 1.0);
}

#[test]
fn inversion_error_respects_the_contraction_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let prior = random_gmm(&mut rng, 2, 2);
    let d = common::contractive_mmse(prior, 0.8);
    let l = d.lipschitz_residual();
    assert!(l < 1.0);
    let tol = 1e-10;
    for _ in 0..20 {
        let z0 = random_point(&mut rng, 2, 2.0);
        let x = d.apply(&z0).unwrap();
        let z = d.invert(&x, tol).unwrap();
        assert!(
            (z - &z0).norm() <= tol / (1.0 - l),
            "inverse drifted beyond the contraction bound"
        );
    }
}

#[test]
fn potential_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let configs: Vec<Denoiser<f64>> = vec![
        Denoiser::mmse(two_mode_prior_1d(), 1.0).unwrap(),
        common::contractive_mmse(random_gmm(&mut rng, 2, 2), 0.8),
        common::contractive_mmse(random_gmm(&mut rng, 4, 3), 0.6),
    ];
    let (tol, h) = (1e-12, 1e-5);
    for d in &configs {
        let dim = d.dim();
        for _ in 0..100 {
            // Stay in the image: evaluate at denoised points.
            let x = d.apply(&random_point(&mut rng, dim, 1.5)).unwrap();
            let grad = d.grad_potential(&x, tol).unwrap();
            for i in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (d.potential(&xp, tol).unwrap() - d.potential(&xm, tol).unwrap())
                    / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(1e-4);
                assert!(rel <= 1e-5, "dim {dim} coord {i}: {} vs {fd}", grad[i]);
            }
        }
    }
}

#[test]
fn proximal_identity_against_a_brute_force_grid_in_1d() {
    // D(v) = v/2 has phi(u) = u^2/2; at v = 2 the prox of phi is 1.
    let d = Denoiser::<f64>::linear(DMatrix::identity(1, 1) * 0.5, DVector::zeros(1)).unwrap();
    let v = 2.0;
    let mut best_u = f64::NAN;
    let mut best_val = f64::INFINITY;
    let mut u = 0.0;
    while u <= 2.0 {
        let h = 0.5 * (u - v) * (u - v) + d.potential(&DVector::from_vec(vec![u]), 1e-12).unwrap();
        if h < best_val {
            best_val = h;
            best_u = u;
        }
        u += 1e-4;
    }
    let applied = d.apply(&DVector::from_vec(vec![v])).unwrap()[0];
    assert!((best_u - applied).abs() <= 2e-4, "grid argmin {best_u} vs apply {applied}");
    assert!((applied - 1.0).abs() < 1e-14);
}

#[test]
fn proximal_identity_against_an_independent_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = common::contractive_mmse(random_gmm(&mut rng, 2, 2), 0.8);
    let l = d.lipschitz_residual();
    assert!(l < 1.0);
    let tol = 1e-10;
    for trial in 0..20 {
        let v = random_point(&mut rng, 2, 1.5);
        // Minimise H(u) = |u - v|^2/2 + phi(u) by gradient descent with the
        // smoothness-safe step (1 - L); H is strongly convex so this converges
        // to the unique minimiser without ever calling apply().
        let mut u = v.clone();
        let step = 1.0 - l;
        for _ in 0..10_000 {
            let grad = &u - &v + d.grad_potential(&u, tol).unwrap();
            if grad.norm() <= 1e-8 {
                break;
            }
            u -= grad * step;
        }
        let applied = d.apply(&v).unwrap();
        assert!(
            (&u - &applied).norm() <= 1e-6,
            "trial {trial}: descent {u:?} vs apply {applied:?}"
        );
    }
}

#[test]
fn potential_gradient_difference_quotients_respect_the_lipschitz_certificate() {
    let d = Denoiser::<f64>::linear(DMatrix::identity(2, 2) * 0.5, DVector::zeros(2)).unwrap();
    let l = d.lipschitz_residual();
    let cap = l / (1.0 - l) * (1.0 + 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let x = random_point(&mut rng, 2, 3.0);
        let y = random_point(&mut rng, 2, 3.0);
        if (&x - &y).norm() < 1e-9 {
            continue;
        }
        let gx = d.grad_potential(&x, 1e-13).unwrap();
        let gy = d.grad_potential(&y, 1e-13).unwrap();
        let quotient = (gx - gy).norm() / (&x - &y).norm();
        assert!(quotient <= cap, "quotient {quotient} exceeds {cap}");
    }
}

#[test]
fn closed_form_potentials_match_the_line_integral_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mmse = Denoiser::mmse(random_gmm(&mut rng, 3, 3), 0.9).unwrap();
    let relaxed = mmse.relax(0.7).unwrap();
    let biased = mmse
        .perturb(BiasModel {
            kind: BiasKind::Constant(DVector::from_vec(vec![0.3, -0.1, 0.2])),
            scale: 0.5,
        })
        .unwrap();
    for d in [&mmse, &relaxed, &biased] {
        for _ in 0..10 {
            let z = random_point(&mut rng, 3, 2.0);
            let closed = d.g_value(&z).unwrap();
            let integral =
                line_integral_from_origin(|p| d.residual(p), &z, 1e-11).unwrap();
            assert!(
                (closed - integral).abs() <= 1e-9 * (1.0 + closed.abs()),
                "closed form {closed} vs line integral {integral}"
            );
        }
    }
}

#[test]
fn equivariant_wrapper_potential_also_matches_the_line_integral() {
    let group = pnpcert::groups::GroupAction::sign_flip(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let prior = random_gmm(&mut rng, 2, 2).symmetrize(&group).unwrap();
    let base = Denoiser::mmse(prior, 0.8).unwrap();
    let biased = base
        .perturb(BiasModel {
            kind: BiasKind::Constant(DVector::from_vec(vec![1.0, 0.0])),
            scale: 0.05,
        })
        .unwrap();
    let wrapped = pnpcert::equivariance::wrap_equivariant(
        biased,
        group,
        pnpcert::denoisers::AveragingMode::Exact,
    )
    .unwrap();
    for _ in 0..5 {
        let z = random_point(&mut rng, 2, 1.5);
        let closed = wrapped.g_value(&z).unwrap();
        let integral = line_integral_from_origin(|p| wrapped.residual(p), &z, 1e-11).unwrap();
        assert!((closed - integral).abs() <= 1e-9 * (1.0 + closed.abs()));
    }
}

#[test]
fn denoiser_jacobian_is_positive_definite_on_the_probe_set() {
    // Gradient-step structure: J_D = I - J_res with |J_res| <= L < 1.
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let d = Denoiser::mmse(random_gmm(&mut rng, 2, 3), 0.8).unwrap();
    let l = d.lipschitz_residual();
    for p in d.default_probes().unwrap().iter().take(64) {
        let j_res = d.jacobian_residual(p).unwrap();
        let j_d = DMatrix::<f64>::identity(2, 2) - j_res;
        let eig = j_d.symmetric_eigen();
        for &lambda in eig.eigenvalues.iter() {
            assert!(lambda >= 1.0 - l - 1e-9, "eigenvalue {lambda} below 1 - L");
        }
    }
}

#[test]
fn empty_probe_sets_are_rejected() {
    let d = Denoiser::mmse(two_mode_prior_1d(), 1.0).unwrap();
    assert!(d.estimate_lipschitz(&[]).is_err());
}

#[test]
fn non_symmetric_linear_bias_has_no_potential() {
    let d = Denoiser::<f64>::linear(DMatrix::identity(2, 2) * 0.5, DVector::zeros(2)).unwrap();
    let skew = DMatrix::from_row_slice(2, 2, &[0.0, 0.1, -0.1, 0.0]);
    let biased = d
        .perturb(BiasModel {
            kind: BiasKind::Linear(skew),
            scale: 1.0,
        })
        .unwrap();
    assert!(biased.g_value(&DVector::from_vec(vec![1.0, 1.0])).is_err());
    // The denoiser itself still evaluates and inverts.
    assert!(biased.apply(&DVector::from_vec(vec![1.0, 1.0])).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Round trip apply . invert = id within tol on the image, and the reverse
    // within tol / (1 - L).
    #[test]
    fn inversion_round_trips(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = common::contractive_mmse(random_gmm(&mut rng, 2, 2), 0.9);
        prop_assume!(d.lipschitz_residual() < 1.0);
        let tol = 1e-11;
        let z0 = random_point(&mut rng, 2, 1.5);
        let x = d.apply(&z0).unwrap();
        let z = d.invert(&x, tol).unwrap();
        prop_assert!((d.apply(&z).unwrap() - &x).norm() <= tol * (1.0 + 1e-6));
        prop_assert!((z - z0).norm() <= tol / (1.0 - d.lipschitz_residual()));
    }
}
