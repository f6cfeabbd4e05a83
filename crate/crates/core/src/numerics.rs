//! Small numerical kernels shared across modules: stable log-sum-exp,
//! spectral norms, and an adaptive Gauss–Legendre line integrator.

use nalgebra::{DMatrix, DVector};

use crate::{cvt, Error, Real, Result};

/// `log(sum_i exp(v_i))` computed against the running maximum so that widely
/// separated magnitudes neither overflow nor collapse to `-inf`.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let mut max = values[0];
    for &v in &values[1..] {
        if v > max {
            max = v;
        }
    }
    if max == T::from_f64(f64::NEG_INFINITY).unwrap() {
        return max;
    }
    let mut sum = T::zero();
    for &v in values {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm_symmetric<T: Real>(m: &DMatrix<T>) -> T {
    let eig = m.clone().symmetric_eigen();
    let mut norm = T::zero();
    for &lambda in eig.eigenvalues.iter() {
        norm = norm.max(lambda.abs());
    }
    norm
}

/// Largest singular value of a general matrix.
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    let svd = m.clone().svd(false, false);
    let mut norm = T::zero();
    for &s in svd.singular_values.iter() {
        norm = norm.max(s);
    }
    norm
}

/// Squared spectral norm `|A|_2^2` by power iteration on `A^T A`, refined to
/// the requested relative tolerance.
///
/// The start vector is a fixed low-discrepancy sequence, so the estimate is
/// deterministic and, in the (measure-zero) event of starting orthogonal to
/// the leading eigenvector, rounding reintroduces a component of it.
pub fn power_iteration_sq_norm<T: Real>(a: &DMatrix<T>, rel_tol: T) -> T {
    let n = a.ncols();
    let mut v = DVector::<T>::from_fn(n, |i, _| {
        cvt::<T>(1.0 + ((i + 1) as f64 * 0.618_033_988_749_895).fract())
    });
    v /= v.norm();
    let mut lambda = T::zero();
    for _ in 0..50_000 {
        let w = a.tr_mul(&(a * &v));
        let norm_w = w.norm();
        if norm_w == T::zero() {
            return T::zero();
        }
        let lambda_new = v.dot(&w);
        v = w / norm_w;
        if (lambda_new - lambda).abs() <= rel_tol * lambda_new.abs() {
            return lambda_new;
        }
        lambda = lambda_new;
    }
    lambda
}

// 16-point Gauss–Legendre rule on [-1, 1]; positive abscissae and weights,
// tabulated beyond f64 resolution.
#[allow(clippy::excessive_precision)]
const GL16_NODES: [f64; 8] = [
    0.095_012_509_837_637_440_185,
    0.281_603_550_779_258_913_230,
    0.458_016_777_657_227_386_342,
    0.617_876_244_402_643_748_447,
    0.755_404_408_355_003_033_895,
    0.865_631_202_387_831_743_880,
    0.944_575_023_073_232_576_078,
    0.989_400_934_991_649_932_596,
];
#[allow(clippy::excessive_precision)]
const GL16_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_496_285,
    0.182_603_415_044_923_588_867,
    0.169_156_519_395_002_538_189,
    0.149_595_988_816_576_732_081,
    0.124_628_971_255_533_872_052,
    0.095_158_511_682_492_784_810,
    0.062_253_523_938_647_892_863,
    0.027_152_459_411_754_094_852,
];

/// Line integral `∫_0^1 <field(t·to), to> dt` of a vector field along the
/// segment from the origin to `to`, i.e. the potential difference of a
/// conservative field between `to` and `0`.
///
/// Composite 16-point Gauss–Legendre panels are doubled until two successive
/// refinements agree within `tol`.
pub fn line_integral_from_origin<T, F>(field: F, to: &DVector<T>, tol: T) -> Result<T>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
{
    let eval = |t: T| -> Result<T> {
        let point = to * t;
        Ok(field(&point)?.dot(to))
    };
    let composite = |panels: usize| -> Result<T> {
        let width = T::one() / cvt::<T>(panels as f64);
        let half = width / cvt::<T>(2.0);
        let mut total = T::zero();
        for p in 0..panels {
            let center = (cvt::<T>(p as f64) + cvt::<T>(0.5)) * width;
            for (&node, &weight) in GL16_NODES.iter().zip(GL16_WEIGHTS.iter()) {
                let (node, weight) = (cvt::<T>(node), cvt::<T>(weight));
                total += weight * half * (eval(center + half * node)? + eval(center - half * node)?);
            }
        }
        Ok(total)
    };

    let mut panels = 1;
    let mut estimate = composite(panels)?;
    for _ in 0..12 {
        panels *= 2;
        let refined = composite(panels)?;
        let delta = (refined - estimate).abs();
        estimate = refined;
        if delta <= tol {
            return Ok(estimate);
        }
    }
    Err(Error::invalid(
        "line_integral",
        format!(
            "quadrature did not stabilise to {:.1e} within {panels} panels",
            tol.to_f64().unwrap_or(f64::NAN)
        ),
    ))
}
