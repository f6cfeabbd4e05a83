//! Data-fidelity terms `f` with gradients and Lipschitz constants.
//!
//! Two kinds cover the theory's scope: linear-Gaussian least squares
//! `f(x) = |Ax - y|^2 / 2`, and the smooth, bounded, *nonconvex* Welsch loss
//! `f(x) = Σ_j ρ((Ax - y)_j)` with `ρ(r) = c^2 (1 - exp(-r^2 / 2c^2))`.
//! Both are bounded below by zero and have `L_f`-Lipschitz gradients with an
//! analytic `L_f`, so every assumption the convergence analysis places on the
//! fidelity is discharged by construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::numerics::power_iteration_sq_norm;
use crate::{cvt, Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Fidelity<T: Real> {
    LeastSquares {
        a: DMatrix<T>,
        y: DVector<T>,
        lipschitz_grad: T,
    },
    Welsch {
        a: DMatrix<T>,
        y: DVector<T>,
        c: T,
        lipschitz_grad: T,
    },
}

impl<T: Real> Fidelity<T> {
    pub fn least_squares(a: DMatrix<T>, y: DVector<T>) -> Result<Self> {
        check_shapes(&a, &y)?;
        let lipschitz_grad = power_iteration_sq_norm(&a, cvt::<T>(1e-10));
        Ok(Fidelity::LeastSquares {
            a,
            y,
            lipschitz_grad,
        })
    }

    /// `|ρ''| <= 1` for the Welsch kernel, so `L_f = |A|_2^2` bounds the
    /// Hessian norm `|A^T diag(ρ'') A|_2` everywhere.
    pub fn welsch(a: DMatrix<T>, y: DVector<T>, c: T) -> Result<Self> {
        check_shapes(&a, &y)?;
        if c <= T::zero() {
            return Err(Error::invalid("c", "Welsch scale must be positive"));
        }
        let lipschitz_grad = power_iteration_sq_norm(&a, cvt::<T>(1e-10));
        Ok(Fidelity::Welsch {
            a,
            y,
            c,
            lipschitz_grad,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Fidelity::LeastSquares { a, .. } | Fidelity::Welsch { a, .. } => a.ncols(),
        }
    }

    fn residual(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let (a, y) = match self {
            Fidelity::LeastSquares { a, y, .. } | Fidelity::Welsch { a, y, .. } => (a, y),
        };
        if x.len() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.ncols(),
                got: x.len(),
            });
        }
        Ok(a * x - y)
    }

    pub fn value(&self, x: &DVector<T>) -> Result<T> {
        let r = self.residual(x)?;
        Ok(match self {
            Fidelity::LeastSquares { .. } => cvt::<T>(0.5) * r.norm_squared(),
            Fidelity::Welsch { c, .. } => {
                let c2 = *c * *c;
                r.iter()
                    .map(|&rj| c2 * (T::one() - (-rj * rj / (cvt::<T>(2.0) * c2)).exp()))
                    .fold(T::zero(), |acc, v| acc + v)
            }
        })
    }

    pub fn grad(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let r = self.residual(x)?;
        match self {
            Fidelity::LeastSquares { a, .. } => Ok(a.tr_mul(&r)),
            Fidelity::Welsch { a, c, .. } => {
                let c2 = *c * *c;
                let weighted = DVector::from_fn(r.len(), |j, _| {
                    r[j] * (-r[j] * r[j] / (cvt::<T>(2.0) * c2)).exp()
                });
                Ok(a.tr_mul(&weighted))
            }
        }
    }

    /// Cached `L_f` (spectral norm squared of `A`, computed by power
    /// iteration to relative 1e-10 at construction).
    pub fn lipschitz_grad(&self) -> T {
        match self {
            Fidelity::LeastSquares { lipschitz_grad, .. }
            | Fidelity::Welsch { lipschitz_grad, .. } => *lipschitz_grad,
        }
    }

    /// Both kinds are bounded below by zero.
    pub fn lower_bound(&self) -> T {
        T::zero()
    }

    pub fn to_doc(&self) -> FidelityDoc<T> {
        let matrix_rows = |a: &DMatrix<T>| {
            (0..a.nrows())
                .map(|r| a.row(r).iter().copied().collect())
                .collect()
        };
        match self {
            Fidelity::LeastSquares { a, y, .. } => FidelityDoc {
                kind: "least_squares".into(),
                a: matrix_rows(a),
                y: y.iter().copied().collect(),
                c: None,
            },
            Fidelity::Welsch { a, y, c, .. } => FidelityDoc {
                kind: "welsch".into(),
                a: matrix_rows(a),
                y: y.iter().copied().collect(),
                c: Some(*c),
            },
        }
    }

    pub fn from_doc(doc: &FidelityDoc<T>) -> Result<Self> {
        let rows = doc.a.len();
        if rows == 0 || doc.a.iter().any(|r| r.len() != doc.a[0].len()) {
            return Err(Error::invalid("A", "matrix rows are empty or ragged"));
        }
        let cols = doc.a[0].len();
        let a = DMatrix::from_fn(rows, cols, |r, c| doc.a[r][c]);
        let y = DVector::from_vec(doc.y.clone());
        match doc.kind.as_str() {
            "least_squares" => Self::least_squares(a, y),
            "welsch" => {
                let c = doc
                    .c
                    .ok_or_else(|| Error::invalid("c", "welsch fidelity needs a scale"))?;
                Self::welsch(a, y, c)
            }
            other => Err(Error::invalid(
                "kind",
                format!("unknown fidelity kind `{other}`"),
            )),
        }
    }
}

fn check_shapes<T: Real>(a: &DMatrix<T>, y: &DVector<T>) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::invalid("A", "matrix must be non-empty"));
    }
    if y.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: y.len(),
        });
    }
    Ok(())
}

/// JSON form: `{"kind": "...", "A": [[...]], "y": [...], "c": c}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityDoc<T> {
    pub kind: String,
    #[serde(rename = "A")]
    pub a: Vec<Vec<T>>,
    pub y: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls_1d(y: f64) -> Fidelity<f64> {
        Fidelity::least_squares(DMatrix::identity(1, 1), DVector::from_vec(vec![y])).unwrap()
    }

    #[test]
    fn least_squares_value_at_exact_fit_is_zero() {
        let f = Fidelity::least_squares(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(f.value(&DVector::from_vec(vec![1.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn least_squares_value_and_grad_in_one_dimension() {
        let f = ls_1d(3.0);
        let x = DVector::from_vec(vec![1.0]);
        assert_eq!(f.value(&x).unwrap(), 2.0);
        assert_eq!(f.grad(&x).unwrap()[0], -2.0);
    }

    #[test]
    fn welsch_saturates_at_m_c_squared() {
        let f = Fidelity::<f64>::welsch(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            1.0,
        )
        .unwrap();
        assert_eq!(f.value(&DVector::zeros(2)).unwrap(), 0.0);
        let far = f.value(&DVector::from_vec(vec![100.0, 100.0])).unwrap();
        assert!((far - 2.0).abs() < 1e-10);
    }

    #[test]
    fn welsch_gradient_is_zero_at_perfect_fit() {
        let f = Fidelity::welsch(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.5, -1.0]),
            0.7,
        )
        .unwrap();
        let g = f.grad(&DVector::from_vec(vec![0.5, -1.0])).unwrap();
        assert_eq!(g.abs().max(), 0.0);
    }

    #[test]
    fn lipschitz_constant_is_the_squared_top_singular_value() {
        let f = ls_1d(0.0);
        assert!((f.lipschitz_grad() - 1.0).abs() < 1e-10);
        let d = Fidelity::<f64>::least_squares(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            DVector::zeros(2),
        )
        .unwrap();
        assert!((d.lipschitz_grad() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = DMatrix::<f64>::from_row_slice(3, 2, &[1.0, 0.3, -0.5, 1.2, 0.8, 0.1]);
        let y = DVector::from_vec(vec![0.4, -1.0, 0.2]);
        for f in [
            Fidelity::least_squares(a.clone(), y.clone()).unwrap(),
            Fidelity::welsch(a, y, 0.8).unwrap(),
        ] {
            let x = DVector::from_vec(vec![0.7, -0.4]);
            let g = f.grad(&x).unwrap();
            let h = 1e-6;
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (f.value(&xp).unwrap() - f.value(&xm).unwrap()) / (2.0 * h);
                let rel = (g[i] - fd).abs() / g[i].abs().max(1e-8);
                assert!(rel < 1e-6, "component {i}: analytic {} vs fd {fd}", g[i]);
            }
        }
    }

    #[test]
    fn rejects_shape_mismatches() {
        assert!(Fidelity::<f64>::least_squares(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
        assert!(ls_1d(0.0).value(&DVector::zeros(2)).is_err());
        assert!(
            Fidelity::<f64>::welsch(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).is_err()
        );
    }
}
