//! Turns solver traces into per-instance certificates of the convergence
//! bounds.
//!
//! Each certificate compares the measured gradient statistics
//! `lhs_avg = (1/t) Σ_{k=1}^t |grad F(x_k)|^2` (and its minimum) against two
//! right-hand sides:
//!
//! - `rhs_paper`: the literal constants `16/(1-L_f)` (mismatched runs),
//!   `8/(1-L_f)` (exact runs) and `4/(1-L)` for the suboptimality term;
//! - `rhs_derived`: the constants that come out of retracing the descent
//!   argument with the step factor `lambda` retained, i.e.
//!   `4(1+lambda L_f)^2 / (1-lambda L_f)` and `2(1+lambda L_f)^2 /
//!   (1-lambda L_f)` respectively.
//!
//! The derived form is the one hard-asserted by the batch tooling: it is
//! well-defined whenever `lambda L_f < 1`, whereas the literal form becomes
//! negative or undefined for `L_f >= 1`. Both are always reported.
//!
//! `F*` enters every right-hand side as a lower estimate `f_star_lower`
//! computed by the solver (observed minimum and a potential floor, minus a
//! margin); underestimating the infimum only *loosens* the right-hand sides,
//! so a failed assertion is a genuine counterexample, never an estimation
//! artifact.

use std::io::{self, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::denoisers::Denoiser;
use crate::solver::SolverTrace;
use crate::{cvt, fmt_float, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum TheoremTag {
    T1,
    T2,
    T3,
}

impl std::fmt::Display for TheoremTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TheoremTag::T1 => "T1",
            TheoremTag::T2 => "T2",
            TheoremTag::T3 => "T3",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsUsed<T: Real> {
    pub lipschitz_residual: T,
    pub lipschitz_grad: T,
    pub lambda: T,
    pub f0: T,
    pub f_star: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport<T: Real> {
    pub theorem: TheoremTag,
    /// `min_{1<=k<=t} |grad F(x_k)|^2`
    pub lhs_min: T,
    /// `(1/t) Σ_{k=1}^t |grad F(x_k)|^2`
    pub lhs_avg: T,
    pub rhs_paper: T,
    pub rhs_derived: T,
    pub eps_sum: T,
    pub pass_paper: bool,
    pub pass_derived: bool,
    /// Group-averaged suboptimality sum (equivariant certificates only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_hat_sum: Option<T>,
    /// `Σ eps_hat - Σ eps_tilde` (equivariant certificates only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduction_gap: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduction_pass: Option<bool>,
    pub constants_used: ConstantsUsed<T>,
}

/// `(1/t) * (16/(1-L_f)) * gap + (1/t) * (16/(1-L_f) + 4/(1-L)) * eps_sum`
pub fn theorem1_rhs_paper<T: Real>(c: &ConstantsUsed<T>, t: usize, eps_sum: T) -> T {
    let tt = cvt::<T>(t as f64);
    let c1 = cvt::<T>(16.0) / (T::one() - c.lipschitz_grad);
    let c2 = cvt::<T>(4.0) / (T::one() - c.lipschitz_residual);
    (c1 * (c.f0 - c.f_star) + (c1 + c2) * eps_sum) / tt
}

/// Same shape with `1 - L_f` replaced by `1 - lambda L_f` and the step factor
/// `(1 + lambda L_f)^2` kept unbounded.
pub fn theorem1_rhs_derived<T: Real>(c: &ConstantsUsed<T>, t: usize, eps_sum: T) -> T {
    let tt = cvt::<T>(t as f64);
    let lam_lf = c.lambda * c.lipschitz_grad;
    let c1 = cvt::<T>(4.0) * (T::one() + lam_lf) * (T::one() + lam_lf) / (T::one() - lam_lf);
    let c2 = cvt::<T>(4.0) / (T::one() - c.lipschitz_residual);
    (c1 * (c.f0 - c.f_star) + (c1 + c2) * eps_sum) / tt
}

/// `(1/t) * (8/(1-L_f)) * gap`
pub fn theorem2_rhs_paper<T: Real>(c: &ConstantsUsed<T>, t: usize) -> T {
    let tt = cvt::<T>(t as f64);
    cvt::<T>(8.0) / (T::one() - c.lipschitz_grad) * (c.f0 - c.f_star) / tt
}

/// `(1/t) * (2(1+lambda L_f)^2/(1-lambda L_f)) * gap`
pub fn theorem2_rhs_derived<T: Real>(c: &ConstantsUsed<T>, t: usize) -> T {
    let tt = cvt::<T>(t as f64);
    let lam_lf = c.lambda * c.lipschitz_grad;
    cvt::<T>(2.0) * (T::one() + lam_lf) * (T::one() + lam_lf) / (T::one() - lam_lf)
        * (c.f0 - c.f_star)
        / tt
}

fn constants_of<T: Real>(trace: &SolverTrace<T>) -> ConstantsUsed<T> {
    ConstantsUsed {
        lipschitz_residual: trace.constants.lipschitz_residual,
        lipschitz_grad: trace.constants.lipschitz_grad,
        lambda: trace.constants.lambda,
        f0: trace.constants.f0,
        f_star: trace.constants.f_star_lower,
    }
}

fn validate_trace<T: Real>(trace: &SolverTrace<T>) -> Result<()> {
    if trace.records.is_empty() {
        return Err(Error::InvalidInput {
            reason: "trace has no iterations".into(),
        });
    }
    if trace.constants.lambda * trace.constants.lipschitz_grad >= T::one() {
        return Err(Error::InvalidInput {
            reason: "trace violates lambda * L_f < 1".into(),
        });
    }
    if trace.constants.lipschitz_residual >= T::one() {
        return Err(Error::InvalidInput {
            reason: "trace violates L < 1".into(),
        });
    }
    Ok(())
}

/// Certifies the mismatched-run bound on a trace.
pub fn certify_theorem1<T: Real>(trace: &SolverTrace<T>) -> Result<CertificateReport<T>> {
    validate_trace(trace)?;
    let c = constants_of(trace);
    let t = trace.iterations();
    let eps_sum = trace.eps_sum();
    let lhs_avg = trace.avg_grad_sq();
    let rhs_paper = theorem1_rhs_paper(&c, t, eps_sum);
    let rhs_derived = theorem1_rhs_derived(&c, t, eps_sum);
    Ok(CertificateReport {
        theorem: TheoremTag::T1,
        lhs_min: trace.min_grad_sq(),
        lhs_avg,
        rhs_paper,
        rhs_derived,
        eps_sum,
        pass_paper: lhs_avg <= rhs_paper,
        pass_derived: lhs_avg <= rhs_derived,
        eps_hat_sum: None,
        reduction_gap: None,
        reduction_pass: None,
        constants_used: c,
    })
}

/// Certifies the exact-run bound; the trace must come from a matched run
/// (identically zero suboptimality).
pub fn certify_theorem2<T: Real>(trace: &SolverTrace<T>) -> Result<CertificateReport<T>> {
    validate_trace(trace)?;
    if trace.records.iter().any(|r| r.eps != T::zero()) {
        return Err(Error::InvalidInput {
            reason: "exact-run certificate needs a matched trace (eps != 0 found)".into(),
        });
    }
    let c = constants_of(trace);
    let t = trace.iterations();
    let lhs_avg = trace.avg_grad_sq();
    let rhs_paper = theorem2_rhs_paper(&c, t);
    let rhs_derived = theorem2_rhs_derived(&c, t);
    Ok(CertificateReport {
        theorem: TheoremTag::T2,
        lhs_min: trace.min_grad_sq(),
        lhs_avg,
        rhs_paper,
        rhs_derived,
        eps_sum: T::zero(),
        pass_paper: lhs_avg <= rhs_paper,
        pass_derived: lhs_avg <= rhs_derived,
        eps_hat_sum: None,
        reduction_gap: None,
        reduction_pass: None,
        constants_used: c,
    })
}

/// Certifies the equivariant run: the mismatched-run bound with the
/// equivariant suboptimalities, plus the reduction `Σ eps_tilde <= Σ eps_hat`
/// against the group-averaged raw error recorded along the same trajectory.
/// `plain` must be the companion run that differs only in the run denoiser.
pub fn certify_theorem3<T: Real>(
    equivariant: &SolverTrace<T>,
    plain: &SolverTrace<T>,
) -> Result<CertificateReport<T>> {
    validate_trace(equivariant)?;
    validate_trace(plain)?;
    let same_spec = equivariant.iterations() == plain.iterations()
        && equivariant.constants.lambda == plain.constants.lambda
        && equivariant.constants.lipschitz_grad == plain.constants.lipschitz_grad
        && equivariant.constants.lipschitz_residual == plain.constants.lipschitz_residual
        && equivariant.constants.f0 == plain.constants.f0;
    if !same_spec {
        return Err(Error::InvalidInput {
            reason: "equivariant and plain traces come from different problem setups".into(),
        });
    }
    let eps_hat_sum = equivariant.eps_hat_sum().ok_or_else(|| Error::InvalidInput {
        reason: "equivariant certificate needs eps_hat on every iteration".into(),
    })?;
    let c = constants_of(equivariant);
    let t = equivariant.iterations();
    let eps_sum = equivariant.eps_sum();
    let lhs_avg = equivariant.avg_grad_sq();
    let rhs_paper = theorem1_rhs_paper(&c, t, eps_sum);
    let rhs_derived = theorem1_rhs_derived(&c, t, eps_sum);
    let slack = cvt::<T>(1e-12) * T::one().max(eps_hat_sum.abs());
    Ok(CertificateReport {
        theorem: TheoremTag::T3,
        lhs_min: equivariant.min_grad_sq(),
        lhs_avg,
        rhs_paper,
        rhs_derived,
        eps_sum,
        pass_paper: lhs_avg <= rhs_paper,
        pass_derived: lhs_avg <= rhs_derived,
        eps_hat_sum: Some(eps_hat_sum),
        reduction_gap: Some(eps_hat_sum - eps_sum),
        reduction_pass: Some(eps_sum <= eps_hat_sum + slack),
        constants_used: c,
    })
}

/// Outcome of an error-schedule summability check.
#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport<T: Real> {
    /// Analytic tail bound `C (1 + 1/delta)` for the fitted envelope.
    pub summable_witness: T,
    pub partial_sum: T,
    pub pass: bool,
}

/// Fits the envelope constant `C` from the first error and checks
/// `eps_k <= C / k^{1+delta}` for every k. A schedule passing for some
/// `delta > 0` has a summable tail bounded by the reported witness.
pub fn check_error_schedule<T: Real>(epsilons: &[T], delta: T) -> Result<ScheduleReport<T>> {
    if delta <= T::zero() {
        return Err(Error::invalid("delta", "decay exponent must be positive"));
    }
    if epsilons.is_empty() {
        return Err(Error::invalid("epsilons", "schedule is empty"));
    }
    let c = epsilons[0];
    let exponent = T::one() + delta;
    let rel_slack = T::one() + cvt::<T>(1e-12);
    let mut pass = true;
    let mut partial_sum = T::zero();
    for (i, &e) in epsilons.iter().enumerate() {
        partial_sum += e;
        let k = cvt::<T>((i + 1) as f64);
        if e > c / k.powf(exponent) * rel_slack {
            pass = false;
        }
    }
    Ok(ScheduleReport {
        summable_witness: c * (T::one() + T::one() / delta),
        partial_sum,
        pass,
    })
}

/// Outcome of the strong-convexity probe of `H(x) = |x-z|^2/2 + phi(x)`.
#[derive(Debug, Clone, Serialize)]
pub struct StrongConvexityReport<T: Real> {
    pub min_modulus: T,
    /// `1/(L+1)`, the modulus the structure guarantees.
    pub required_modulus: T,
    pub pass: bool,
}

/// Samples point pairs in the image of the target denoiser and checks the
/// strong-convexity inequality of the proximal objective `H` at the modulus
/// `1/(L+1)`.
///
/// Points are generated as `u = D(w)` for Gaussian `w` around `z`, so both
/// `phi(u)` and `grad H(u) = w - z` come from the known preimage and no
/// inversion is needed.
pub fn check_strong_convexity<T: Real>(
    target: &Denoiser<T>,
    z: &DVector<T>,
    pairs: usize,
    seed: u64,
) -> Result<StrongConvexityReport<T>> {
    if pairs == 0 {
        return Err(Error::invalid("pairs", "need at least one pair"));
    }
    if z.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: z.len(),
        });
    }
    let l = target.lipschitz_residual();
    let required = T::one() / (l + T::one());
    let half = cvt::<T>(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Result<(DVector<T>, DVector<T>, T)> {
        let w = z + DVector::from_fn(z.len(), |_, _| {
            cvt::<T>(rng.sample::<f64, _>(StandardNormal))
        });
        let u = target.apply(&w)?;
        let h = half * (&u - z).norm_squared() + target.g_value(&w)?
            - half * (&w - &u).norm_squared();
        Ok((u, w, h))
    };

    let mut min_modulus = T::from_f64(f64::INFINITY).unwrap();
    let mut pass = true;
    for _ in 0..pairs {
        let (u, wu, h_u) = draw(&mut rng)?;
        let (v, _, h_v) = draw(&mut rng)?;
        let grad_h_u = &wu - z;
        let separation_sq = (&v - &u).norm_squared();
        let residual = h_v - h_u - grad_h_u.dot(&(&v - &u)) - half * required * separation_sq;
        if residual < cvt::<T>(-1e-8) {
            pass = false;
        }
        if separation_sq > cvt::<T>(1e-12) {
            let modulus =
                cvt::<T>(2.0) * (h_v - h_u - grad_h_u.dot(&(&v - &u))) / separation_sq;
            min_modulus = min_modulus.min(modulus);
        }
    }
    if min_modulus < required - cvt::<T>(1e-6) {
        pass = false;
    }
    Ok(StrongConvexityReport {
        min_modulus,
        required_modulus: required,
        pass,
    })
}

/// One row of the batch summary CSV.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow<T: Real> {
    pub instance_id: String,
    pub theorem: TheoremTag,
    pub lhs_avg: T,
    pub rhs_paper: T,
    pub rhs_derived: T,
    pub eps_sum: T,
    pub pass_paper: bool,
    pub pass_derived: bool,
}

impl<T: Real> SummaryRow<T> {
    pub fn from_report(instance_id: impl Into<String>, report: &CertificateReport<T>) -> Self {
        SummaryRow {
            instance_id: instance_id.into(),
            theorem: report.theorem,
            lhs_avg: report.lhs_avg,
            rhs_paper: report.rhs_paper,
            rhs_derived: report.rhs_derived,
            eps_sum: report.eps_sum,
            pass_paper: report.pass_paper,
            pass_derived: report.pass_derived,
        }
    }
}

/// Writes the batch summary CSV with the pinned header.
pub fn write_summary_csv<T: Real, W: Write>(rows: &[SummaryRow<T>], out: &mut W) -> io::Result<()> {
    writeln!(
        out,
        "instance_id,theorem,lhs_avg,rhs_paper,rhs_derived,eps_sum,pass_paper,pass_derived"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.instance_id,
            r.theorem,
            fmt_float(r.lhs_avg),
            fmt_float(r.rhs_paper),
            fmt_float(r.rhs_derived),
            fmt_float(r.eps_sum),
            r.pass_paper,
            r.pass_derived,
        )?;
    }
    Ok(())
}
