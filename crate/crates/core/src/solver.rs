//! The iteration schemes under test, instrumented to the bone.
//!
//! All three runners share one engine for the update
//!
//! ```text
//! z_{k+1} = x_k - lambda * grad f(x_k)
//! x_{k+1} = D_run(z_{k+1})
//! ```
//!
//! and differ only in which denoiser plays `D_run`: the target denoiser
//! (exact proximal step), a mismatched denoiser, or its equivariant wrapper.
//! The objective `F = lambda f + phi` and its gradient are always evaluated
//! with the *target* denoiser's potential, which is what the certified bounds
//! constrain. Because the target is an exact proximal oracle, the
//! per-iteration suboptimality
//!
//! ```text
//! eps_{k+1} = H(x_{k+1}) - min_u H(u),   H(u) = |u - z_{k+1}|^2/2 + phi(u)
//! ```
//!
//! is measured exactly (`min_u H = g(z_{k+1})`), not assumed, and the gradient
//! residual `delta_{k+1} = -grad H(x_{k+1}) = z_{k+1} - D^{-1}(x_{k+1})` comes
//! out of the same inversion that evaluates `phi`.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::denoisers::{AveragingMode, Denoiser};
use crate::fidelity::Fidelity;
use crate::groups::{check_invariance, GroupAction};
use crate::{cvt, fmt_float, scaled_tol, Error, Real, Result};

/// Tolerance for the fixed-point inversions behind `phi` evaluations. The
/// potential is first-order insensitive to inversion error at the true
/// preimage, so values of `phi` are accurate to roughly the square of this;
/// tighter settings start chasing the rounding floor of the mixture score.
const INVERT_TOL: f64 = 1e-10;

/// Hard stop for runaway iterations: `|x_k| > 1e6 * (|x_0| + 1)`.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Safety margin subtracted from the estimated objective infimum.
const F_STAR_MARGIN: f64 = 1e-6;

/// A fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<T: Real> {
    pub fidelity: Fidelity<T>,
    /// The exact proximal oracle `D = prox_phi`; defines the objective.
    pub target: Denoiser<T>,
    /// The denoiser actually iterated (target, mismatched, or equivariant).
    pub run: Denoiser<T>,
    pub lambda: T,
    pub sigma: T,
    pub x0: DVector<T>,
    pub iterations: usize,
}

impl<T: Real> ProblemSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= T::zero() {
            return Err(Error::invalid("lambda", "step parameter must be positive"));
        }
        if self.sigma <= T::zero() {
            return Err(Error::invalid("sigma", "noise level must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "need at least one iteration"));
        }
        let n = self.target.dim();
        for (name, got) in [
            ("fidelity", self.fidelity.dim()),
            ("run denoiser", self.run.dim()),
            ("x0", self.x0.len()),
        ] {
            if got != n {
                return Err(Error::invalid(
                    "dim",
                    format!("{name} has dimension {got}, target denoiser has {n}"),
                ));
            }
        }
        let lambda_lf = self.lambda * self.fidelity.lipschitz_grad();
        if lambda_lf >= T::one() {
            return Err(Error::invalid(
                "lambda",
                format!(
                    "lambda * L_f = {:.6} must be < 1",
                    lambda_lf.to_f64().unwrap_or(f64::NAN)
                ),
            ));
        }
        let l = self.target.lipschitz_residual();
        if l >= T::one() {
            return Err(Error::invalid(
                "target",
                format!(
                    "target residual Lipschitz constant {:.6} must be < 1 (relax the denoiser)",
                    l.to_f64().unwrap_or(f64::NAN)
                ),
            ));
        }
        Ok(())
    }
}

/// Per-iteration measurements at the post-update iterate `x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T: Real> {
    pub k: usize,
    pub x: DVector<T>,
    pub z: DVector<T>,
    /// `F(x_k) = lambda f(x_k) + phi(x_k)`
    pub objective: T,
    /// `|grad F(x_k)|^2`
    pub grad_sq: T,
    /// Proximal suboptimality of `x_k` for the subproblem at `z_k`.
    pub eps: T,
    /// Group-averaged suboptimality of the unwrapped denoiser; equivariant
    /// runs only.
    pub eps_hat: Option<T>,
    /// `|delta_k| = |z_k - D^{-1}(x_k)|`
    pub delta_norm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceConstants<T: Real> {
    /// Residual Lipschitz constant `L` of the target denoiser.
    pub lipschitz_residual: T,
    /// `L_f` of the fidelity gradient.
    pub lipschitz_grad: T,
    pub lambda: T,
    /// `F(x_0)`.
    pub f0: T,
    /// Certified-safe lower estimate of `inf F` (see `f_star_lower` notes in
    /// the certify module: smaller values only loosen the bounds).
    pub f_star_lower: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace<T: Real> {
    pub records: Vec<IterationRecord<T>>,
    pub constants: TraceConstants<T>,
}

impl<T: Real> SolverTrace<T> {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn eps_sum(&self) -> T {
        self.records
            .iter()
            .fold(T::zero(), |acc, r| acc + r.eps)
    }

    pub fn eps_hat_sum(&self) -> Option<T> {
        self.records
            .iter()
            .map(|r| r.eps_hat)
            .try_fold(T::zero(), |acc, e| e.map(|e| acc + e))
    }

    pub fn min_grad_sq(&self) -> T {
        self.records
            .iter()
            .map(|r| r.grad_sq)
            .fold(T::from_f64(f64::INFINITY).unwrap(), |a, b| a.min(b))
    }

    pub fn avg_grad_sq(&self) -> T {
        self.records
            .iter()
            .fold(T::zero(), |acc, r| acc + r.grad_sq)
            / cvt::<T>(self.records.len() as f64)
    }

    /// Writes the trace as CSV, one row per iteration, floats with 17
    /// significant digits. `eps_hat` is left empty for non-equivariant runs.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "k,F,grad_F_sq,eps,eps_hat,delta_norm,x_norm")?;
        for r in &self.records {
            let eps_hat = r
                .eps_hat
                .map(|e| fmt_float(e))
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.k,
                fmt_float(r.objective),
                fmt_float(r.grad_sq),
                fmt_float(r.eps),
                eps_hat,
                fmt_float(r.delta_norm),
                fmt_float(r.x.norm()),
            )?;
        }
        Ok(())
    }
}

/// PnP-PGD with whatever `spec.run` is; the trace measures everything against
/// the target denoiser's objective.
pub fn pnp_pgd_run<T: Real>(spec: &ProblemSpec<T>) -> Result<SolverTrace<T>> {
    run_engine(spec, None)
}

/// PGD with the exact proximal step: requires `run == target` and records
/// identically-zero `eps`.
pub fn pgd_exact_run<T: Real>(spec: &ProblemSpec<T>) -> Result<SolverTrace<T>> {
    if spec.run != spec.target {
        return Err(Error::invalid(
            "run",
            "exact run requires the run denoiser to equal the target denoiser",
        ));
    }
    run_engine(spec, None)
}

/// Equivariant PnP-PGD: `spec.run` must be the exact-mode equivariant wrap of
/// a mismatched denoiser over `group`, and the target prior must be invariant
/// under the group. Additionally records the group-averaged suboptimality
/// `eps_hat` of the unwrapped denoiser at every iteration.
pub fn epnp_pgd_run<T: Real>(
    spec: &ProblemSpec<T>,
    group: &GroupAction<T>,
) -> Result<SolverTrace<T>> {
    let (base, run_group, mode) = spec.run.equivariant_parts().ok_or_else(|| {
        Error::invalid("run", "equivariant run requires an equivariant-wrapped denoiser")
    })?;
    if !matches!(mode, AveragingMode::Exact) {
        return Err(Error::invalid(
            "run",
            "certified equivariant runs use exact group averaging",
        ));
    }
    if run_group != group {
        return Err(Error::invalid(
            "group",
            "run denoiser was wrapped with a different group",
        ));
    }
    let prior = spec.target.prior().ok_or_else(|| {
        Error::invalid("target", "equivariant runs need a prior-backed target denoiser")
    })?;
    let report = check_invariance(prior, group, 64, scaled_tol::<T>(1e-10))?;
    if !report.pass {
        return Err(Error::NotInvariant {
            element: report.worst_element,
            violation: report.max_violation.to_f64().unwrap_or(f64::NAN),
        });
    }
    run_engine(spec, Some((base.clone(), group.clone())))
}

fn run_engine<T: Real>(
    spec: &ProblemSpec<T>,
    eps_hat_over: Option<(Denoiser<T>, GroupAction<T>)>,
) -> Result<SolverTrace<T>> {
    spec.validate()?;
    let tol = scaled_tol::<T>(INVERT_TOL);
    let half = cvt::<T>(0.5);
    let matched = spec.run == spec.target;
    let divergence_cap = cvt::<T>(DIVERGENCE_FACTOR) * (spec.x0.norm() + T::one());

    // phi(x) via the target oracle; z_hint skips the inversion when the
    // preimage is already known (matched steps).
    let phi_at = |x: &DVector<T>, z_hint: Option<&DVector<T>>| -> Result<(T, DVector<T>)> {
        let z = match z_hint {
            Some(z) => z.clone(),
            None => spec.target.invert(x, tol)?,
        };
        let phi = spec.target.g_value(&z)? - half * (&z - x).norm_squared();
        Ok((phi, z))
    };

    let (phi0, _) = phi_at(&spec.x0, None).map_err(|e| e.at_iteration(0))?;
    let f0 = spec.lambda * spec.fidelity.value(&spec.x0)? + phi0;
    let mut min_f = f0;

    let mut x = spec.x0.clone();
    let mut fgrad = spec.fidelity.grad(&x)?;
    let mut records = Vec::with_capacity(spec.iterations);

    for k in 1..=spec.iterations {
        let z = &x - &fgrad * spec.lambda;
        let x_next = spec.run.apply(&z).map_err(|e| e.at_iteration(k))?;
        let x_norm = x_next.norm();
        if x_norm > divergence_cap {
            return Err(Error::IterateDiverged {
                iteration: k,
                norm: x_norm.to_f64().unwrap_or(f64::NAN),
            });
        }

        let (phi, z_inv) = if matched {
            phi_at(&x_next, Some(&z))
        } else {
            phi_at(&x_next, None)
        }
        .map_err(|e| e.at_iteration(k))?;

        let objective = spec.lambda * spec.fidelity.value(&x_next)? + phi;
        let fgrad_next = spec.fidelity.grad(&x_next)?;
        let grad_f = &fgrad_next * spec.lambda + (&z_inv - &x_next);
        let grad_sq = grad_f.norm_squared();

        let (eps, delta_norm) = if matched {
            (T::zero(), T::zero())
        } else {
            let h_at_x = half * (&x_next - &z).norm_squared() + phi;
            let h_min = spec.target.g_value(&z)?;
            (h_at_x - h_min, (&z - &z_inv).norm())
        };

        let eps_hat = match &eps_hat_over {
            None => None,
            Some((base, group)) => {
                let mut acc = T::zero();
                for g in group.elements() {
                    let moved = g.apply(&z)?;
                    let out = base.apply(&moved).map_err(|e| e.at_iteration(k))?;
                    let (phi_g, _) = phi_at(&out, None).map_err(|e| e.at_iteration(k))?;
                    let gap =
                        half * (&out - &moved).norm_squared() + phi_g
                            - spec.target.g_value(&moved)?;
                    acc += gap;
                }
                Some(acc * group.weight())
            }
        };

        min_f = min_f.min(objective);
        records.push(IterationRecord {
            k,
            x: x_next.clone(),
            z,
            objective,
            grad_sq,
            eps,
            eps_hat,
            delta_norm,
        });
        x = x_next;
        fgrad = fgrad_next;
    }

    // Lower estimate of inf F: f >= 0 for both fidelity kinds, so
    // inf F >= inf phi, estimated by running the denoiser to a fixed point
    // (a critical point of phi) from several starts. Taking the minimum with
    // the observed objective values and subtracting a margin keeps the
    // estimate below every value the certificates compare against.
    let phi_floor = estimate_phi_min(&spec.target, &spec.x0, tol)?;
    let f_star_lower =
        min_f.min(spec.lambda * spec.fidelity.lower_bound() + phi_floor) - cvt::<T>(F_STAR_MARGIN);

    Ok(SolverTrace {
        records,
        constants: TraceConstants {
            lipschitz_residual: spec.target.lipschitz_residual(),
            lipschitz_grad: spec.fidelity.lipschitz_grad(),
            lambda: spec.lambda,
            f0,
            f_star_lower,
        },
    })
}

fn estimate_phi_min<T: Real>(target: &Denoiser<T>, x0: &DVector<T>, tol: T) -> Result<T> {
    let mut starts = vec![x0.clone(), DVector::zeros(target.dim())];
    if let Some(prior) = target.prior() {
        for c in prior.components() {
            starts.push(c.mean().clone());
        }
    }
    let mut best = T::from_f64(f64::INFINITY).unwrap();
    for mut x in starts {
        for _ in 0..200 {
            let next = target.apply(&x)?;
            let step = (&next - &x).norm();
            x = next;
            if step <= scaled_tol::<T>(1e-13) {
                break;
            }
        }
        best = best.min(target.potential(&x, tol)?);
    }
    Ok(best)
}
