//! Batch execution: one independent problem instance per `seed + i`, traces
//! and certificates written atomically, deterministic summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use pnpcert::certify::{
    certify_theorem1, certify_theorem2, certify_theorem3, CertificateReport, SummaryRow,
    TheoremTag,
};
use pnpcert::equivariance::bias_decompose;
use pnpcert::solver::{epnp_pgd_run, pgd_exact_run, pnp_pgd_run, ProblemSpec, SolverTrace};
use pnpcert::Error as CoreError;

use crate::config::BuiltExperiment;
use crate::CliError;

#[derive(Debug, Default, Clone)]
pub struct RunOverrides {
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed_override: Option<u64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub summary: Vec<SummaryRow<f64>>,
    /// `(instance_id, theorem)` pairs whose hard assertions failed.
    pub failed: Vec<(String, TheoremTag)>,
}

impl RunOutcome {
    pub fn all_passed(&self) -> bool {
        self.failed.is_empty()
    }
}

struct InstanceResult {
    rows: Vec<SummaryRow<f64>>,
    failed: Vec<(String, TheoremTag)>,
}

/// Executes every instance of the experiment and writes artifacts under the
/// output directory. Instances are independent and dispatched to a worker
/// pool; file contents do not depend on scheduling.
pub fn run_experiment(
    built: &BuiltExperiment,
    overrides: &RunOverrides,
) -> Result<RunOutcome, CliError> {
    let config = &built.config;
    let out_dir = overrides
        .out_dir
        .clone()
        .unwrap_or_else(|| config.out_dir.clone());
    fs::create_dir_all(&out_dir)?;
    let seed = overrides.seed_override.unwrap_or(config.seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(overrides.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;

    let results: Vec<Result<InstanceResult, CliError>> = pool.install(|| {
        (0..config.instances)
            .into_par_iter()
            .map(|i| run_instance(built, seed + i as u64, i, &out_dir))
            .collect()
    });

    let mut summary = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for r in results {
        match r {
            Ok(instance) => {
                summary.extend(instance.rows);
                failed.extend(instance.failed);
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    let mut buf = Vec::new();
    pnpcert::certify::write_summary_csv(&summary, &mut buf)
        .map_err(|e| CliError::Runtime(format!("summary: {e}")))?;
    write_atomic(&out_dir.join("summary.csv"), &buf)?;

    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(RunOutcome {
        out_dir,
        summary,
        failed,
    })
}

fn run_instance(
    built: &BuiltExperiment,
    instance_seed: u64,
    index: usize,
    out_dir: &Path,
) -> Result<InstanceResult, CliError> {
    let config = &built.config;
    let id = format!("{index:04}");
    let runtime = |e: CoreError| CliError::Runtime(format!("instance {id}: {e}"));

    // Starting point drawn from the smoothed prior with the instance seed.
    let x0 = built
        .prior
        .smooth(config.sigma)
        .and_then(|s| s.sample(instance_seed, 1))
        .map_err(runtime)?
        .remove(0);

    let spec_with = |run: pnpcert::Denoiser64| ProblemSpec {
        fidelity: built.fidelity.clone(),
        target: built.target.clone(),
        run,
        lambda: config.lambda,
        sigma: config.sigma,
        x0: x0.clone(),
        iterations: config.iterations,
    };

    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let mut record = |theorem: TheoremTag,
                      report: CertificateReport<f64>,
                      hard_pass: bool,
                      failed: &mut Vec<(String, TheoremTag)>| {
        if !hard_pass {
            failed.push((id.clone(), theorem));
        }
        rows.push(SummaryRow::from_report(&id, &report));
    };

    for theorem in &config.theorems {
        match theorem {
            TheoremTag::T1 => {
                let run = built
                    .mismatched
                    .clone()
                    .expect("validation guarantees a bias for T1");
                let trace = pnp_pgd_run(&spec_with(run)).map_err(runtime)?;
                write_trace(out_dir, &id, "T1", &trace)?;
                let report = certify_theorem1(&trace).map_err(runtime)?;
                write_certificate(out_dir, &id, "T1", &report)?;
                let pass = report.pass_derived;
                record(TheoremTag::T1, report, pass, &mut failed);
            }
            TheoremTag::T2 => {
                let trace = pgd_exact_run(&spec_with(built.target.clone())).map_err(runtime)?;
                write_trace(out_dir, &id, "T2", &trace)?;
                let report = certify_theorem2(&trace).map_err(runtime)?;
                write_certificate(out_dir, &id, "T2", &report)?;
                let pass = report.pass_derived;
                record(TheoremTag::T2, report, pass, &mut failed);
            }
            TheoremTag::T3 => {
                let group = built.group.as_ref().expect("validation guarantees a group");
                let equivariant = built
                    .equivariant
                    .clone()
                    .expect("validation guarantees the wrapper");
                let mismatched = built.mismatched.clone().expect("bias checked");
                let eq_trace =
                    epnp_pgd_run(&spec_with(equivariant), group).map_err(runtime)?;
                let plain_trace =
                    pnp_pgd_run(&spec_with(mismatched.clone())).map_err(runtime)?;
                write_trace(out_dir, &id, "T3", &eq_trace)?;
                write_trace(out_dir, &id, "T3_plain", &plain_trace)?;
                let report = certify_theorem3(&eq_trace, &plain_trace).map_err(runtime)?;
                write_certificate(out_dir, &id, "T3", &report)?;
                let decomposition_ok =
                    decomposition_identity_holds(built, &mismatched, &eq_trace).map_err(runtime)?;
                let pass = report.pass_derived
                    && report.reduction_pass.unwrap_or(false)
                    && decomposition_ok;
                record(TheoremTag::T3, report, pass, &mut failed);
            }
        }
    }

    Ok(InstanceResult { rows, failed })
}

/// The exact finite-group decomposition of squared bias must close at every
/// checked trace point.
fn decomposition_identity_holds(
    built: &BuiltExperiment,
    mismatched: &pnpcert::Denoiser64,
    trace: &SolverTrace<f64>,
) -> Result<bool, CoreError> {
    let group = built.group.as_ref().expect("T3 has a group");
    let t = trace.records.len();
    for idx in [0, t / 2, t - 1] {
        let z = &trace.records[idx].z;
        let dec = bias_decompose(mismatched, &built.target, group, z)?;
        if (dec.mean_sq_bias + dec.variance_gain - dec.avg_sq_bias).abs() > 1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn write_trace(
    out_dir: &Path,
    id: &str,
    tag: &str,
    trace: &SolverTrace<f64>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    trace
        .write_csv(&mut buf)
        .map_err(|e| CliError::Runtime(format!("trace csv: {e}")))?;
    write_atomic(&out_dir.join(format!("trace_{id}_{tag}.csv")), &buf)
}

fn write_certificate(
    out_dir: &Path,
    id: &str,
    tag: &str,
    report: &CertificateReport<f64>,
) -> Result<(), CliError> {
    let mut buf = serde_json::to_vec_pretty(report)
        .map_err(|e| CliError::Runtime(format!("certificate json: {e}")))?;
    buf.push(b'\n');
    write_atomic(&out_dir.join(format!("cert_{id}_{tag}.json")), &buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
