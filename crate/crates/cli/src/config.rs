//! Experiment configuration: JSON schema, validation, and construction of the
//! objects a batch run needs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pnpcert::certify::TheoremTag;
use pnpcert::denoisers::{bias_from_doc, AveragingMode, BiasDoc};
use pnpcert::equivariance::wrap_equivariant;
use pnpcert::fidelity::FidelityDoc;
use pnpcert::groups::{check_invariance, GroupDoc};
use pnpcert::priors::PriorDoc;
use pnpcert::{Denoiser64, Fidelity64, GmmPrior64, GroupAction64};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub instances: usize,
    pub dim: usize,
    pub prior: PriorDoc<f64>,
    #[serde(default)]
    pub group: Option<GroupDoc<f64>>,
    pub fidelity: FidelityDoc<f64>,
    pub sigma: f64,
    pub lambda: f64,
    pub alpha: f64,
    #[serde(default)]
    pub bias: Option<BiasDoc<f64>>,
    pub iterations: usize,
    pub theorems: Vec<TheoremTag>,
    pub out_dir: PathBuf,
}

/// Everything a batch needs, built once and shared across instances.
pub struct BuiltExperiment {
    pub config: ExperimentConfig,
    pub prior: GmmPrior64,
    pub group: Option<GroupAction64>,
    pub fidelity: Fidelity64,
    /// The exact proximal oracle: MMSE denoiser, relaxed when `alpha < 1`.
    pub target: Denoiser64,
    pub mismatched: Option<Denoiser64>,
    pub equivariant: Option<Denoiser64>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    // serde_json's message already carries the offending field and location.
    serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

/// Full schema and invariant check; builds every object without running.
pub fn validate_config(config: ExperimentConfig) -> Result<BuiltExperiment, CliError> {
    let cfg = |m: String| CliError::Config(m);

    if config.name.is_empty() {
        return Err(cfg("name must be non-empty".into()));
    }
    if config.instances == 0 {
        return Err(cfg("instances must be >= 1".into()));
    }
    if config.iterations == 0 {
        return Err(cfg("iterations must be >= 1".into()));
    }
    if config.sigma <= 0.0 {
        return Err(cfg(format!("sigma = {} must be > 0", config.sigma)));
    }
    if config.lambda <= 0.0 {
        return Err(cfg(format!("lambda = {} must be > 0", config.lambda)));
    }
    if !(config.alpha > 0.0 && config.alpha <= 1.0) {
        return Err(cfg(format!("alpha = {} must be in (0, 1]", config.alpha)));
    }
    if config.theorems.is_empty() {
        return Err(cfg("theorems must name at least one of T1, T2, T3".into()));
    }

    let prior = GmmPrior64::from_doc(&config.prior)
        .map_err(|e| cfg(format!("prior: {e}")))?;
    if prior.dim() != config.dim {
        return Err(cfg(format!(
            "prior dimension {} does not match dim = {}",
            prior.dim(),
            config.dim
        )));
    }
    let fidelity = Fidelity64::from_doc(&config.fidelity)
        .map_err(|e| cfg(format!("fidelity: {e}")))?;
    if fidelity.dim() != config.dim {
        return Err(cfg(format!(
            "fidelity acts on dimension {}, expected {}",
            fidelity.dim(),
            config.dim
        )));
    }
    let lambda_lf = config.lambda * fidelity.lipschitz_grad();
    if lambda_lf >= 1.0 {
        return Err(cfg(format!(
            "lambda * L_f = {lambda_lf:.6} must be < 1 (L_f = {:.6})",
            fidelity.lipschitz_grad()
        )));
    }

    let mut target = Denoiser64::mmse(prior.clone(), config.sigma)
        .map_err(|e| cfg(format!("target denoiser: {e}")))?;
    if config.alpha < 1.0 {
        target = target
            .relax(config.alpha)
            .map_err(|e| cfg(format!("relaxation: {e}")))?;
    }
    if target.lipschitz_residual() >= 1.0 {
        return Err(cfg(format!(
            "target residual Lipschitz constant {:.6} must be < 1; lower alpha below {:.6}",
            target.lipschitz_residual(),
            0.99 / target.lipschitz_residual() * config.alpha
        )));
    }

    let group = config
        .group
        .as_ref()
        .map(|doc| GroupAction64::from_doc(doc).map_err(|e| cfg(format!("group: {e}"))))
        .transpose()?;
    if let Some(g) = &group {
        if g.dim() != config.dim {
            return Err(cfg(format!(
                "group acts on dimension {}, expected {}",
                g.dim(),
                config.dim
            )));
        }
    }

    let needs_bias = config.theorems.iter().any(|t| matches!(t, TheoremTag::T1 | TheoremTag::T3));
    let mismatched = match (&config.bias, needs_bias) {
        (None, true) => {
            return Err(cfg("T1/T3 certification needs a bias model".into()));
        }
        (Some(doc), _) => {
            let bias = bias_from_doc(doc).map_err(|e| cfg(format!("bias: {e}")))?;
            Some(
                target
                    .perturb(bias)
                    .map_err(|e| cfg(format!("bias: {e}")))?,
            )
        }
        (None, false) => None,
    };

    let wants_t3 = config.theorems.contains(&TheoremTag::T3);
    let equivariant = if wants_t3 {
        let g = group.as_ref().ok_or_else(|| {
            cfg("T3 certification needs a group".into())
        })?;
        let report = check_invariance(&prior, g, 64, 1e-10)
            .map_err(|e| cfg(format!("invariance check: {e}")))?;
        if !report.pass {
            return Err(cfg(format!(
                "prior is not invariant under group element {} (violation {:.3e}); \
                 T3 requires a group-invariant prior",
                report.worst_element, report.max_violation
            )));
        }
        let mismatched = mismatched
            .clone()
            .expect("bias presence checked above");
        Some(
            wrap_equivariant(mismatched, g.clone(), AveragingMode::Exact)
                .map_err(|e| cfg(format!("equivariant wrapper: {e}")))?,
        )
    } else {
        None
    };

    Ok(BuiltExperiment {
        config,
        prior,
        group,
        fidelity,
        target,
        mismatched,
        equivariant,
    })
}

impl BuiltExperiment {
    /// Human-readable validation summary (the `validate` subcommand output).
    pub fn describe(&self) -> String {
        let lf = self.fidelity.lipschitz_grad();
        let mut out = format!(
            "config `{}`: {} instance(s), dim {}, {} iteration(s)\n\
             L_f = {:.6}\n\
             lambda * L_f = {:.6} (< 1 required)\n\
             estimated L (target residual) = {:.6} (< 1 required)\n",
            self.config.name,
            self.config.instances,
            self.config.dim,
            self.config.iterations,
            lf,
            self.config.lambda * lf,
            self.target.lipschitz_residual(),
        );
        out.push_str(&format!(
            "theorems: {}\n",
            self.config
                .theorems
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ));
        if let Some(g) = &self.group {
            out.push_str(&format!("group: {} element(s)\n", g.len()));
        }
        if let Some(m) = &self.mismatched {
            out.push_str(&format!(
                "mismatched residual constant = {:.6}\n",
                m.lipschitz_residual()
            ));
        }
        out
    }
}
