//! Run configuration: a flat `key = value` file (TOML syntax, no tables).
//!
//! Every key is optional; missing keys keep their defaults and unknown keys
//! are rejected. See the README for the full list.

use std::path::Path;

use dkgp::hyperopt::{InvGammaPrior, KernelFamily, ParamName, PriorSet};
use dkgp::mountaincar::EnvConfig;
use dkgp::policy_iteration::{PiConfig, TuningConfig, ValueTarget};
use dkgp::KernelVariant;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub kernel: String,
    /// Layers of the CK/NTK dual kernels.
    pub depth: usize,

    // toy study
    pub toy_theta: f64,
    pub toy_a: f64,
    /// Standard deviation of the observation noise.
    pub toy_noise: f64,
    pub toy_n_train: usize,
    pub toy_train_lo: f64,
    pub toy_train_hi: f64,
    pub toy_n_query: usize,
    pub toy_query_lo: f64,
    pub toy_query_hi: f64,
    pub toy_grid_lo: f64,
    pub toy_grid_hi: f64,
    pub toy_grid_per_decade: usize,

    // environment
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
    pub discount: f64,
    pub reward_x: f64,
    pub reward_xdot: f64,
    pub reward_sigma: f64,

    // policy iteration
    pub n_dynamics: usize,
    pub n_value: usize,
    pub n_forces: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// `continuation` or `full`.
    pub value_target: String,
    pub mcmc_steps: usize,
    pub proposal_scale: f64,
    pub prior_shape: f64,
    pub prior_scale: f64,
    pub noise_prior_scale: f64,

    // artifacts and rollout
    pub quiver_grid: usize,
    pub surface_grid: usize,
    pub horizon: usize,
    pub start_x: f64,
    pub start_xdot: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            seed: 0,
            kernel: "ck".into(),
            depth: 3,
            toy_theta: 0.65,
            toy_a: 10.0,
            toy_noise: 0.1,
            toy_n_train: 11,
            toy_train_lo: 0.1,
            toy_train_hi: 4.0,
            toy_n_query: 100,
            toy_query_lo: 0.2,
            toy_query_hi: 9.0,
            toy_grid_lo: 1e-2,
            toy_grid_hi: 1e2,
            toy_grid_per_decade: 8,
            gravity: env.gravity,
            dt: env.dt,
            substeps: env.substeps,
            discount: env.discount,
            reward_x: env.reward_center.0,
            reward_xdot: env.reward_center.1,
            reward_sigma: env.reward_sigma,
            n_dynamics: 128,
            n_value: 512,
            n_forces: 128,
            tol: 1e-2,
            max_iter: 30,
            value_target: "continuation".into(),
            mcmc_steps: 200,
            proposal_scale: dkgp::hyperopt::DEFAULT_PROPOSAL_SCALE,
            prior_shape: 2.0,
            prior_scale: 1.0,
            noise_prior_scale: 1e-4,
            quiver_grid: 20,
            surface_grid: 50,
            horizon: 100,
            start_x: -0.5,
            start_xdot: 0.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Arg(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Canonical text form, embedded in manifests.
    pub fn serialize(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn variant(&self) -> Result<KernelVariant, CliError> {
        KernelVariant::parse(&self.kernel)
            .ok_or_else(|| CliError::Arg(format!("unknown kernel {:?}", self.kernel)))
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            gravity: self.gravity,
            dt: self.dt,
            substeps: self.substeps,
            reward_center: (self.reward_x, self.reward_xdot),
            reward_sigma: self.reward_sigma,
            discount: self.discount,
        }
    }

    pub fn priors(&self, variant: KernelVariant) -> Result<PriorSet, CliError> {
        let mut p = PriorSet::default_for(variant);
        for &n in dkgp::hyperopt::param_names(variant) {
            let scale = match n {
                ParamName::NoiseVar => self.noise_prior_scale,
                _ => self.prior_scale,
            };
            p.insert(n, InvGammaPrior::new(self.prior_shape, scale)?);
        }
        Ok(p)
    }

    pub fn pi_config(&self) -> Result<PiConfig, CliError> {
        let variant = self.variant()?;
        let mut tuning = TuningConfig::new(KernelFamily::new(variant, self.depth), self.mcmc_steps);
        tuning.proposal_scale = self.proposal_scale;
        tuning.priors = self.priors(variant)?;
        let mut cfg = PiConfig::new(self.env(), tuning);
        cfg.n_dynamics = self.n_dynamics;
        cfg.n_value = self.n_value;
        cfg.n_forces = self.n_forces;
        cfg.seed = self.seed;
        cfg.tol = self.tol;
        cfg.max_iter = self.max_iter;
        cfg.value_target = ValueTarget::parse(&self.value_target).ok_or_else(|| {
            CliError::Arg(format!("unknown value_target {:?}", self.value_target))
        })?;
        cfg.validate()?;
        if self.mcmc_steps == 0 {
            return Err(CliError::Arg("mcmc_steps must be at least 1".into()));
        }
        Ok(cfg)
    }
}
