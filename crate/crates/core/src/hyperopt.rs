//! Kernel hyperparameter selection.
//!
//! Two strategies are provided: an exhaustive grid search that maximizes the
//! log marginal likelihood, and a random-walk Metropolis chain in log-parameter
//! space whose target trades cross-validated prediction error against
//! inverse-Gamma priors on every hyperparameter.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::gp::GpModel;
use crate::kernels::{KernelSpec, KernelVariant, PointSet};
use crate::par::{self, Execution};

/// Smallest observation-noise variance handed to a GP fit by the MCMC tuner.
pub const NOISE_FLOOR: f64 = 1e-6;
/// Number of cross-validation folds in the MCMC objective.
pub const CV_FOLDS: usize = 4;
/// Default random-walk step in log space.
pub const DEFAULT_PROPOSAL_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamName {
    Lengthscale,
    SigmaW,
    SigmaB,
    NoiseVar,
}

impl ParamName {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Lengthscale => "lengthscale",
            ParamName::SigmaW => "sigma_w",
            ParamName::SigmaB => "sigma_b",
            ParamName::NoiseVar => "noise_var",
        }
    }
}

/// Tunable parameters of each kernel family, in storage order.
pub fn param_names(variant: KernelVariant) -> &'static [ParamName] {
    match variant {
        KernelVariant::Rbf => &[ParamName::Lengthscale, ParamName::NoiseVar],
        KernelVariant::Ck | KernelVariant::Ntk => {
            &[ParamName::SigmaW, ParamName::SigmaB, ParamName::NoiseVar]
        }
    }
}

/// A kernel variant plus the structural settings that are not tuned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelFamily {
    pub variant: KernelVariant,
    /// Network depth for CK/NTK; ignored for RBF.
    pub depth: usize,
}

impl KernelFamily {
    pub fn new(variant: KernelVariant, depth: usize) -> Self {
        Self { variant, depth }
    }
}

/// Positive hyperparameters stored as logarithms.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    variant: KernelVariant,
    log_values: Vec<f64>,
}

impl ParamVector {
    /// Builds from positive values in [`param_names`] order.
    pub fn from_values(variant: KernelVariant, values: &[f64]) -> Result<Self> {
        let names = param_names(variant);
        if values.len() != names.len() {
            return Err(invalid(format!(
                "{variant} takes {} hyperparameters, got {}",
                names.len(),
                values.len()
            )));
        }
        if let Some((n, v)) = names
            .iter()
            .zip(values)
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(invalid(format!("{} must be positive, got {v}", n.as_str())));
        }
        Ok(Self {
            variant,
            log_values: values.iter().map(|v| v.ln()).collect(),
        })
    }

    pub fn from_log_values(variant: KernelVariant, log_values: Vec<f64>) -> Result<Self> {
        if log_values.len() != param_names(variant).len() {
            return Err(invalid("wrong number of log hyperparameters"));
        }
        if log_values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("log hyperparameters must be finite"));
        }
        Ok(Self {
            variant,
            log_values,
        })
    }

    pub fn variant(&self) -> KernelVariant {
        self.variant
    }

    pub fn names(&self) -> &'static [ParamName] {
        param_names(self.variant)
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|v| v.exp()).collect()
    }

    pub fn get(&self, name: ParamName) -> Option<f64> {
        self.names()
            .iter()
            .position(|n| *n == name)
            .map(|i| self.log_values[i].exp())
    }

    /// Kernel and noise variance for inputs of dimension `input_dim`.
    pub fn to_model(&self, depth: usize, input_dim: usize) -> Result<(KernelSpec, f64)> {
        let v = self.values();
        match self.variant {
            KernelVariant::Rbf => Ok((KernelSpec::rbf(v[0])?, v[1])),
            KernelVariant::Ck => Ok((KernelSpec::ck(v[0], v[1], depth, input_dim)?, v[2])),
            KernelVariant::Ntk => Ok((KernelSpec::ntk(v[0], v[1], depth, input_dim)?, v[2])),
        }
    }

    /// Fits a GP with these hyperparameters.
    pub fn fit(&self, family: KernelFamily, x: &PointSet, y: &[f64]) -> Result<GpModel> {
        let (spec, noise) = self.to_model(family.depth, x.dim())?;
        GpModel::fit(x.clone(), y.to_vec(), spec, noise)
    }
}

/// `lo, ..., hi` with `per_decade` logarithmically even steps per factor of 10.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && per_decade > 0);
    let decades = (hi / lo).log10();
    let steps = (decades * per_decade as f64).round() as usize;
    (0..=steps)
        .map(|i| {
            if i == steps {
                hi
            } else {
                lo * 10f64.powf(i as f64 / per_decade as f64)
            }
        })
        .collect()
}

/// Cartesian product of per-parameter axes, last axis varying fastest.
pub fn product_grid(variant: KernelVariant, axes: &[Vec<f64>]) -> Result<Vec<ParamVector>> {
    if axes.len() != param_names(variant).len() {
        return Err(invalid(format!(
            "{variant} grid needs {} axes, got {}",
            param_names(variant).len(),
            axes.len()
        )));
    }
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out.iter()
        .map(|vals| ParamVector::from_values(variant, vals))
        .collect()
}

/// Grid point with the largest log marginal likelihood (first one on ties).
pub fn grid_search(
    x: &PointSet,
    y: &[f64],
    family: KernelFamily,
    grid: &[ParamVector],
) -> Result<(ParamVector, f64)> {
    grid_search_with(x, y, family, grid, Execution::default())
}

pub fn grid_search_with(
    x: &PointSet,
    y: &[f64],
    family: KernelFamily,
    grid: &[ParamVector],
    exec: Execution,
) -> Result<(ParamVector, f64)> {
    if grid.is_empty() {
        return Err(invalid("hyperparameter grid is empty"));
    }
    if let Some(p) = grid.iter().find(|p| p.variant() != family.variant) {
        return Err(invalid(format!(
            "grid point for {} in a {} search",
            p.variant(),
            family.variant
        )));
    }
    let scores = par::map_range(grid.len(), exec, |i| {
        grid[i]
            .fit(family, x, y)
            .map(|m| m.log_marginal_likelihood())
            .ok()
            .filter(|v| v.is_finite())
    });
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if let Some(s) = s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    let (i, s) = best.ok_or_else(|| {
        Error::Numerical("no grid point produced a finite log marginal likelihood".into())
    })?;
    Ok((grid[i].clone(), s))
}

/// Inverse-Gamma prior with shape `alpha` and scale `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaPrior {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(invalid(format!(
                "inverse-gamma needs shape, scale > 0, got ({shape}, {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn mode(&self) -> f64 {
        self.scale / (self.shape + 1.0)
    }

    pub fn logpdf(&self, v: f64) -> Result<f64> {
        inv_gamma_logpdf(v, self.shape, self.scale)
    }
}

pub fn inv_gamma_logpdf(v: f64, shape: f64, scale: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(invalid(format!("inverse-gamma support is v > 0, got {v}")));
    }
    if !(shape > 0.0 && scale > 0.0) {
        return Err(invalid("inverse-gamma needs shape, scale > 0"));
    }
    Ok(shape * scale.ln() - libm::lgamma(shape) - (shape + 1.0) * v.ln() - scale / v)
}

/// One prior per tunable hyperparameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSet(pub BTreeMap<ParamName, InvGammaPrior>);

impl PriorSet {
    /// Shape 2 and scale 1 for the kernel parameters; the noise variance
    /// gets scale 1e-4 so its prior mode sits well below unit kernel scale.
    pub fn default_for(variant: KernelVariant) -> Self {
        let mut m = BTreeMap::new();
        for &n in param_names(variant) {
            let p = match n {
                ParamName::NoiseVar => InvGammaPrior {
                    shape: 2.0,
                    scale: 1e-4,
                },
                _ => InvGammaPrior {
                    shape: 2.0,
                    scale: 1.0,
                },
            };
            m.insert(n, p);
        }
        Self(m)
    }

    pub fn get(&self, n: ParamName) -> Option<&InvGammaPrior> {
        self.0.get(&n)
    }

    pub fn insert(&mut self, n: ParamName, p: InvGammaPrior) {
        self.0.insert(n, p);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcConfig {
    /// Chain length including the starting point.
    pub steps: usize,
    pub seed: u64,
    pub proposal_scale: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            seed: 0,
            proposal_scale: DEFAULT_PROPOSAL_SCALE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcResult {
    /// Highest-target state visited.
    pub best: ParamVector,
    pub best_log_target: f64,
    pub initial_log_target: f64,
    /// Accepted proposals over proposals made (0 when `steps == 1`).
    pub acceptance_rate: f64,
    /// Cross-validated MSE at `best`.
    pub best_mse: f64,
}

/// Mean squared error of `CV_FOLDS`-fold cross-validated posterior means.
/// Point `i` is held out in fold `i % CV_FOLDS`.
pub fn cv_mse(
    params: &ParamVector,
    family: KernelFamily,
    x: &PointSet,
    y: &[f64],
    exec: Execution,
) -> Result<f64> {
    let n = x.len();
    if n < CV_FOLDS {
        return Err(invalid(format!(
            "cross-validation needs at least {CV_FOLDS} points, got {n}"
        )));
    }
    let (spec, noise) = params.to_model(family.depth, x.dim())?;
    let noise = noise.max(NOISE_FLOOR);
    let folds = par::map_range(CV_FOLDS, exec, |f| -> Result<f64> {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % CV_FOLDS != f);
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let m = GpModel::fit(x.select(&train), ytr, spec, noise)?;
        let pred = m.predict_mean_with(&x.select(&test), Execution::Sequential)?;
        Ok(test
            .iter()
            .zip(pred)
            .map(|(&i, p)| (p - y[i]) * (p - y[i]))
            .sum())
    });
    let mut sse = 0.0;
    for f in folds {
        sse += f?;
    }
    Ok(sse / n as f64)
}

fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// The chain's log target at `params`:
/// `-n * MSE / (2 * tau) + sum_i log p_i(theta_i)` with `tau` the sample
/// variance of `y`.
pub fn log_target(
    params: &ParamVector,
    family: KernelFamily,
    x: &PointSet,
    y: &[f64],
    priors: &PriorSet,
    exec: Execution,
) -> Result<(f64, f64)> {
    let tau = sample_variance(y).max(f64::MIN_POSITIVE);
    let mse = cv_mse(params, family, x, y, exec)?;
    let mut lp = 0.0;
    for (n, v) in params.names().iter().zip(params.values()) {
        let prior = priors
            .get(*n)
            .ok_or_else(|| invalid(format!("no prior for {}", n.as_str())))?;
        lp += prior.logpdf(v)?;
    }
    Ok((-(y.len() as f64) * mse / (2.0 * tau) + lp, mse))
}

/// Random-walk Metropolis over log hyperparameters, started at the prior
/// modes. Returns the best state visited. Deterministic for a fixed seed.
pub fn mcmc_fit(
    x: &PointSet,
    y: &[f64],
    family: KernelFamily,
    priors: &PriorSet,
    cfg: &McmcConfig,
) -> Result<McmcResult> {
    if cfg.steps == 0 {
        return Err(invalid("mcmc needs at least one step"));
    }
    if x.len() != y.len() {
        return Err(invalid("inputs and targets differ in length"));
    }
    let names = param_names(family.variant);
    let mut modes = Vec::with_capacity(names.len());
    for n in names {
        let p = priors
            .get(*n)
            .ok_or_else(|| invalid(format!("no prior for {}", n.as_str())))?;
        modes.push(p.mode());
    }
    let exec = Execution::default();
    let start = ParamVector::from_values(family.variant, &modes)?;
    let eval = |p: &ParamVector| log_target(p, family, x, y, priors, exec);
    let (init_t, init_mse) = eval(&start)?;
    if !init_t.is_finite() {
        return Err(Error::Numerical(format!(
            "mcmc target is not finite at the initial point ({init_t})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = start.clone();
    let mut current_t = init_t;
    let mut best = (start, init_t, init_mse);
    let mut accepted = 0usize;
    for _ in 1..cfg.steps {
        let proposal: Vec<f64> = current
            .log_values()
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + cfg.proposal_scale * z
            })
            .collect();
        let u: f64 = rand::Rng::random(&mut rng);
        let Ok(prop) = ParamVector::from_log_values(family.variant, proposal) else {
            continue;
        };
        // Failed fits count as zero density.
        let Ok((t, mse)) = eval(&prop) else { continue };
        if !t.is_finite() {
            continue;
        }
        if u.ln() < t - current_t {
            accepted += 1;
            current = prop;
            current_t = t;
            if t > best.1 {
                best = (current.clone(), t, mse);
            }
        }
    }
    let proposals = cfg.steps - 1;
    Ok(McmcResult {
        best: best.0,
        best_log_target: best.1,
        initial_log_target: init_t,
        acceptance_rate: if proposals == 0 {
            0.0
        } else {
            accepted as f64 / proposals as f64
        },
        best_mse: best.2,
    })
}
