//! The one-dimensional "simple machine" regression study.
//!
//! Observations of `y = theta x / (1 - x/a) + noise` on a short training
//! interval are fitted with RBF, CK and NTK GPs, each tuned by grid search on
//! the log marginal likelihood, and the posteriors are tabulated on a wider
//! query interval.

use dkgp::hyperopt::{grid_search, log_grid, param_names, product_grid, KernelFamily};
use dkgp::{GpModel, KernelVariant, PointSet, PosteriorSummary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{ArtifactDir, Table};

pub const VARIANTS: [KernelVariant; 3] =
    [KernelVariant::Rbf, KernelVariant::Ck, KernelVariant::Ntk];

pub fn toy_dynamics(x: f64, theta: f64, a: f64) -> Result<f64, CliError> {
    if x == a {
        return Err(CliError::Arg(format!("x = a = {a} is a pole")));
    }
    Ok(theta * x / (1.0 - x / a))
}

/// `n` evenly spaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Clone, Debug)]
pub struct ToyData {
    pub x: Vec<f64>,
    pub y_true: Vec<f64>,
    pub y_obs: Vec<f64>,
    pub query: Vec<f64>,
}

pub fn simulate(cfg: &RunConfig) -> Result<ToyData, CliError> {
    if cfg.toy_n_train < 2 || cfg.toy_n_query < 2 {
        return Err(CliError::Arg(
            "toy study needs at least two train and query points".into(),
        ));
    }
    let x = linspace(cfg.toy_train_lo, cfg.toy_train_hi, cfg.toy_n_train);
    if x.contains(&cfg.toy_a) {
        return Err(CliError::Arg(format!(
            "toy_a = {} coincides with a training input",
            cfg.toy_a
        )));
    }
    let noise =
        Normal::new(0.0, cfg.toy_noise).map_err(|e| CliError::Arg(format!("toy_noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let y_true = x
        .iter()
        .map(|&xi| toy_dynamics(xi, cfg.toy_theta, cfg.toy_a))
        .collect::<Result<Vec<_>, _>>()?;
    let y_obs = y_true.iter().map(|y| y + noise.sample(&mut rng)).collect();
    Ok(ToyData {
        x,
        y_true,
        y_obs,
        query: linspace(cfg.toy_query_lo, cfg.toy_query_hi, cfg.toy_n_query),
    })
}

#[derive(Clone, Debug)]
pub struct ToyFit {
    pub variant: KernelVariant,
    pub model: GpModel,
    pub log_ml: f64,
    pub posterior: PosteriorSummary,
}

pub fn fit_variant(
    data: &ToyData,
    variant: KernelVariant,
    cfg: &RunConfig,
) -> Result<ToyFit, CliError> {
    if !(cfg.toy_grid_lo > 0.0 && cfg.toy_grid_hi >= cfg.toy_grid_lo)
        || cfg.toy_grid_per_decade == 0
    {
        return Err(CliError::Arg(
            "toy grid needs 0 < lo <= hi and per_decade >= 1".into(),
        ));
    }
    let axis = log_grid(cfg.toy_grid_lo, cfg.toy_grid_hi, cfg.toy_grid_per_decade);
    let axes = vec![axis; param_names(variant).len()];
    let grid = product_grid(variant, &axes)?;
    let x = PointSet::from_scalars(&data.x);
    let family = KernelFamily::new(variant, cfg.depth);
    let (best, log_ml) = grid_search(&x, &data.y_obs, family, &grid)?;
    let model = best.fit(family, &x, &data.y_obs)?;
    let posterior = model.posterior(&PointSet::from_scalars(&data.query))?;
    Ok(ToyFit {
        variant,
        model,
        log_ml,
        posterior,
    })
}

pub fn posterior_table(query: &[f64], p: &PosteriorSummary) -> Table {
    let mut t = Table::new(&["x_query", "post_mean", "post_var", "ci_lo", "ci_hi"]);
    for ((x, (m, v)), (lo, hi)) in query
        .iter()
        .zip(p.mean.iter().zip(&p.var))
        .zip(p.interval95())
    {
        t.push(&[*x, *m, *v, lo, hi]);
    }
    t
}

pub fn observations_table(d: &ToyData) -> Table {
    let mut t = Table::new(&["x", "y_true", "y_obs"]);
    for i in 0..d.x.len() {
        t.push(&[d.x[i], d.y_true[i], d.y_obs[i]]);
    }
    t
}

/// Selected hyperparameters and log marginal likelihood per kernel.
pub fn hyperparameter_table(fits: &[ToyFit]) -> Table {
    let mut t = Table::new(&["kernel", "parameter", "value"]);
    for f in fits {
        for (name, v) in crate::train::spec_params(f.model.spec(), f.model.noise_var()) {
            t.push_raw(vec![
                f.variant.name().into(),
                name.into(),
                crate::output::fmt_sig(v),
            ]);
        }
        t.push_raw(vec![
            f.variant.name().into(),
            "log_ml".into(),
            crate::output::fmt_sig(f.log_ml),
        ]);
    }
    t
}

pub fn run(cfg: &RunConfig, out: &mut ArtifactDir) -> Result<Vec<ToyFit>, CliError> {
    let data = simulate(cfg)?;
    let mut fits = Vec::new();
    for v in VARIANTS {
        let fit = fit_variant(&data, v, cfg)?;
        out.write_table(
            &format!("toy_{}.csv", v.name()),
            &posterior_table(&data.query, &fit.posterior),
        )?;
        fits.push(fit);
    }
    out.write_table("toy_observations.csv", &observations_table(&data))?;
    out.write_table("toy_hyperparameters.csv", &hyperparameter_table(&fits))?;
    Ok(fits)
}
