//! Mountain-car policy iteration and its plot-data artifacts.

use dkgp::mountaincar::{step, EnvConfig, EnvState};
use dkgp::policy_iteration::{
    run_policy_iteration, DynamicsModel, IterationDiagnostics, PiOutcome, Policy, ValueModel,
};
use dkgp::KernelSpec;

use crate::config::RunConfig;
use crate::container::{self, TrainedModels};
use crate::error::CliError;
use crate::output::{fmt_sig, ArtifactDir, Table};
use crate::toy::linspace;

/// Named hyperparameters of a fitted GP, noise variance last.
pub fn spec_params(spec: &KernelSpec, noise_var: f64) -> Vec<(&'static str, f64)> {
    let mut v = match spec {
        KernelSpec::Rbf { lengthscale } => vec![("lengthscale", *lengthscale)],
        KernelSpec::Ck(p) | KernelSpec::Ntk(p) => vec![
            ("sigma_w", p.sigma_w),
            ("sigma_b", p.sigma_b),
            ("depth", p.depth as f64),
        ],
    };
    v.push(("noise_var", noise_var));
    v
}

/// Row-major `(x, xdot)` grid over the state box, `x` varying slowest.
pub fn state_grid(n: usize) -> Vec<EnvState> {
    let xs = linspace(-1.0, 1.0, n);
    let vs = linspace(-2.0, 2.0, n);
    xs.iter()
        .flat_map(|&x| vs.iter().map(move |&v| EnvState::new(x, v)))
        .collect()
}

pub fn quiver_table(
    dynamics: &DynamicsModel,
    env: &EnvConfig,
    n: usize,
) -> Result<Table, CliError> {
    let mut t = Table::new(&[
        "x",
        "xdot",
        "true_next_x",
        "true_next_xdot",
        "pred_next_x",
        "pred_next_xdot",
    ]);
    for s in state_grid(n) {
        let truth = step(s, 0.0, env)?;
        let pred = dynamics.predict(s, 0.0);
        t.push(&[s.x, s.xdot, truth.x, truth.xdot, pred.x, pred.xdot]);
    }
    Ok(t)
}

pub fn value_surface(value: &ValueModel, n: usize) -> Table {
    let mut t = Table::new(&["x", "xdot", "value"]);
    for s in state_grid(n) {
        t.push(&[s.x, s.xdot, value.mean_at(s, 0.0)]);
    }
    t
}

pub fn policy_table(p: &Policy) -> Table {
    let mut t = Table::new(&["x", "xdot", "force"]);
    for (a, f) in p.anchors.iter().zip(&p.actions) {
        t.push(&[a.x, a.xdot, *f]);
    }
    t
}

pub fn diagnostics_table(d: &IterationDiagnostics) -> Table {
    let mut t = Table::new(&[
        "iteration",
        "max_delta",
        "mean_delta",
        "max_value",
        "converged",
    ]);
    let last = d.records.len();
    for r in &d.records {
        t.push_raw(vec![
            r.iteration.to_string(),
            fmt_sig(r.max_delta),
            fmt_sig(r.mean_delta),
            fmt_sig(r.max_value),
            (d.converged && r.iteration == last).to_string(),
        ]);
    }
    t
}

pub fn hyperparameter_table(out: &PiOutcome) -> Table {
    let mut t = Table::new(&["model", "parameter", "value"]);
    let models = [
        ("dynamics_x", &out.dynamics.gp_x),
        ("dynamics_xdot", &out.dynamics.gp_xdot),
        ("value", &out.value.gp),
    ];
    for (name, gp) in models {
        for (p, v) in spec_params(gp.spec(), gp.noise_var()) {
            t.push_raw(vec![name.into(), p.into(), fmt_sig(v)]);
        }
    }
    let (rx, rv) = out.dynamics.heldout_rmse;
    t.push_raw(vec![
        "dynamics_x".into(),
        "heldout_rmse".into(),
        fmt_sig(rx),
    ]);
    t.push_raw(vec![
        "dynamics_xdot".into(),
        "heldout_rmse".into(),
        fmt_sig(rv),
    ]);
    t
}

/// Writes every training artifact. Returns the outcome whether or not the
/// run converged; the caller maps non-convergence to its exit code.
pub fn run(cfg: &RunConfig, out: &mut ArtifactDir) -> Result<PiOutcome, CliError> {
    let pi = cfg.pi_config()?;
    if cfg.quiver_grid < 2 || cfg.surface_grid < 2 {
        return Err(CliError::Arg(
            "plot grids need at least 2 points per axis".into(),
        ));
    }
    let outcome = run_policy_iteration(&pi)?;
    for r in &outcome.diagnostics.records {
        eprintln!(
            "iteration {:>2}: max_delta {:.4e} max_value {:.4} ({:.2}s)",
            r.iteration, r.max_delta, r.max_value, r.wall_time
        );
    }

    out.write_table(
        "quiver.csv",
        &quiver_table(&outcome.dynamics, &pi.env, cfg.quiver_grid)?,
    )?;
    for (k, values) in outcome.value_history.iter().enumerate() {
        let model = if k == 0 {
            outcome.initial_value.clone()
        } else {
            outcome.value.with_values(values.clone())?
        };
        out.write_table(
            &format!("value_iter_{k:02}.csv"),
            &value_surface(&model, cfg.surface_grid),
        )?;
    }
    out.write_table("policy.csv", &policy_table(&outcome.policy))?;
    out.write_table("diagnostics.csv", &diagnostics_table(&outcome.diagnostics))?;
    out.write_table("hyperparameters.csv", &hyperparameter_table(&outcome))?;
    let models = TrainedModels {
        dynamics: outcome.dynamics.clone(),
        value: outcome.value.clone(),
        n_forces: pi.n_forces,
    };
    out.write(container::FILE_NAME, &container::encode(&models))?;
    Ok(outcome)
}
