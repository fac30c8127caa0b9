use dkgp::mountaincar::EnvState;
use dkgp::policy_iteration::{greedy_rollout, TrajectoryPoint};

use crate::config::RunConfig;
use crate::container::TrainedModels;
use crate::error::CliError;
use crate::output::{ArtifactDir, Table};

pub fn trajectory_table(traj: &[TrajectoryPoint]) -> Table {
    let mut t = Table::new(&["t", "x", "xdot", "F", "reward"]);
    for p in traj {
        t.push(&[p.t, p.x, p.xdot, p.force, p.reward]);
    }
    t
}

/// Rolls the true environment (as configured at training time) forward under
/// the greedy policy of the stored models.
pub fn run(
    cfg: &RunConfig,
    models: &TrainedModels,
    out: &mut ArtifactDir,
) -> Result<Vec<TrajectoryPoint>, CliError> {
    let s0 = EnvState::new(cfg.start_x, cfg.start_xdot);
    let traj = greedy_rollout(
        &models.value,
        &models.dynamics,
        models.value.env(),
        s0,
        cfg.horizon,
        models.n_forces,
    )?;
    out.write_table("trajectory.csv", &trajectory_table(&traj))?;
    Ok(traj)
}
