//! GP-based approximate policy iteration on mountain car.
//!
//! Two GPs learn the one-step dynamics `(x, xdot, F) -> x'` and
//! `(x, xdot, F) -> xdot'`. A third GP over `(x, xdot, F)` holds the value
//! function, initialised with the reward. Each sweep evaluates, for every
//! value support point, a uniform grid of candidate forces: the dynamics GPs
//! give the predicted next state, the value GP scores it, and the best score
//! feeds the Bellman update `V <- R + gamma * max_k V_k`. The value GP is then
//! refit on the new targets (same inputs and hyperparameters) until the
//! targets stop moving.

use std::time::Instant;

use crate::error::{invalid, Result};
use crate::gp::GpModel;
use crate::hyperopt::{self, KernelFamily, McmcConfig, McmcResult, ParamVector, PriorSet};
use crate::kernels::PointSet;
use crate::mountaincar::{self, EnvConfig, EnvState, ForceSampling, FullState, FORCE_BOUNDS};
use crate::par::{self, Execution};

/// Number of fresh states used to score the dynamics GPs.
pub const HELDOUT_STATES: usize = 32;

/// Deterministic sub-seed for an independent random stream.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        ^ 0x94D0_49BB_1331_11EB
}

/// Every GP in the loop sees `(x, xdot, F)` divided by the half-widths of
/// their admissible ranges, so an isotropic kernel treats the three
/// coordinates on the same footing.
pub const INPUT_SCALE: [f64; 3] = [1.0, 2.0, 4.0];

/// GP input for a state-force triple.
#[inline]
pub fn gp_input(s: EnvState, force: f64) -> [f64; 3] {
    [
        s.x / INPUT_SCALE[0],
        s.xdot / INPUT_SCALE[1],
        force / INPUT_SCALE[2],
    ]
}

fn points_of(states: &[FullState]) -> PointSet {
    let flat: Vec<f64> = states
        .iter()
        .flat_map(|s| gp_input(s.env(), s.force))
        .collect();
    PointSet::new(3, flat).expect("3-d states")
}

/// `n` forces evenly spaced over the admissible range, endpoints included.
pub fn force_grid(n: usize) -> Vec<f64> {
    let (lo, hi) = FORCE_BOUNDS;
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// How hyperparameters are chosen for every GP in the loop.
#[derive(Clone, Debug, PartialEq)]
pub struct TuningConfig {
    pub family: KernelFamily,
    pub mcmc_steps: usize,
    pub proposal_scale: f64,
    pub priors: PriorSet,
}

impl TuningConfig {
    pub fn new(family: KernelFamily, mcmc_steps: usize) -> Self {
        Self {
            family,
            mcmc_steps,
            proposal_scale: hyperopt::DEFAULT_PROPOSAL_SCALE,
            priors: PriorSet::default_for(family.variant),
        }
    }

    fn tune(&self, x: &PointSet, y: &[f64], seed: u64) -> Result<McmcResult> {
        let cfg = McmcConfig {
            steps: self.mcmc_steps,
            seed,
            proposal_scale: self.proposal_scale,
        };
        hyperopt::mcmc_fit(x, y, self.family, &self.priors, &cfg)
    }

    fn prior_modes(&self) -> Result<ParamVector> {
        let modes: Option<Vec<f64>> = hyperopt::param_names(self.family.variant)
            .iter()
            .map(|n| self.priors.get(*n).map(|p| p.mode()))
            .collect();
        let modes = modes.ok_or_else(|| invalid("missing prior"))?;
        ParamVector::from_values(self.family.variant, &modes)
    }

    fn fit(&self, params: &ParamVector, x: PointSet, y: Vec<f64>) -> Result<GpModel> {
        let (spec, noise) = params.to_model(self.family.depth, x.dim())?;
        GpModel::fit(x, y, spec, noise.max(hyperopt::NOISE_FLOOR))
    }
}

/// Learned one-step dynamics.
#[derive(Clone, Debug)]
pub struct DynamicsModel {
    pub gp_x: GpModel,
    pub gp_xdot: GpModel,
    /// Held-out RMSE of `(x', xdot')` on fresh uniform states.
    pub heldout_rmse: (f64, f64),
}

impl DynamicsModel {
    pub fn from_models(gp_x: GpModel, gp_xdot: GpModel) -> Result<Self> {
        if gp_x.inputs() != gp_xdot.inputs() {
            return Err(invalid("dynamics GPs must share training inputs"));
        }
        Ok(Self {
            gp_x,
            gp_xdot,
            heldout_rmse: (f64::NAN, f64::NAN),
        })
    }

    /// Posterior-mean next state, projected onto the admissible box.
    pub fn predict(&self, s: EnvState, force: f64) -> EnvState {
        let p = gp_input(s, force);
        EnvState::new(self.gp_x.mean_at(&p), self.gp_xdot.mean_at(&p)).clamped()
    }

    fn rmse_on(&self, states: &[FullState], cfg: &EnvConfig) -> Result<(f64, f64)> {
        let (mut ex, mut ev) = (0.0, 0.0);
        for s in states {
            let truth = mountaincar::step(s.env(), s.force, cfg)?;
            let pred = self.predict(s.env(), s.force);
            ex += (pred.x - truth.x).powi(2);
            ev += (pred.xdot - truth.xdot).powi(2);
        }
        let n = states.len() as f64;
        Ok(((ex / n).sqrt(), (ev / n).sqrt()))
    }
}

/// Samples `n_d` uniform states, steps the true environment, and fits one GP
/// per output coordinate with MCMC-tuned hyperparameters.
pub fn train_dynamics(
    cfg: &EnvConfig,
    tuning: &TuningConfig,
    n_d: usize,
    seed: u64,
) -> Result<DynamicsModel> {
    cfg.validate()?;
    if n_d < 2 {
        return Err(invalid("at least two dynamics samples are required"));
    }
    let states = mountaincar::sample_states(n_d, ForceSampling::Uniform, sub_seed(seed, 1));
    let mut nx = Vec::with_capacity(n_d);
    let mut nv = Vec::with_capacity(n_d);
    for s in &states {
        let next = mountaincar::step(s.env(), s.force, cfg)?;
        nx.push(next.x);
        nv.push(next.xdot);
    }
    let x = points_of(&states);
    let px = tuning.tune(&x, &nx, sub_seed(seed, 2))?.best;
    let pv = tuning.tune(&x, &nv, sub_seed(seed, 3))?.best;
    let gp_x = tuning.fit(&px, x.clone(), nx)?;
    let gp_xdot = tuning.fit(&pv, x, nv)?;
    let mut model = DynamicsModel::from_models(gp_x, gp_xdot)?;
    let heldout =
        mountaincar::sample_states(HELDOUT_STATES, ForceSampling::Uniform, sub_seed(seed, 4));
    model.heldout_rmse = model.rmse_on(&heldout, cfg)?;
    Ok(model)
}

/// What the value GP is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueTarget {
    /// The GP regresses the value targets `V_j` directly.
    Full,
    /// The GP regresses `V_j - R(s_j)` and the exact reward is added back at
    /// prediction time.
    Continuation,
}

impl ValueTarget {
    pub fn name(self) -> &'static str {
        match self {
            ValueTarget::Full => "full",
            ValueTarget::Continuation => "continuation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(ValueTarget::Full),
            "continuation" => Some(ValueTarget::Continuation),
            _ => None,
        }
    }
}

/// Value-function GP over `(x, xdot, F)` and its current targets.
#[derive(Clone, Debug)]
pub struct ValueModel {
    pub gp: GpModel,
    support: Vec<FullState>,
    values: Vec<f64>,
    target: ValueTarget,
    env: EnvConfig,
}

fn support_rewards(support: &[FullState], env: &EnvConfig) -> Vec<f64> {
    support
        .iter()
        .map(|s| mountaincar::reward(s.env(), env))
        .collect()
}

fn gp_targets(
    values: &[f64],
    support: &[FullState],
    target: ValueTarget,
    env: &EnvConfig,
) -> Vec<f64> {
    match target {
        ValueTarget::Full => values.to_vec(),
        ValueTarget::Continuation => values
            .iter()
            .zip(support_rewards(support, env))
            .map(|(v, r)| v - r)
            .collect(),
    }
}

impl ValueModel {
    /// Wraps a GP whose training inputs are `support` and whose targets
    /// already encode `values` under `target`.
    pub fn from_gp(
        gp: GpModel,
        support: Vec<FullState>,
        values: Vec<f64>,
        target: ValueTarget,
        env: EnvConfig,
    ) -> Result<Self> {
        if support.len() != gp.inputs().len() || values.len() != support.len() {
            return Err(invalid("support size differs from GP training set"));
        }
        Ok(Self {
            gp,
            support,
            values,
            target,
            env,
        })
    }

    /// Fits a value model on `support` with the given hyperparameters.
    pub fn fit(
        support: Vec<FullState>,
        values: Vec<f64>,
        spec: crate::KernelSpec,
        noise_var: f64,
        target: ValueTarget,
        env: EnvConfig,
    ) -> Result<Self> {
        if values.len() != support.len() {
            return Err(invalid("one value per support point is required"));
        }
        let y = gp_targets(&values, &support, target, &env);
        let gp = GpModel::fit(points_of(&support), y, spec, noise_var)?;
        Self::from_gp(gp, support, values, target, env)
    }

    pub fn support(&self) -> &[FullState] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn target(&self) -> ValueTarget {
        self.target
    }

    pub fn env(&self) -> &EnvConfig {
        &self.env
    }

    /// Same support and hyperparameters, new targets.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let y = gp_targets(&values, &self.support, self.target, &self.env);
        Ok(Self {
            gp: self.gp.with_targets(y)?,
            support: self.support.clone(),
            values,
            target: self.target,
            env: self.env.clone(),
        })
    }

    /// Same support and targets, new hyperparameters.
    pub fn refit(&self, spec: crate::KernelSpec, noise_var: f64) -> Result<Self> {
        Self::fit(
            self.support.clone(),
            self.values.clone(),
            spec,
            noise_var,
            self.target,
            self.env.clone(),
        )
    }

    /// Predicted value of `(s, force)`.
    #[inline]
    pub fn mean_at(&self, s: EnvState, force: f64) -> f64 {
        let g = self.gp.mean_at(&gp_input(s, force));
        match self.target {
            ValueTarget::Full => g,
            ValueTarget::Continuation => g + mountaincar::reward(s, &self.env),
        }
    }

    /// `(x, xdot)` projections of the support, used as sweep anchors.
    pub fn anchors(&self) -> Vec<EnvState> {
        self.support.iter().map(|s| s.env()).collect()
    }

    /// The GP's own training targets (`V` or `V - R`).
    pub fn gp_targets(&self) -> &[f64] {
        self.gp.targets()
    }
}

/// Initialises the value function with the reward at `n_v` uniform support
/// triples.
///
/// With [`ValueTarget::Full`] the hyperparameters are tuned on the reward. With
/// [`ValueTarget::Continuation`] the GP targets are all zero at this point, so
/// the model is fitted with the prior modes and tuned later by [`iterate`].
pub fn init_value(
    cfg: &EnvConfig,
    tuning: &TuningConfig,
    n_v: usize,
    target: ValueTarget,
    seed: u64,
) -> Result<ValueModel> {
    cfg.validate()?;
    if n_v < 2 {
        return Err(invalid("at least two value support points are required"));
    }
    let support = mountaincar::sample_states(n_v, ForceSampling::Uniform, sub_seed(seed, 5));
    let values = support_rewards(&support, cfg);
    let x = points_of(&support);
    let params = match target {
        ValueTarget::Full => tuning.tune(&x, &values, sub_seed(seed, 6))?.best,
        ValueTarget::Continuation => tuning.prior_modes()?,
    };
    let (spec, noise) = params.to_model(tuning.family.depth, 3)?;
    ValueModel::fit(
        support,
        values,
        spec,
        noise.max(hyperopt::NOISE_FLOOR),
        target,
        cfg.clone(),
    )
}

/// Greedy forces at a set of anchor states.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub anchors: Vec<EnvState>,
    pub actions: Vec<f64>,
    pub force_grid: Vec<f64>,
}

/// Output of one Bellman sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub new_values: Vec<f64>,
    pub policy: Policy,
    /// `max_j |new_j - old_j|`.
    pub max_delta: f64,
    pub mean_delta: f64,
}

/// Predicted next states for every anchor and every candidate force,
/// `out[j][k]` for anchor `j` and force `k`.
pub fn predict_transitions(
    dynamics: &DynamicsModel,
    anchors: &[EnvState],
    forces: &[f64],
    exec: Execution,
) -> Vec<Vec<EnvState>> {
    par::map_range(anchors.len(), exec, |j| {
        forces
            .iter()
            .map(|&f| dynamics.predict(anchors[j], f))
            .collect()
    })
}

/// Index of the best score. Ties go to the smallest `|F|`, then to the
/// negative force.
pub fn greedy_index(scores: &[f64], forces: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..scores.len() {
        let (v, bv) = (scores[k], scores[best]);
        let (f, bf) = (forces[k], forces[best]);
        let better = v > bv || (v == bv && (f.abs() < bf.abs() || (f.abs() == bf.abs() && f < bf)));
        if better {
            best = k;
        }
    }
    best
}

/// Bellman sweep given precomputed transitions. `old_values[j]` is the
/// current target at anchor `j`.
pub fn sweep_with_transitions(
    value: &ValueModel,
    anchors: &[EnvState],
    transitions: &[Vec<EnvState>],
    forces: &[f64],
    old_values: &[f64],
    cfg: &EnvConfig,
    exec: Execution,
) -> Result<SweepResult> {
    if anchors.len() != transitions.len() || anchors.len() != old_values.len() {
        return Err(invalid("anchors, transitions and values differ in length"));
    }
    if forces.len() < 2 {
        return Err(invalid("at least two candidate forces are required"));
    }
    let best = par::map_range(anchors.len(), exec, |j| {
        let scores: Vec<f64> = transitions[j]
            .iter()
            .zip(forces)
            .map(|(next, &f)| value.mean_at(*next, f))
            .collect();
        let k = greedy_index(&scores, forces);
        (scores[k], forces[k])
    });
    let mut new_values = Vec::with_capacity(anchors.len());
    let mut actions = Vec::with_capacity(anchors.len());
    let (mut max_delta, mut sum_delta) = (0.0f64, 0.0);
    for ((a, (vmax, f)), old) in anchors.iter().zip(best).zip(old_values) {
        let v = mountaincar::reward(*a, cfg) + cfg.discount * vmax;
        let d = (v - old).abs();
        max_delta = max_delta.max(d);
        sum_delta += d;
        new_values.push(v);
        actions.push(f);
    }
    Ok(SweepResult {
        new_values,
        policy: Policy {
            anchors: anchors.to_vec(),
            actions,
            force_grid: forces.to_vec(),
        },
        max_delta,
        mean_delta: sum_delta / anchors.len() as f64,
    })
}

/// One Bellman sweep over `anchors`, which must line up with the value
/// model's support.
pub fn value_sweep(
    dynamics: &DynamicsModel,
    value: &ValueModel,
    anchors: &[EnvState],
    cfg: &EnvConfig,
    n_forces: usize,
) -> Result<SweepResult> {
    value_sweep_with(
        dynamics,
        value,
        anchors,
        cfg,
        n_forces,
        Execution::default(),
    )
}

pub fn value_sweep_with(
    dynamics: &DynamicsModel,
    value: &ValueModel,
    anchors: &[EnvState],
    cfg: &EnvConfig,
    n_forces: usize,
    exec: Execution,
) -> Result<SweepResult> {
    if n_forces < 2 {
        return Err(invalid("at least two candidate forces are required"));
    }
    if anchors.iter().any(|a| !a.in_bounds()) {
        return Err(invalid("sweep anchors must lie inside the state bounds"));
    }
    let forces = force_grid(n_forces);
    let transitions = predict_transitions(dynamics, anchors, &forces, exec);
    sweep_with_transitions(
        value,
        anchors,
        &transitions,
        &forces,
        value.values(),
        cfg,
        exec,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub max_delta: f64,
    pub mean_delta: f64,
    pub max_value: f64,
    /// Seconds spent in the sweep and refit; excluded from artifacts.
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationDiagnostics {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl IterationDiagnostics {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn max_deltas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.max_delta).collect()
    }
}

/// Everything that configures one policy-iteration run.
#[derive(Clone, Debug, PartialEq)]
pub struct PiConfig {
    pub env: EnvConfig,
    pub tuning: TuningConfig,
    pub n_dynamics: usize,
    pub n_value: usize,
    pub n_forces: usize,
    pub seed: u64,
    /// Relative sup-norm tolerance on value targets.
    pub tol: f64,
    pub max_iter: usize,
    pub value_target: ValueTarget,
}

impl PiConfig {
    pub fn new(env: EnvConfig, tuning: TuningConfig) -> Self {
        Self {
            env,
            tuning,
            n_dynamics: 128,
            n_value: 512,
            n_forces: 128,
            seed: 0,
            tol: 1e-2,
            max_iter: 30,
            value_target: ValueTarget::Continuation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if self.n_forces < 2 {
            return Err(invalid("n_forces must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PiOutcome {
    pub dynamics: DynamicsModel,
    pub initial_value: ValueModel,
    pub value: ValueModel,
    pub policy: Policy,
    pub diagnostics: IterationDiagnostics,
    /// Value targets after each sweep; entry 0 is the reward.
    pub value_history: Vec<Vec<f64>>,
}

/// Iterates sweeps and value refits from an already initialised pair of
/// models.
pub fn iterate(
    dynamics: &DynamicsModel,
    initial: &ValueModel,
    cfg: &PiConfig,
    exec: Execution,
) -> Result<(ValueModel, Policy, IterationDiagnostics, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let anchors = initial.anchors();
    let forces = force_grid(cfg.n_forces);
    // Dynamics and anchors are fixed, so transitions are computed once.
    let transitions = predict_transitions(dynamics, &anchors, &forces, exec);

    let mut value = initial.clone();
    let mut history = vec![initial.values().to_vec()];
    let mut records = Vec::new();
    let mut converged = false;
    let mut policy = None;
    for it in 1..=cfg.max_iter {
        let start = Instant::now();
        let sweep = sweep_with_transitions(
            &value,
            &anchors,
            &transitions,
            &forces,
            value.values(),
            &cfg.env,
            exec,
        )?;
        if !sweep.max_delta.is_finite() {
            return Err(crate::Error::Numerical(format!(
                "value update diverged at iteration {it}"
            )));
        }
        let max_value = sweep.new_values.iter().cloned().fold(0.0f64, f64::max);
        value = if it == 1 && value.target() == ValueTarget::Continuation {
            // The continuation targets are identically zero before the first
            // sweep, so hyperparameters are tuned here and then frozen.
            let fresh = value.with_values(sweep.new_values.clone())?;
            let x = fresh.gp.inputs().clone();
            let best = cfg
                .tuning
                .tune(&x, fresh.gp_targets(), sub_seed(cfg.seed, 6))?
                .best;
            let (spec, noise) = best.to_model(cfg.tuning.family.depth, 3)?;
            fresh.refit(spec, noise.max(hyperopt::NOISE_FLOOR))?
        } else {
            value.with_values(sweep.new_values.clone())?
        };
        history.push(sweep.new_values);
        records.push(IterationRecord {
            iteration: it,
            max_delta: sweep.max_delta,
            mean_delta: sweep.mean_delta,
            max_value,
            wall_time: start.elapsed().as_secs_f64(),
        });
        policy = Some(sweep.policy);
        if sweep.max_delta < cfg.tol * max_value.max(1.0) {
            converged = true;
            break;
        }
    }
    Ok((
        value,
        policy.expect("at least one iteration"),
        IterationDiagnostics { records, converged },
        history,
    ))
}

/// Trains the dynamics, initialises the value GP and iterates to a fixed
/// point (or `max_iter`).
pub fn run_policy_iteration(cfg: &PiConfig) -> Result<PiOutcome> {
    cfg.validate()?;
    let dynamics = train_dynamics(&cfg.env, &cfg.tuning, cfg.n_dynamics, cfg.seed)?;
    let initial_value = init_value(
        &cfg.env,
        &cfg.tuning,
        cfg.n_value,
        cfg.value_target,
        cfg.seed,
    )?;
    let (value, policy, diagnostics, value_history) =
        iterate(&dynamics, &initial_value, cfg, Execution::default())?;
    Ok(PiOutcome {
        dynamics,
        initial_value,
        value,
        policy,
        diagnostics,
        value_history,
    })
}

/// One row of a rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub t: f64,
    pub x: f64,
    pub xdot: f64,
    /// Force chosen at this state.
    pub force: f64,
    pub reward: f64,
}

/// Greedy force at `s` under the learned dynamics and value.
pub fn greedy_action(
    value: &ValueModel,
    dynamics: &DynamicsModel,
    s: EnvState,
    forces: &[f64],
) -> f64 {
    let scores: Vec<f64> = forces
        .iter()
        .map(|&f| value.mean_at(dynamics.predict(s, f), f))
        .collect();
    forces[greedy_index(&scores, forces)]
}

/// Rolls the true environment forward from `s0`, choosing each force greedily
/// with the learned models. Returns `horizon + 1` rows including `s0`.
pub fn greedy_rollout(
    value: &ValueModel,
    dynamics: &DynamicsModel,
    cfg: &EnvConfig,
    s0: EnvState,
    horizon: usize,
    n_forces: usize,
) -> Result<Vec<TrajectoryPoint>> {
    cfg.validate()?;
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if !s0.in_bounds() {
        return Err(invalid("initial state is out of bounds"));
    }
    let forces = force_grid(n_forces.max(2));
    let mut out = Vec::with_capacity(horizon + 1);
    let mut s = s0;
    for k in 0..=horizon {
        let f = greedy_action(value, dynamics, s, &forces);
        out.push(TrajectoryPoint {
            step: k,
            t: k as f64 * cfg.dt,
            x: s.x,
            xdot: s.xdot,
            force: f,
            reward: mountaincar::reward(s, cfg),
        });
        if k < horizon {
            s = mountaincar::step(s, f, cfg)?;
        }
    }
    Ok(out)
}
