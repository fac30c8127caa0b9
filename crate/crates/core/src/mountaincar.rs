//! Ground-truth mountain-car environment.
//!
//! The track altitude is `x^2 + x` left of the origin and `x / sqrt(1 + 5x^2)`
//! right of it. The car obeys `x'' = F - G sin(atan(H'(x)))`, integrated with
//! classical RK4. Position is confined to `[-1, 1]` (hitting a wall stops the
//! car), velocity saturates at `[-2, 2]` and force at `[-4, 4]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub const X_BOUNDS: (f64, f64) = (-1.0, 1.0);
pub const XDOT_BOUNDS: (f64, f64) = (-2.0, 2.0);
pub const FORCE_BOUNDS: (f64, f64) = (-4.0, 4.0);

/// Phase-space point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub x: f64,
    pub xdot: f64,
}

impl EnvState {
    pub const START: EnvState = EnvState { x: -0.5, xdot: 0.0 };

    pub fn new(x: f64, xdot: f64) -> Self {
        Self { x, xdot }
    }

    pub fn in_bounds(&self) -> bool {
        (X_BOUNDS.0..=X_BOUNDS.1).contains(&self.x)
            && (XDOT_BOUNDS.0..=XDOT_BOUNDS.1).contains(&self.xdot)
    }

    /// Projects onto the admissible box.
    pub fn clamped(self) -> Self {
        Self {
            x: self.x.clamp(X_BOUNDS.0, X_BOUNDS.1),
            xdot: self.xdot.clamp(XDOT_BOUNDS.0, XDOT_BOUNDS.1),
        }
    }

    pub fn with_force(self, force: f64) -> FullState {
        FullState {
            x: self.x,
            xdot: self.xdot,
            force,
        }
    }
}

/// Phase-space point plus the applied horizontal force.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FullState {
    pub x: f64,
    pub xdot: f64,
    pub force: f64,
}

impl FullState {
    pub fn env(&self) -> EnvState {
        EnvState {
            x: self.x,
            xdot: self.xdot,
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.xdot, self.force]
    }

    pub fn in_bounds(&self) -> bool {
        self.env().in_bounds() && (FORCE_BOUNDS.0..=FORCE_BOUNDS.1).contains(&self.force)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub gravity: f64,
    /// Seconds between decisions.
    pub dt: f64,
    /// RK4 substeps per `dt`.
    pub substeps: usize,
    pub reward_center: (f64, f64),
    pub reward_sigma: f64,
    pub discount: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            dt: 0.3,
            substeps: 30,
            reward_center: (0.6, 0.0),
            reward_sigma: 0.05,
            discount: 0.8,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(invalid("substeps must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(invalid(format!(
                "discount must lie in [0, 1], got {}",
                self.discount
            )));
        }
        if !(self.reward_sigma > 0.0 && self.reward_sigma.is_finite()) {
            return Err(invalid("reward_sigma must be positive"));
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return Err(invalid("gravity must be positive"));
        }
        Ok(())
    }
}

pub fn altitude(x: f64) -> f64 {
    if x < 0.0 {
        x * x + x
    } else {
        x / (1.0 + 5.0 * x * x).sqrt()
    }
}

/// Derivative of [`altitude`].
pub fn slope(x: f64) -> f64 {
    if x < 0.0 {
        2.0 * x + 1.0
    } else {
        (1.0 + 5.0 * x * x).powf(-1.5)
    }
}

#[inline]
fn accel(x: f64, force: f64, gravity: f64) -> f64 {
    force - gravity * slope(x).atan().sin()
}

fn rk4(x: f64, v: f64, force: f64, gravity: f64, h: f64) -> (f64, f64) {
    let (k1x, k1v) = (v, accel(x, force, gravity));
    let (k2x, k2v) = (v + 0.5 * h * k1v, accel(x + 0.5 * h * k1x, force, gravity));
    let (k3x, k3v) = (v + 0.5 * h * k2v, accel(x + 0.5 * h * k2x, force, gravity));
    let (k4x, k4v) = (v + h * k3v, accel(x + h * k3x, force, gravity));
    (
        x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    )
}

/// Advances the car by one decision interval under a constant force.
///
/// Bounds are enforced after every substep: velocity saturates, and leaving
/// `[-1, 1]` pins the car to the wall with zero velocity.
pub fn step(s: EnvState, force: f64, cfg: &EnvConfig) -> Result<EnvState> {
    if !(s.x.is_finite() && s.xdot.is_finite() && force.is_finite()) {
        return Err(invalid("step inputs must be finite"));
    }
    let force = force.clamp(FORCE_BOUNDS.0, FORCE_BOUNDS.1);
    let h = cfg.dt / cfg.substeps as f64;
    let (mut x, mut v) = (s.x, s.xdot);
    for _ in 0..cfg.substeps {
        (x, v) = rk4(x, v, force, cfg.gravity, h);
        v = v.clamp(XDOT_BOUNDS.0, XDOT_BOUNDS.1);
        if !(X_BOUNDS.0..=X_BOUNDS.1).contains(&x) {
            x = x.clamp(X_BOUNDS.0, X_BOUNDS.1);
            v = 0.0;
        }
    }
    Ok(EnvState { x, xdot: v })
}

/// Isotropic bivariate normal density centred on the target.
pub fn reward(s: EnvState, cfg: &EnvConfig) -> f64 {
    let s2 = cfg.reward_sigma * cfg.reward_sigma;
    let dx = s.x - cfg.reward_center.0;
    let dv = s.xdot - cfg.reward_center.1;
    (-(dx * dx + dv * dv) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
}

/// How [`sample_states`] sets the force coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ForceSampling {
    Uniform,
    Fixed(f64),
}

/// `n` i.i.d. uniform states over the admissible box.
pub fn sample_states(n: usize, force: ForceSampling, seed: u64) -> Vec<FullState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = rng.random_range(X_BOUNDS.0..=X_BOUNDS.1);
            let xdot = rng.random_range(XDOT_BOUNDS.0..=XDOT_BOUNDS.1);
            let force = match force {
                ForceSampling::Uniform => rng.random_range(FORCE_BOUNDS.0..=FORCE_BOUNDS.1),
                ForceSampling::Fixed(f) => f,
            };
            FullState { x, xdot, force }
        })
        .collect()
}
