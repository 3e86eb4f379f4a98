//! Cart-pole with cart and pivot friction, plus actuator and sensor noise
//! variants.
//!
//! | variant | actuator noise | sensor noise |
//! |---------|----------------|--------------|
//! | v0      | 0              | 0            |
//! | v1      | 5 %            | 0            |
//! | v2      | 10 %           | 0            |
//! | v3      | 0              | 5 %          |
//!
//! Noise is multiplicative: a noisy value `v` becomes `v·(1 + u)` with
//! `u ~ U(−η, η)`. Sensor noise only corrupts what the agent sees; the
//! termination test always uses the true state.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvVariant {
    V0,
    V1,
    V2,
    V3,
}

impl EnvVariant {
    pub const ALL: [EnvVariant; 4] = [EnvVariant::V0, EnvVariant::V1, EnvVariant::V2, EnvVariant::V3];

    /// `(actuator η, sensor η)`.
    pub fn noise_levels(self) -> (f64, f64) {
        match self {
            EnvVariant::V0 => (0.0, 0.0),
            EnvVariant::V1 => (0.05, 0.0),
            EnvVariant::V2 => (0.10, 0.0),
            EnvVariant::V3 => (0.0, 0.05),
        }
    }
}

impl fmt::Display for EnvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EnvVariant::V0 => "v0",
            EnvVariant::V1 => "v1",
            EnvVariant::V2 => "v2",
            EnvVariant::V3 => "v3",
        };
        f.write_str(s)
    }
}

impl FromStr for EnvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v0" => Ok(EnvVariant::V0),
            "v1" => Ok(EnvVariant::V1),
            "v2" => Ok(EnvVariant::V2),
            "v3" => Ok(EnvVariant::V3),
            other => Err(Error::Config(format!(
                "unknown environment variant {other:?} (expected v0, v1, v2 or v3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub variant: EnvVariant,
    pub mu_cart: f64,
    pub mu_pole: f64,
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub theta_limit_deg: f64,
    pub x_limit: f64,
    pub max_steps: usize,
    /// Replaces the variant's actuator noise level when set.
    #[serde(default)]
    pub actuator_noise_override: Option<f64>,
    /// Replaces the variant's sensor noise level when set.
    #[serde(default)]
    pub sensor_noise_override: Option<f64>,
}

impl EnvConfig {
    pub fn new(variant: EnvVariant) -> Self {
        Self {
            variant,
            mu_cart: 5e-4,
            mu_pole: 2e-6,
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            theta_limit_deg: 15.0,
            x_limit: 2.4,
            max_steps: 200,
            actuator_noise_override: None,
            sensor_noise_override: None,
        }
    }

    pub fn noise_levels(&self) -> (f64, f64) {
        let (a, s) = self.variant.noise_levels();
        (
            self.actuator_noise_override.unwrap_or(a),
            self.sensor_noise_override.unwrap_or(s),
        )
    }

    pub fn theta_limit(&self) -> f64 {
        self.theta_limit_deg.to_radians()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gravity", self.gravity),
            ("mass_cart", self.mass_cart),
            ("mass_pole", self.mass_pole),
            ("half_length", self.half_length),
            ("force_mag", self.force_mag),
            ("tau", self.tau),
            ("theta_limit_deg", self.theta_limit_deg),
            ("x_limit", self.x_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("mu_cart", self.mu_cart), ("mu_pole", self.mu_pole)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        let (a, s) = self.noise_levels();
        if !(0.0..1.0).contains(&a) || !(0.0..1.0).contains(&s) {
            return Err(Error::Config(format!("noise levels ({a}, {s}) outside [0, 1)")));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl EnvState {
    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            x: a[0],
            x_dot: a[1],
            theta: a[2],
            theta_dot: a[3],
        }
    }
}

/// Sign with `sgn(0) = 0`.
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(ẍ, θ̈)` for the given state and applied force.
pub fn accelerations(cfg: &EnvConfig, s: &EnvState, force: f64) -> (f64, f64) {
    let total_mass = cfg.mass_cart + cfg.mass_pole;
    let pole_ml = cfg.mass_pole * cfg.half_length;
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + pole_ml * s.theta_dot * s.theta_dot * sin - cfg.mu_cart * sgn(s.x_dot))
        / total_mass;
    let theta_acc = (cfg.gravity * sin - cos * temp - cfg.mu_pole * s.theta_dot / pole_ml)
        / (cfg.half_length * (4.0 / 3.0 - cfg.mass_pole * cos * cos / total_mass));
    let x_acc = temp - pole_ml * theta_acc * cos / total_mass;
    (x_acc, theta_acc)
}

/// One explicit Euler step under a fixed force.
pub fn integrate(cfg: &EnvConfig, s: &EnvState, force: f64) -> EnvState {
    let (x_acc, theta_acc) = accelerations(cfg, s, force);
    EnvState {
        x: s.x + cfg.tau * s.x_dot,
        x_dot: s.x_dot + cfg.tau * x_acc,
        theta: s.theta + cfg.tau * s.theta_dot,
        theta_dot: s.theta_dot + cfg.tau * theta_acc,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    /// What the agent observes; differs from `state` only under sensor noise.
    pub observation: [f64; 4],
    pub reward: f64,
    pub done: bool,
}

/// One episode-stateful environment instance.
#[derive(Debug, Clone)]
pub struct CartPole {
    config: EnvConfig,
    state: EnvState,
    steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: EnvState::default(),
            steps: 0,
            done: true,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn observe<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        let mut obs = self.state.to_array();
        let (_, sensor) = self.config.noise_levels();
        if sensor > 0.0 {
            for v in &mut obs {
                *v *= 1.0 + rng.gen_range(-sensor..sensor);
            }
        }
        obs
    }

    /// Starts a new episode; every state component ~ U(−0.05, 0.05).
    /// Returns the first observation.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> [f64; 4] {
        let mut draw = || rng.gen_range(-0.05..0.05);
        self.state = EnvState {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
        };
        self.steps = 0;
        self.done = false;
        self.observe(rng)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::State("step called on a finished episode".into()));
        }
        if action > 1 {
            return Err(Error::Argument(format!("action {action} out of range")));
        }
        let mut force = if action == 1 {
            self.config.force_mag
        } else {
            -self.config.force_mag
        };
        let (actuator, _) = self.config.noise_levels();
        if actuator > 0.0 {
            force *= 1.0 + rng.gen_range(-actuator..actuator);
        }
        self.state = integrate(&self.config, &self.state, force);
        self.steps += 1;
        let s = &self.state;
        self.done = s.theta.abs() > self.config.theta_limit()
            || s.x.abs() > self.config.x_limit
            || self.steps >= self.config.max_steps;
        let observation = self.observe(rng);
        Ok(StepOutcome {
            state: self.state,
            observation,
            reward: 1.0,
            done: self.done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frictionless() -> EnvConfig {
        EnvConfig {
            mu_cart: 0.0,
            mu_pole: 0.0,
            ..EnvConfig::new(EnvVariant::V0)
        }
    }

    #[test]
    fn worked_acceleration_example() {
        let (x_acc, theta_acc) = accelerations(&frictionless(), &EnvState::default(), 10.0);
        assert!((theta_acc + 14.6341).abs() < 1e-4, "{theta_acc}");
        assert!((x_acc - 9.7561).abs() < 1e-4, "{x_acc}");
    }

    #[test]
    fn zero_force_equilibrium() {
        let s = integrate(&frictionless(), &EnvState::default(), 0.0);
        assert_eq!(s, EnvState::default());
    }

    #[test]
    fn noise_table() {
        assert_eq!(EnvVariant::V0.noise_levels(), (0.0, 0.0));
        assert_eq!(EnvVariant::V1.noise_levels(), (0.05, 0.0));
        assert_eq!(EnvVariant::V2.noise_levels(), (0.10, 0.0));
        assert_eq!(EnvVariant::V3.noise_levels(), (0.0, 0.05));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("v2".parse::<EnvVariant>().unwrap(), EnvVariant::V2);
        assert!(matches!("v5".parse::<EnvVariant>(), Err(Error::Config(_))));
        assert_eq!(EnvVariant::V3.to_string(), "v3");
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sgn(0.0), 0.0);
        assert_eq!(sgn(-0.0), 0.0);
        assert_eq!(sgn(2.0), 1.0);
    }

    #[test]
    fn reset_is_seeded_and_in_range() {
        let mut env = CartPole::new(EnvConfig::new(EnvVariant::V0)).unwrap();
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(4));
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sums = [0.0; 4];
        for _ in 0..10_000 {
            let s = env.reset(&mut rng);
            for (acc, v) in sums.iter_mut().zip(s) {
                assert!((-0.05..=0.05).contains(&v));
                *acc += v;
            }
        }
        for s in sums {
            assert!((s / 10_000.0).abs() < 0.003);
        }
    }

    #[test]
    fn stepping_a_finished_episode_fails() {
        let mut env = CartPole::new(EnvConfig::new(EnvVariant::V0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(env.step(0, &mut rng), Err(Error::State(_))));
        env.reset(&mut rng);
        let mut steps = 0;
        loop {
            let out = env.step(1, &mut rng).unwrap();
            steps += 1;
            assert_eq!(out.reward, 1.0);
            if out.done {
                break;
            }
        }
        assert!(steps <= 200);
        assert!(matches!(env.step(1, &mut rng), Err(Error::State(_))));
    }

    #[test]
    fn zero_noise_v1_matches_v0() {
        let run = |cfg: EnvConfig| {
            let mut env = CartPole::new(cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut trace = vec![env.reset(&mut rng)];
            for k in 0.. {
                let out = env.step(k % 3 % 2, &mut rng).unwrap();
                trace.push(out.observation);
                if out.done {
                    break;
                }
            }
            trace
        };
        let v1 = EnvConfig {
            actuator_noise_override: Some(0.0),
            ..EnvConfig::new(EnvVariant::V1)
        };
        assert_eq!(run(EnvConfig::new(EnvVariant::V0)), run(v1));
        assert_ne!(run(EnvConfig::new(EnvVariant::V0)), run(EnvConfig::new(EnvVariant::V1)));
    }

    #[test]
    fn sensor_noise_only_touches_observation() {
        let mut env = CartPole::new(EnvConfig::new(EnvVariant::V3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        env.reset(&mut rng);
        let out = env.step(0, &mut rng).unwrap();
        let truth = out.state.to_array();
        assert_ne!(out.observation, truth);
        for (o, t) in out.observation.iter().zip(truth) {
            assert!((o - t).abs() <= 0.05 * t.abs() + 1e-15);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = EnvConfig {
            tau: 0.0,
            ..EnvConfig::new(EnvVariant::V0)
        };
        assert!(matches!(CartPole::new(cfg), Err(Error::Config(_))));
    }
}
