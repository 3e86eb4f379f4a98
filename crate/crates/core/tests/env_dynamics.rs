//! Cart-pole physics against independently derived expectations.

use qdqn::env::{accelerations, integrate, CartPole, EnvConfig, EnvState, EnvVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frictionless() -> EnvConfig {
    EnvConfig {
        mu_cart: 0.0,
        mu_pole: 0.0,
        ..EnvConfig::new(EnvVariant::V0)
    }
}

/// Rod of half-length l on a cart; `(4/3)·m·l²` is its moment about the pivot.
fn energy(c: &EnvConfig, s: &EnvState) -> f64 {
    let mt = c.mass_cart + c.mass_pole;
    let (m, l) = (c.mass_pole, c.half_length);
    0.5 * mt * s.x_dot * s.x_dot
        + m * l * s.x_dot * s.theta_dot * s.theta.cos()
        + (2.0 / 3.0) * m * l * l * s.theta_dot * s.theta_dot
        + m * c.gravity * l * s.theta.cos()
}

#[test]
fn worked_example() {
    let (xa, ta) = accelerations(&frictionless(), &EnvState::default(), 10.0);
    // θ̈ = −(10/1.1) / (0.5·(4/3 − 0.1/1.1)); ẍ = 10/1.1 − 0.05·θ̈/1.1.
    let temp = 10.0 / 1.1;
    let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
    let x_acc = temp - 0.05 * theta_acc / 1.1;
    assert!((ta - theta_acc).abs() < 1e-12 && (xa - x_acc).abs() < 1e-12);
    assert!((ta - -14.6341).abs() < 1e-4 && (xa - 9.7561).abs() < 1e-4);
}

#[test]
fn accelerations_match_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let c = EnvConfig::new(EnvVariant::V0);
    for _ in 0..200 {
        let s = EnvState {
            x: rng.gen_range(-2.0..2.0),
            x_dot: rng.gen_range(-2.0..2.0),
            theta: rng.gen_range(-0.3..0.3),
            theta_dot: rng.gen_range(-2.0..2.0),
        };
        let f = rng.gen_range(-11.0..11.0);
        let sg = s.x_dot.signum();
        let mt = 1.1;
        let tmp = (f + 0.05 * s.theta_dot.powi(2) * s.theta.sin() - 5e-4 * sg) / mt;
        let ta = (9.8 * s.theta.sin() - s.theta.cos() * tmp - 2e-6 * s.theta_dot / 0.05)
            / (0.5 * (4.0 / 3.0 - 0.1 * s.theta.cos().powi(2) / mt));
        let xa = tmp - 0.05 * ta * s.theta.cos() / mt;
        let (gx, gt) = accelerations(&c, &s, f);
        assert!((gx - xa).abs() < 1e-12 && (gt - ta).abs() < 1e-12);
        let n = integrate(&c, &s, f);
        assert_eq!(n.x, s.x + 0.02 * s.x_dot);
        assert_eq!(n.theta, s.theta + 0.02 * s.theta_dot);
        assert!((n.x_dot - (s.x_dot + 0.02 * xa)).abs() < 1e-14);
        assert!((n.theta_dot - (s.theta_dot + 0.02 * ta)).abs() < 1e-14);
    }
}

/// Mean |ΔE| per step over one simulated second, unforced and frictionless.
fn mean_step_drift(tau: f64) -> f64 {
    let c = EnvConfig {
        tau,
        ..frictionless()
    };
    let mut s = EnvState {
        theta: 0.1,
        theta_dot: 0.2,
        x_dot: 0.1,
        ..EnvState::default()
    };
    let steps = (1.0 / tau).round() as usize;
    let mut total = 0.0;
    for _ in 0..steps {
        let next = integrate(&c, &s, 0.0);
        total += (energy(&c, &next) - energy(&c, &s)).abs();
        s = next;
    }
    total / steps as f64
}

#[test]
fn euler_energy_drift_is_second_order_per_step() {
    let coarse = mean_step_drift(0.02);
    let fine = mean_step_drift(0.01);
    assert!(coarse > 0.0);
    assert!(coarse / fine >= 3.0, "ratio {}", coarse / fine);
}

#[test]
fn cart_friction_slows_pure_sliding() {
    let c = EnvConfig::new(EnvVariant::V0);
    let mut s = EnvState {
        x_dot: 1.0,
        ..EnvState::default()
    };
    let free = integrate(&frictionless(), &s, 0.0);
    assert_eq!(free.x_dot, 1.0);
    for _ in 0..20 {
        let next = integrate(&c, &s, 0.0);
        assert!(next.x_dot.abs() < s.x_dot.abs());
        s = next;
    }
    // Sliding left is slowed as well.
    let left = EnvState {
        x_dot: -1.0,
        ..EnvState::default()
    };
    assert!(integrate(&c, &left, 0.0).x_dot > -1.0);
    // At rest the friction term vanishes.
    assert_eq!(accelerations(&c, &EnvState::default(), 0.0), (0.0, 0.0));
}

#[test]
fn pole_friction_opposes_rotation() {
    let c = EnvConfig {
        mu_cart: 0.0,
        ..EnvConfig::new(EnvVariant::V0)
    };
    let s = EnvState {
        theta_dot: 1.5,
        ..EnvState::default()
    };
    let (_, with) = accelerations(&c, &s, 0.0);
    let (_, without) = accelerations(&frictionless(), &s, 0.0);
    assert!(with < without);
}

#[test]
fn noise_table() {
    let levels: Vec<(f64, f64)> = EnvVariant::ALL.iter().map(|v| v.noise_levels()).collect();
    assert_eq!(levels, vec![(0.0, 0.0), (0.05, 0.0), (0.10, 0.0), (0.0, 0.05)]);
}

#[test]
fn episodes_are_deterministic_and_bounded() {
    for variant in EnvVariant::ALL {
        let run = |seed: u64| {
            let mut env = CartPole::new(EnvConfig::new(variant)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = vec![env.reset(&mut rng).to_vec()];
            let mut reward = 0.0;
            loop {
                let a = rng.gen_range(0..2);
                let o = env.step(a, &mut rng).unwrap();
                reward += o.reward;
                out.push(o.observation.to_vec());
                if o.done {
                    break;
                }
            }
            assert_eq!(reward, env.steps() as f64);
            assert!(env.steps() <= 200);
            out
        };
        for seed in 0..20 {
            assert_eq!(run(seed), run(seed));
        }
    }
}

#[test]
fn balanced_pole_reaches_step_cap() {
    // A controller on the true state keeps the pole up until the cap.
    let mut env = CartPole::new(EnvConfig::new(EnvVariant::V0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    env.reset(&mut rng);
    let mut steps = 0;
    loop {
        let s = env.state();
        let a = usize::from(s.theta + 0.5 * s.theta_dot + 0.01 * s.x + 0.1 * s.x_dot > 0.0);
        steps += 1;
        if env.step(a, &mut rng).unwrap().done {
            break;
        }
    }
    assert_eq!(steps, 200);
    assert!(env.step(0, &mut rng).is_err());
}
