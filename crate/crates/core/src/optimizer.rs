//! RMSprop over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradient, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsConfig {
    pub lr: f64,
    pub rms_alpha: f64,
    pub eps: f64,
    /// Clip the gradient to this global L2 norm before the update. Off by default.
    pub clip_norm: Option<f64>,
}

impl Default for RmsConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            rms_alpha: 0.99,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsState {
    pub config: RmsConfig,
    /// Running mean of squared gradients.
    v: Vec<f64>,
}

impl RmsState {
    pub fn new(config: RmsConfig, param_count: usize) -> Self {
        Self {
            config,
            v: vec![0.0; param_count],
        }
    }

    pub fn square_avg(&self) -> &[f64] {
        &self.v
    }

    /// One update: `v ← α·v + (1−α)·g²`, `p ← p − lr·g/(√v + eps)`.
    ///
    /// Rejects non-finite gradients and any step that would leave a
    /// parameter non-finite; neither `params` nor `self` is touched then.
    pub fn step(&mut self, params: &mut ModelParams, grad: &Gradient) -> Result<()> {
        let g = grad.values();
        if g.len() != params.param_count() || g.len() != self.v.len() {
            return Err(Error::Argument(format!(
                "gradient has {} entries, parameters {}, optimizer state {}",
                g.len(),
                params.param_count(),
                self.v.len()
            )));
        }
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                index,
            });
        }
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let RmsConfig {
            lr, rms_alpha, eps, ..
        } = self.config;

        let mut v = self.v.clone();
        let mut p = params.flat_view().to_vec();
        for i in 0..g.len() {
            let gi = g[i] * scale;
            v[i] = rms_alpha * v[i] + (1.0 - rms_alpha) * gi * gi;
            p[i] -= lr * gi / (v[i].sqrt() + eps);
        }
        // flat_assign validates finiteness before writing.
        params.flat_assign(&p)?;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn scalar_setup(p0: f64) -> (ModelParams, RmsState) {
        let mut p = ModelParams::zeros(Variant::Classical);
        p.flat_view_mut()[0] = p0;
        let n = p.param_count();
        (p, RmsState::new(RmsConfig::default(), n))
    }

    fn grad_at0(g0: f64) -> Gradient {
        let mut g = Gradient::zeros(Variant::Classical);
        g.values_mut()[0] = g0;
        g
    }

    #[test]
    fn worked_example() {
        let (mut p, mut s) = scalar_setup(0.0);
        s.step(&mut p, &grad_at0(1.0)).unwrap();
        assert!((s.square_avg()[0] - 0.01).abs() < 1e-15);
        let expected = -1e-3 / (0.1 + 1e-8);
        assert!((p.flat_view()[0] - expected).abs() < 1e-15);
        assert!((p.flat_view()[0] + 0.01).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_decays_v_only() {
        let (mut p, mut s) = scalar_setup(0.5);
        s.step(&mut p, &grad_at0(2.0)).unwrap();
        let v1 = s.square_avg()[0];
        let before = p.clone();
        s.step(&mut p, &grad_at0(0.0)).unwrap();
        assert_eq!(p, before);
        assert!((s.square_avg()[0] - 0.99 * v1).abs() < 1e-15);
    }

    #[test]
    fn decay_law_between_steps() {
        let (mut p, mut s) = scalar_setup(0.0);
        s.step(&mut p, &grad_at0(0.3)).unwrap();
        let v1 = s.square_avg()[0];
        s.step(&mut p, &grad_at0(0.3)).unwrap();
        assert!((s.square_avg()[0] - (0.99 * v1 + 0.01 * 0.09)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let (mut p, mut s) = scalar_setup(0.25);
        s.step(&mut p, &grad_at0(1.0)).unwrap();
        let (p_before, s_before) = (p.clone(), s.clone());
        let mut g = grad_at0(1.0);
        g.values_mut()[7] = f64::NAN;
        let err = s.step(&mut p, &g).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                what: "gradient",
                index: 7
            }
        );
        assert_eq!(p, p_before);
        assert_eq!(s, s_before);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut p, mut s) = scalar_setup(0.0);
        let g = Gradient::zeros(Variant::Quantum);
        assert!(matches!(s.step(&mut p, &g), Err(Error::Argument(_))));
    }

    #[test]
    fn update_magnitude_tends_to_lr_under_constant_gradient() {
        let (mut p, mut s) = scalar_setup(0.0);
        let g = grad_at0(-0.37);
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = p.flat_view()[0];
            s.step(&mut p, &g).unwrap();
            last = p.flat_view()[0] - before;
        }
        assert!(last > 0.0);
        assert!((last - 1e-3).abs() / 1e-3 < 0.01, "last update {last}");
    }

    #[test]
    fn bounded_gradients_keep_parameters_finite() {
        let (mut p, mut s) = scalar_setup(0.0);
        let n = p.param_count();
        let mut g = Gradient::zeros(Variant::Classical);
        for step in 0..100_000usize {
            for (i, x) in g.values_mut().iter_mut().enumerate() {
                let sign = if (step + i) % 3 == 0 { -1.0 } else { 1.0 };
                *x = sign * 1e6 / ((i % 7) as f64 + 1.0);
            }
            s.step(&mut p, &g).unwrap();
        }
        assert!(p.flat_view().iter().all(|x| x.is_finite()));
        assert_eq!(p.param_count(), n);
        assert!(s.square_avg().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn clipping_limits_global_norm() {
        let mut cfg = RmsConfig::default();
        cfg.clip_norm = Some(1.0);
        let mut p = ModelParams::zeros(Variant::Classical);
        let mut s = RmsState::new(cfg, p.param_count());
        s.step(&mut p, &grad_at0(10.0)).unwrap();
        // Clipped g = 1 gives the unclipped worked-example step.
        assert!((s.square_avg()[0] - 0.01).abs() < 1e-15);
    }
}
