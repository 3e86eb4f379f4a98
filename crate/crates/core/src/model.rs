//! The dressed-VQC Q-function and its classical baseline.
//!
//! Both variants share a 4 → 8 input layer and an 8 → 2 output layer. The
//! quantum variant feeds the input layer's raw output through arctan angle
//! encoding into an 8-qubit circuit and reads out Pauli-Z expectations; the
//! classical variant replaces the circuit with a tanh 8 → 8 layer and uses
//! tanh after the input layer too.
//!
//! All parameters live in one flat vector. Segment order and the row-major
//! layout of every matrix are fixed and shared with the checkpoint format.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::circuit::{encode_angles, Circuit};
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 4;
pub const HIDDEN: usize = 8;
pub const N_ACTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Quantum,
    Classical,
}

impl Variant {
    pub fn tag(self) -> u32 {
        match self {
            Variant::Quantum => 0,
            Variant::Classical => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Variant::Quantum),
            1 => Some(Variant::Classical),
            _ => None,
        }
    }
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Fan-in for uniform initialization; `None` for biases and angles.
    fan_in: Option<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat-vector layout of a variant.
pub fn layout(variant: Variant) -> Vec<Segment> {
    let specs: Vec<(&'static str, Vec<usize>, Option<usize>)> = match variant {
        Variant::Quantum => vec![
            ("pre_weights", vec![HIDDEN, OBS_DIM], Some(OBS_DIM)),
            ("pre_bias", vec![HIDDEN], None),
            ("quantum_params", vec![2, HIDDEN, 3], None),
            ("post_weights", vec![N_ACTIONS, HIDDEN], Some(HIDDEN)),
            ("post_bias", vec![N_ACTIONS], None),
        ],
        Variant::Classical => vec![
            ("pre_weights", vec![HIDDEN, OBS_DIM], Some(OBS_DIM)),
            ("pre_bias", vec![HIDDEN], None),
            ("mid_weights", vec![HIDDEN, HIDDEN], Some(HIDDEN)),
            ("mid_bias", vec![HIDDEN], None),
            ("post_weights", vec![N_ACTIONS, HIDDEN], Some(HIDDEN)),
            ("post_bias", vec![N_ACTIONS], None),
        ],
    };
    let mut offset = 0;
    specs
        .into_iter()
        .map(|(name, shape, fan_in)| {
            let seg = Segment {
                name,
                shape,
                offset,
                fan_in,
            };
            offset += seg.len();
            seg
        })
        .collect()
}

fn segment_range(variant: Variant, name: &str) -> std::ops::Range<usize> {
    static LAYOUTS: OnceLock<[Vec<Segment>; 2]> = OnceLock::new();
    let layouts =
        LAYOUTS.get_or_init(|| [layout(Variant::Quantum), layout(Variant::Classical)]);
    layouts[variant.tag() as usize]
        .iter()
        .find(|s| s.name == name)
        .map(Segment::range)
        .unwrap_or_else(|| panic!("{variant:?} model has no segment {name}"))
}

pub fn param_count_for(variant: Variant) -> usize {
    layout(variant).iter().map(Segment::len).sum()
}

/// Trainable parameters of one network instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    variant: Variant,
    values: Vec<f64>,
}

/// `∂L/∂θ`, laid out exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    variant: Variant,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(variant: Variant) -> Self {
        Self {
            variant,
            values: vec![0.0; param_count_for(variant)],
        }
    }

    pub fn from_flat(variant: Variant, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(variant);
        p.flat_assign(&values)?;
        Ok(p)
    }

    /// Weights ~ U(−1/√fan_in, 1/√fan_in), angles ~ U(−π, π), biases zero.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, variant: Variant) -> Self {
        let mut p = Self::zeros(variant);
        for seg in layout(variant) {
            let range = seg.range();
            match (seg.fan_in, seg.name) {
                (Some(fan_in), _) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for v in &mut p.values[range] {
                        *v = rng.gen_range(-bound..bound);
                    }
                }
                (None, "quantum_params") => {
                    for v in &mut p.values[range] {
                        *v = rng.gen_range(-PI..PI);
                    }
                }
                (None, _) => {}
            }
        }
        p
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn flat_view(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_view_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn flat_assign(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::Argument(format!(
                "flat vector has {} entries, {:?} model needs {}",
                values.len(),
                self.variant,
                self.values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "model parameters",
                index,
            });
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// Deep copy of `self` into `dst`, as used for target-network sync.
    pub fn copy_into(&self, dst: &mut ModelParams) {
        dst.variant = self.variant;
        dst.values.clone_from(&self.values);
    }

    pub fn segment(&self, name: &str) -> &[f64] {
        &self.values[segment_range(self.variant, name)]
    }

    pub fn segment_mut(&mut self, name: &str) -> &mut [f64] {
        let range = segment_range(self.variant, name);
        &mut self.values[range]
    }
}

impl Gradient {
    pub fn zeros(variant: Variant) -> Self {
        Self {
            variant,
            values: vec![0.0; param_count_for(variant)],
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        debug_assert_eq!(self.variant, other.variant);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn segment(&self, name: &str) -> &[f64] {
        &self.values[segment_range(self.variant, name)]
    }

    fn segment_mut(&mut self, name: &str) -> &mut [f64] {
        let range = segment_range(self.variant, name);
        &mut self.values[range]
    }
}

/// `out = W·x + b` for a row-major `W`.
fn affine(weights: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    bias.iter()
        .enumerate()
        .map(|(i, b)| {
            let row = &weights[i * x.len()..(i + 1) * x.len()];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

/// Backward of [`affine`]: accumulates `dW`, `db`, returns `dx`.
fn affine_backward(
    weights: &[f64],
    x: &[f64],
    upstream: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for (i, &g) in upstream.iter().enumerate() {
        d_bias[i] += g;
        for (j, &xj) in x.iter().enumerate() {
            d_weights[i * x.len() + j] += g * xj;
            dx[j] += g * weights[i * x.len() + j];
        }
    }
    dx
}

/// A Q-network architecture: variant plus circuit shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNetwork {
    pub variant: Variant,
    pub circuit: Circuit,
}

impl QNetwork {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            circuit: Circuit::default(),
        }
    }

    fn check(&self, params: &ModelParams, obs: &[f64]) -> Result<()> {
        if params.variant != self.variant {
            return Err(Error::Argument(format!(
                "{:?} network given {:?} parameters",
                self.variant, params.variant
            )));
        }
        if obs.len() != OBS_DIM {
            return Err(Error::Argument(format!(
                "observation has {} entries, expected {OBS_DIM}",
                obs.len()
            )));
        }
        if let Some(index) = obs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "observation",
                index,
            });
        }
        Ok(())
    }

    /// Q-values for both actions.
    pub fn forward(&self, params: &ModelParams, obs: &[f64]) -> Result<[f64; N_ACTIONS]> {
        self.check(params, obs)?;
        let pre = affine(params.segment("pre_weights"), params.segment("pre_bias"), obs);
        let features = match self.variant {
            Variant::Quantum => self
                .circuit
                .forward(params.segment("quantum_params"), &encode_angles(&pre))?,
            Variant::Classical => {
                let h1: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
                affine(params.segment("mid_weights"), params.segment("mid_bias"), &h1)
                    .into_iter()
                    .map(f64::tanh)
                    .collect()
            }
        };
        let q = affine(
            params.segment("post_weights"),
            params.segment("post_bias"),
            &features,
        );
        Ok([q[0], q[1]])
    }

    /// Gradient of `⟨upstream, Q(obs)⟩` with respect to every parameter.
    pub fn backward(
        &self,
        params: &ModelParams,
        obs: &[f64],
        upstream: [f64; N_ACTIONS],
    ) -> Result<Gradient> {
        self.check(params, obs)?;
        let mut grad = Gradient::zeros(self.variant);
        if upstream.iter().all(|&u| u == 0.0) {
            return Ok(grad);
        }
        let post_w = params.segment("post_weights");
        let pre = affine(params.segment("pre_weights"), params.segment("pre_bias"), obs);

        let d_pre = match self.variant {
            Variant::Quantum => {
                let angles = encode_angles(&pre);
                // Readout weights seen by each wire: post_wᵀ·upstream.
                let readout: Vec<f64> = (0..HIDDEN)
                    .map(|k| (0..N_ACTIONS).map(|a| upstream[a] * post_w[a * HIDDEN + k]).sum())
                    .collect();
                let (z, cg) =
                    self.circuit
                        .gradient(params.segment("quantum_params"), &angles, &readout)?;
                self.post_backward(params, &mut grad, &z, upstream);
                grad.segment_mut("quantum_params").copy_from_slice(&cg.params);
                pre.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        // d atan(x)/dx and d atan(x²)/dx.
                        cg.ry[i] / (1.0 + x * x) + cg.rz[i] * 2.0 * x / (1.0 + x.powi(4))
                    })
                    .collect::<Vec<_>>()
            }
            Variant::Classical => {
                let h1: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
                let mid_w = params.segment("mid_weights");
                let h2: Vec<f64> = affine(mid_w, params.segment("mid_bias"), &h1)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                let d_h2 = self.post_backward(params, &mut grad, &h2, upstream);
                let d_mid: Vec<f64> = d_h2.iter().zip(&h2).map(|(g, h)| g * (1.0 - h * h)).collect();
                let mut dw = vec![0.0; HIDDEN * HIDDEN];
                let mut db = vec![0.0; HIDDEN];
                let d_h1 = affine_backward(mid_w, &h1, &d_mid, &mut dw, &mut db);
                grad.segment_mut("mid_weights").copy_from_slice(&dw);
                grad.segment_mut("mid_bias").copy_from_slice(&db);
                d_h1.iter().zip(&h1).map(|(g, h)| g * (1.0 - h * h)).collect()
            }
        };

        let mut dw = vec![0.0; HIDDEN * OBS_DIM];
        let mut db = vec![0.0; HIDDEN];
        affine_backward(params.segment("pre_weights"), obs, &d_pre, &mut dw, &mut db);
        grad.segment_mut("pre_weights").copy_from_slice(&dw);
        grad.segment_mut("pre_bias").copy_from_slice(&db);
        Ok(grad)
    }

    /// Output-layer gradients; returns `∂/∂features`.
    fn post_backward(
        &self,
        params: &ModelParams,
        grad: &mut Gradient,
        features: &[f64],
        upstream: [f64; N_ACTIONS],
    ) -> Vec<f64> {
        let mut dw = vec![0.0; N_ACTIONS * HIDDEN];
        let mut db = vec![0.0; N_ACTIONS];
        let d_features = affine_backward(
            params.segment("post_weights"),
            features,
            &upstream,
            &mut dw,
            &mut db,
        );
        grad.segment_mut("post_weights").copy_from_slice(&dw);
        grad.segment_mut("post_bias").copy_from_slice(&db);
        d_features
    }
}
