//! Q-learning pieces: ε-greedy action choice, TD targets from the target
//! network, the all-pairs trajectory loss and its IS-weighted batch gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradient, ModelParams, QNetwork, N_ACTIONS};
use crate::replay::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean over all `n²` pairs `(ṽ_p − q_q)²` of a trajectory.
    #[default]
    Matrix,
    /// Mean over the diagonal only, i.e. ordinary per-step TD error.
    Td,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub min: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            decay: 0.9999,
            min: 0.001,
        }
    }
}

impl EpsilonSchedule {
    pub fn next(&self, epsilon: f64) -> f64 {
        (epsilon * self.decay).max(self.min)
    }
}

/// `ε' = max(0.9999·ε, 0.001)`.
pub fn decay_epsilon(epsilon: f64) -> f64 {
    EpsilonSchedule::default().next(epsilon)
}

/// Index of the largest Q-value; ties go to the lower index.
pub fn greedy(q: &[f64; N_ACTIONS]) -> usize {
    let mut best = 0;
    for a in 1..N_ACTIONS {
        if q[a] > q[best] {
            best = a;
        }
    }
    best
}

/// ε-greedy action. Always consumes one uniform draw, plus one more when
/// exploring, so the random stream does not depend on the Q-values.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    params: &ModelParams,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Argument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..N_ACTIONS))
    } else {
        Ok(greedy(&net.forward(params, obs)?))
    }
}

/// `ṽ_i = r_i + γ·max_a Q(s'_i, a; θ⁻)`, or just `r_i` on a terminal step.
pub fn td_targets(
    net: &QNetwork,
    trajectory: &Trajectory,
    target: &ModelParams,
    gamma: f64,
) -> Result<Vec<f64>> {
    trajectory
        .transitions()
        .iter()
        .map(|t| {
            if t.done {
                Ok(t.reward)
            } else {
                let q = net.forward(target, &t.next_state)?;
                Ok(t.reward + gamma * q[greedy(&q)])
            }
        })
        .collect()
}

/// Loss value and `∂l/∂q_j` for targets `v` and predictions `q`.
pub fn loss_and_slopes(kind: LossKind, v: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    let n = v.len() as f64;
    match kind {
        LossKind::Matrix => {
            let mut l = 0.0;
            for vp in v {
                for qq in q {
                    l += (vp - qq) * (vp - qq);
                }
            }
            let sum_v: f64 = v.iter().sum();
            let slopes = q.iter().map(|qq| -2.0 * (sum_v - n * qq) / (n * n)).collect();
            (l / (n * n), slopes)
        }
        LossKind::Td => {
            let l = v.iter().zip(q).map(|(vp, qp)| (vp - qp) * (vp - qp)).sum::<f64>() / n;
            let slopes = v.iter().zip(q).map(|(vp, qp)| -2.0 * (vp - qp) / n).collect();
            (l, slopes)
        }
    }
}

/// The `n × n` matrix with entry `(p, q) = ṽ_p − q_q`.
pub fn loss_matrix(v: &[f64], q: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|vp| q.iter().map(|qq| vp - qq).collect()).collect()
}

/// `Q(s_j, a_j; θ)` along a trajectory.
pub fn predictions(net: &QNetwork, trajectory: &Trajectory, policy: &ModelParams) -> Result<Vec<f64>> {
    trajectory
        .transitions()
        .iter()
        .map(|t| Ok(net.forward(policy, &t.state)?[t.action]))
        .collect()
}

/// Scalar loss of one trajectory.
pub fn trajectory_loss(
    net: &QNetwork,
    kind: LossKind,
    trajectory: &Trajectory,
    policy: &ModelParams,
    target: &ModelParams,
    gamma: f64,
) -> Result<f64> {
    let v = td_targets(net, trajectory, target, gamma)?;
    let q = predictions(net, trajectory, policy)?;
    Ok(loss_and_slopes(kind, &v, &q).0)
}

/// All-pairs loss of one trajectory.
pub fn matrix_loss(
    net: &QNetwork,
    trajectory: &Trajectory,
    policy: &ModelParams,
    target: &ModelParams,
    gamma: f64,
) -> Result<f64> {
    trajectory_loss(net, LossKind::Matrix, trajectory, policy, target, gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Unweighted per-trajectory losses, used as new priorities.
    pub losses: Vec<f64>,
    /// `Σ w_i·l_i`.
    pub total: f64,
    /// Per-trajectory `ṽ_p − q_q` matrices, when requested.
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub kind: LossKind,
    pub gamma: f64,
    pub keep_matrices: bool,
}

/// Weighted batch loss `Σ w_i·l_i` and its gradient with respect to the
/// policy parameters. Targets are constants; nothing flows into θ⁻.
pub fn batch_loss_and_gradient(
    net: &QNetwork,
    batch: &[Trajectory],
    weights: &[f64],
    policy: &ModelParams,
    target: &ModelParams,
    settings: LossSettings,
) -> Result<(LossBreakdown, Gradient)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if batch.len() != weights.len() {
        return Err(Error::Argument(format!(
            "{} trajectories but {} weights",
            batch.len(),
            weights.len()
        )));
    }
    let mut grad = Gradient::zeros(policy.variant());
    let mut losses = Vec::with_capacity(batch.len());
    let mut matrices = settings.keep_matrices.then(Vec::new);
    let mut total = 0.0;

    for (trajectory, &w) in batch.iter().zip(weights) {
        let v = td_targets(net, trajectory, target, settings.gamma)?;
        let q = predictions(net, trajectory, policy)?;
        let (l, slopes) = loss_and_slopes(settings.kind, &v, &q);
        if let Some(m) = matrices.as_mut() {
            m.push(loss_matrix(&v, &q));
        }
        total += w * l;
        losses.push(l);
        if w == 0.0 {
            continue;
        }
        for (t, slope) in trajectory.transitions().iter().zip(slopes) {
            let mut upstream = [0.0; N_ACTIONS];
            upstream[t.action] = w * slope;
            grad.add_scaled(&net.backward(policy, &t.state, upstream)?, 1.0);
        }
    }
    Ok((
        LossBreakdown {
            losses,
            total,
            matrices,
        },
        grad,
    ))
}
