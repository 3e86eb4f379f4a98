//! The variational circuit: angle encoding, entangling rings and general
//! rotations, read out as Pauli-Z expectations on every wire.
//!
//! Gradients use the two-term parameter-shift rule on every rotation angle,
//! encoding angles included. The circuit after any single-qubit gate is
//! linear in that gate's matrix, so the readout is a quadratic form in its
//! entries. For a rotation the form is built from four runs of the remaining
//! circuit, resumed from the cached state before the gate with `|a⟩⟨b|` in
//! its place. An encoding needs two runs seeded with |0⟩ and |1⟩. One run of
//! each set follows from the others and the unshifted final state, and a
//! rotation followed only by gates on other wires needs no runs at all.
//! Every shifted difference is then read off the form exactly.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevector::{gates, weighted_z_diagonal, Gate2, StateVector};

/// Angles per general rotation gate (alpha, beta, gamma).
pub const ROT_PARAMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Entangler {
    /// CNOT(i → i+1) for every wire, closed by CNOT(n−1 → 0).
    #[default]
    Ring,
    /// CNOT(i → i+1) without the wrap-around.
    Chain,
    /// No entangling gates.
    None,
}

/// Encoding angles for one wire: `(ry, rz)` applied after a Hadamard.
pub type EncodingAngles = (f64, f64);

/// Maps a classical pre-activation onto encoding angles.
pub fn encode_angles(pre_out: &[f64]) -> Vec<EncodingAngles> {
    pre_out.iter().map(|&x| (x.atan(), (x * x).atan())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Circuit {
    pub n_qubits: usize,
    pub layers: usize,
    pub entangler: Entangler,
}

impl Default for Circuit {
    fn default() -> Self {
        Self {
            n_qubits: 8,
            layers: 2,
            entangler: Entangler::Ring,
        }
    }
}

/// Gradients of a weighted sum of expectations.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitGradient {
    /// `layer × qubit × {alpha, beta, gamma}`, flattened.
    pub params: Vec<f64>,
    pub ry: Vec<f64>,
    pub rz: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    /// The whole entangling block, as one basis-state permutation.
    Entangle,
    Rot { qubit: usize, gate: Gate2 },
}

/// Ops after encoding, plus the precomputed entangler permutation.
struct Program {
    ops: Vec<Op>,
    /// Position of each rotation in `ops`, layer-major then qubit.
    rot_at: Vec<usize>,
    perm: Vec<usize>,
}

impl Program {
    fn run(&self, state: &mut StateVector, ops: &[Op], scratch: &mut Vec<f64>) {
        for op in ops {
            match *op {
                Op::Entangle => state.permute(&self.perm, scratch),
                Op::Rot { qubit, ref gate } => state.apply_single_unchecked(qubit, gate),
            }
        }
    }
}

impl Circuit {
    pub fn param_count(&self) -> usize {
        self.layers * self.n_qubits * ROT_PARAMS
    }

    fn cnot_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_qubits;
        match self.entangler {
            Entangler::None => Vec::new(),
            _ if n < 2 => Vec::new(),
            Entangler::Chain => (0..n - 1).map(|i| (i, i + 1)).collect(),
            // Two wires would get the same pair twice; treat as a chain.
            Entangler::Ring if n == 2 => vec![(0, 1)],
            Entangler::Ring => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        }
    }

    /// Where each basis state lands after the CNOTs, applied in order.
    fn entangler_permutation(&self) -> Vec<usize> {
        let pairs = self.cnot_pairs();
        (0..1usize << self.n_qubits)
            .map(|mut i| {
                for &(c, t) in &pairs {
                    if i >> c & 1 == 1 {
                        i ^= 1 << t;
                    }
                }
                i
            })
            .collect()
    }

    fn check(&self, params: &[f64], angles: &[EncodingAngles]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Argument(format!(
                "expected {} circuit parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if angles.len() != self.n_qubits {
            return Err(Error::Argument(format!(
                "expected {} encoding angle pairs, got {}",
                self.n_qubits,
                angles.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "circuit parameters",
                index: i,
            });
        }
        if let Some(i) = angles
            .iter()
            .position(|(y, z)| !y.is_finite() || !z.is_finite())
        {
            return Err(Error::NonFinite {
                what: "encoding angles",
                index: i,
            });
        }
        Ok(())
    }

    /// `Rz(rz)·Ry(ry)·H|0⟩` as `(⟨0|ψ⟩, ⟨1|ψ⟩)`.
    fn encoded_qubit(ry: f64, rz: f64) -> [Complex64; 2] {
        let g = gates::matmul(&gates::rz(rz), &gates::matmul(&gates::ry(ry), &gates::hadamard()));
        [g[0][0], g[1][0]]
    }

    fn rot_gate(p: &[f64]) -> Gate2 {
        gates::rot(p[0], p[1], p[2])
    }

    fn program(&self, params: &[f64]) -> Program {
        let n = self.n_qubits;
        let entangle = !self.cnot_pairs().is_empty();
        let mut ops = Vec::with_capacity(self.layers * (n + 1));
        let mut rot_at = Vec::with_capacity(self.layers * n);
        for layer in 0..self.layers {
            if entangle {
                ops.push(Op::Entangle);
            }
            for qubit in 0..n {
                let base = (layer * n + qubit) * ROT_PARAMS;
                rot_at.push(ops.len());
                ops.push(Op::Rot {
                    qubit,
                    gate: Self::rot_gate(&params[base..base + ROT_PARAMS]),
                });
            }
        }
        Program {
            ops,
            rot_at,
            perm: if entangle {
                self.entangler_permutation()
            } else {
                Vec::new()
            },
        }
    }

    /// Pauli-Z expectation of every wire after the full circuit.
    pub fn forward(&self, params: &[f64], angles: &[EncodingAngles]) -> Result<Vec<f64>> {
        self.check(params, angles)?;
        let program = self.program(params);
        let factors: Vec<_> = angles.iter().map(|&(y, z)| Self::encoded_qubit(y, z)).collect();
        let mut state = StateVector::product(&factors)?;
        program.run(&mut state, &program.ops, &mut Vec::new());
        Ok(state.pauli_z_all())
    }

    /// Exact gradient of `Σ_k weights[k]·⟨Z_k⟩` with respect to every
    /// rotation parameter and every encoding angle, by parameter shift.
    /// Also returns the unshifted expectations.
    pub fn gradient(
        &self,
        params: &[f64],
        angles: &[EncodingAngles],
        weights: &[f64],
    ) -> Result<(Vec<f64>, CircuitGradient)> {
        self.check(params, angles)?;
        if weights.len() != self.n_qubits {
            return Err(Error::Argument(format!(
                "expected {} readout weights, got {}",
                self.n_qubits,
                weights.len()
            )));
        }
        let n = self.n_qubits;
        let program = self.program(params);
        let ops = &program.ops;
        let mut scratch = Vec::new();
        let factors: Vec<_> = angles.iter().map(|&(y, z)| Self::encoded_qubit(y, z)).collect();

        // Cache the state entering every rotation.
        let mut before = Vec::with_capacity(program.rot_at.len());
        let mut state = StateVector::product(&factors)?;
        let mut cursor = 0;
        for &pos in &program.rot_at {
            program.run(&mut state, &ops[cursor..pos], &mut scratch);
            before.push(state.clone());
            cursor = pos;
        }
        program.run(&mut state, &ops[cursor..], &mut scratch);
        let expectations = state.pauli_z_all();

        let diag = weighted_z_diagonal(weights);
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);

        let mut grad = vec![0.0; params.len()];
        for (rot, &pos) in program.rot_at.iter().enumerate() {
            let (qubit, gate) = match ops[pos] {
                Op::Rot { qubit, gate } => (qubit, gate),
                Op::Entangle => unreachable!("rot_at indexes rotations"),
            };
            let unit = |ab: usize| {
                let mut u = [[zero; 2]; 2];
                u[ab / 2][ab % 2] = one;
                u
            };
            let local = ops[pos + 1..]
                .iter()
                .all(|op| matches!(op, Op::Rot { qubit: r, .. } if *r != qubit));
            let form = if local {
                // Only gates on other wires follow. They cannot change this
                // wire's ⟨Z⟩, and the other wires' terms do not depend on this
                // gate, so the form can be taken right here.
                let mut w = vec![0.0; n];
                w[qubit] = weights[qubit];
                let runs: Vec<StateVector> = (0..4)
                    .map(|ab| {
                        let mut s = before[rot].clone();
                        s.apply_single_unchecked(qubit, &unit(ab));
                        s
                    })
                    .collect();
                gram(&runs, &weighted_z_diagonal(&w))
            } else {
                // Runs with the gate replaced by |a⟩⟨b|, indexed 2a + b.
                let g = [gate[0][0], gate[0][1], gate[1][0], gate[1][1]];
                let runs = derive_runs(&g, &state, |ab| {
                    let mut s = before[rot].clone();
                    s.apply_single_unchecked(qubit, &unit(ab));
                    program.run(&mut s, &ops[pos + 1..], &mut scratch);
                    s
                });
                gram(&runs, &diag)
            };
            let base = rot * ROT_PARAMS;
            for k in 0..ROT_PARAMS {
                let eval = |delta: f64| {
                    let mut p = [params[base], params[base + 1], params[base + 2]];
                    p[k] += delta;
                    let g = Self::rot_gate(&p);
                    quadratic(&form, &[g[0][0], g[0][1], g[1][0], g[1][1]])
                };
                grad[base + k] = (eval(FRAC_PI_2) - eval(-FRAC_PI_2)) / 2.0;
            }
        }

        let mut ry = vec![0.0; n];
        let mut rz = vec![0.0; n];
        for q in 0..n {
            let runs = derive_runs(&factors[q], &state, |basis| {
                let mut f = factors.clone();
                f[q] = [zero; 2];
                f[q][basis] = one;
                let mut s = StateVector::product(&f).expect("validated register size");
                program.run(&mut s, ops, &mut scratch);
                s
            });
            let form = gram(&runs, &diag);
            let eval = |y: f64, z: f64| quadratic(&form, &Self::encoded_qubit(y, z));
            let (y, z) = angles[q];
            ry[q] = (eval(y + FRAC_PI_2, z) - eval(y - FRAC_PI_2, z)) / 2.0;
            rz[q] = (eval(y, z + FRAC_PI_2) - eval(y, z - FRAC_PI_2)) / 2.0;
        }

        Ok((
            expectations,
            CircuitGradient {
                params: grad,
                ry,
                rz,
            },
        ))
    }
}

/// Given `total = Σ c_k·run_k`, simulates every run except the one with the
/// largest `|c_k|` and recovers that one from `total`.
fn derive_runs<const N: usize>(
    c: &[Complex64; N],
    total: &StateVector,
    mut simulate: impl FnMut(usize) -> StateVector,
) -> Vec<StateVector> {
    let pivot = (0..N)
        .max_by(|&i, &j| c[i].norm_sqr().total_cmp(&c[j].norm_sqr()))
        .expect("at least one coefficient");
    let mut runs: Vec<Option<StateVector>> =
        (0..N).map(|k| (k != pivot).then(|| simulate(k))).collect();
    let inv = c[pivot].inv();
    let mut terms = vec![(inv, total)];
    let negated: Vec<Complex64> = (0..N).map(|k| -c[k] * inv).collect();
    for (k, run) in runs.iter().enumerate() {
        if let Some(r) = run {
            terms.push((negated[k], r));
        }
    }
    let recovered = StateVector::linear_combination(&terms).expect("runs share the register size");
    runs[pivot] = Some(recovered);
    runs.into_iter().map(|r| r.expect("all runs filled")).collect()
}

/// `m[i][j] = ⟨runs_i| D |runs_j⟩` for the diagonal observable `D`.
fn gram<const N: usize>(runs: &[StateVector], diag: &[f64]) -> [[Complex64; N]; N] {
    let mut m = [[Complex64::new(0.0, 0.0); N]; N];
    for i in 0..N {
        for j in i..N {
            m[i][j] = runs[i].diagonal_element(&runs[j], diag);
            m[j][i] = m[i][j].conj();
        }
    }
    m
}

/// `Σ_ij conj(c_i)·c_j·m[i][j]`, real for Hermitian `m`.
fn quadratic<const N: usize>(m: &[[Complex64; N]; N], c: &[Complex64; N]) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        for j in 0..N {
            acc += (c[i].conj() * c[j] * m[i][j]).re;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn encode_angle_examples() {
        let a = encode_angles(&[0.0, 1.0, -3.0]);
        assert_eq!(a[0], (0.0, 0.0));
        assert!((a[1].0 - PI / 4.0).abs() < 1e-15 && (a[1].1 - PI / 4.0).abs() < 1e-15);
        assert!((a[2].0 - (-1.2490457723982544)).abs() < 1e-12);
        assert!((a[2].1 - 1.460139105621001).abs() < 1e-12);
    }

    #[test]
    fn zero_everything_gives_zero_expectations() {
        let c = Circuit::default();
        let z = c
            .forward(&vec![0.0; c.param_count()], &vec![(0.0, 0.0); 8])
            .unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12), "{z:?}");
    }

    #[test]
    fn default_has_48_parameters() {
        assert_eq!(Circuit::default().param_count(), 48);
    }

    #[test]
    fn ring_and_chain_pairs() {
        let mut c = Circuit::default();
        assert_eq!(c.cnot_pairs().len(), 8);
        assert_eq!(c.cnot_pairs()[7], (7, 0));
        c.entangler = Entangler::Chain;
        assert_eq!(c.cnot_pairs().len(), 7);
    }

    #[test]
    fn shape_errors() {
        let c = Circuit::default();
        assert!(c.forward(&[0.0; 3], &[(0.0, 0.0); 8]).is_err());
        assert!(c.forward(&[0.0; 48], &[(0.0, 0.0); 7]).is_err());
        assert!(c.gradient(&[0.0; 48], &[(0.0, 0.0); 8], &[1.0; 3]).is_err());
        let mut p = vec![0.0; 48];
        p[5] = f64::NAN;
        assert!(matches!(
            c.forward(&p, &[(0.0, 0.0); 8]),
            Err(Error::NonFinite { index: 5, .. })
        ));
    }
}
