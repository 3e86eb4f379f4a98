//! Dense statevector simulation for the gate set used by the hybrid model.
//!
//! Qubit `q` corresponds to bit `q` of the basis-state index, so qubit 0 is
//! the least significant bit. Gates are applied in place over strided
//! amplitude pairs; no full operator matrix is ever built.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register the dense simulator accepts.
pub const MAX_QUBITS: usize = 16;

/// A 2×2 complex matrix in row-major order.
pub type Gate2 = [[Complex64; 2]; 2];

/// Single-qubit gate matrices.
pub mod gates {
    use super::Gate2;
    use num_complex::Complex64;
    use std::f64::consts::FRAC_1_SQRT_2;

    const ZERO: Complex64 = Complex64::new(0.0, 0.0);

    pub fn hadamard() -> Gate2 {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        [[h, h], [h, -h]]
    }

    pub fn ry(angle: f64) -> Gate2 {
        let (s, c) = (angle / 2.0).sin_cos();
        [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ]
    }

    pub fn rz(angle: f64) -> Gate2 {
        [
            [Complex64::from_polar(1.0, -angle / 2.0), ZERO],
            [ZERO, Complex64::from_polar(1.0, angle / 2.0)],
        ]
    }

    /// General rotation `Rz(gamma) · Ry(beta) · Rz(alpha)`; `alpha` acts first.
    pub fn rot(alpha: f64, beta: f64, gamma: f64) -> Gate2 {
        matmul(&rz(gamma), &matmul(&ry(beta), &rz(alpha)))
    }

    pub fn matmul(a: &Gate2, b: &Gate2) -> Gate2 {
        let mut out = [[ZERO; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        out
    }
}

/// Amplitudes are stored as separate real and imaginary arrays so the gate
/// loops vectorize.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl StateVector {
    /// The all-zeros basis state |0…0⟩.
    pub fn init_zero(n_qubits: usize) -> Result<Self> {
        check_size(n_qubits)?;
        let mut re = vec![0.0; 1 << n_qubits];
        re[0] = 1.0;
        Ok(Self {
            n_qubits,
            re,
            im: vec![0.0; 1 << n_qubits],
        })
    }

    /// Wraps raw amplitudes. The caller is responsible for normalization.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() || len > (1 << MAX_QUBITS) {
            return Err(Error::Config(format!(
                "amplitude count {len} is not 2^n for 1 <= n <= {MAX_QUBITS}"
            )));
        }
        Ok(Self {
            n_qubits: len.trailing_zeros() as usize,
            re: amplitudes.iter().map(|a| a.re).collect(),
            im: amplitudes.iter().map(|a| a.im).collect(),
        })
    }

    /// Tensor product of single-qubit states; `factors[q]` is `(⟨0|ψ_q⟩, ⟨1|ψ_q⟩)`.
    pub fn product(factors: &[[Complex64; 2]]) -> Result<Self> {
        let n = factors.len();
        check_size(n)?;
        let mut amps = Vec::with_capacity(1 << n);
        amps.push(Complex64::new(1.0, 0.0));
        // Qubit q doubles the vector; its bit is the new high bit.
        for f in factors {
            let len = amps.len();
            for i in 0..len {
                let a = amps[i];
                amps.push(a * f[1]);
                amps[i] = a * f[0];
            }
        }
        Self::from_amplitudes(amps)
    }

    /// `Σ c_k·states_k` for states of equal size.
    pub fn linear_combination(terms: &[(Complex64, &StateVector)]) -> Result<Self> {
        let Some((_, first)) = terms.first() else {
            return Err(Error::Argument("empty linear combination".into()));
        };
        if let Some((_, s)) = terms.iter().find(|(_, s)| s.n_qubits != first.n_qubits) {
            return Err(Error::Argument(format!(
                "cannot combine {}- and {}-qubit states",
                first.n_qubits, s.n_qubits
            )));
        }
        let len = first.re.len();
        let mut re = vec![0.0; len];
        let mut im = vec![0.0; len];
        for (c, s) in terms {
            for i in 0..len {
                re[i] += c.re * s.re[i] - c.im * s.im[i];
                im[i] += c.re * s.im[i] + c.im * s.re[i];
            }
        }
        Ok(Self {
            n_qubits: first.n_qubits,
            re,
            im,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn amplitude(&self, index: usize) -> Complex64 {
        Complex64::new(self.re[index], self.im[index])
    }

    pub fn amplitudes(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    /// Squared norm Σ|a|².
    pub fn norm_sqr(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).sum()
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(Error::Index {
                what: "qubits",
                index: qubit,
                len: self.n_qubits,
            });
        }
        Ok(())
    }

    fn check_angle(angle: f64) -> Result<()> {
        if !angle.is_finite() {
            return Err(Error::NonFinite {
                what: "rotation angle",
                index: 0,
            });
        }
        Ok(())
    }

    /// Applies an arbitrary 2×2 matrix to one wire.
    pub fn apply_single(&mut self, qubit: usize, m: &Gate2) -> Result<()> {
        self.check_qubit(qubit)?;
        self.apply_single_unchecked(qubit, m);
        Ok(())
    }

    pub(crate) fn apply_single_unchecked(&mut self, qubit: usize, m: &Gate2) {
        let stride = 1usize << qubit;
        let [[m00, m01], [m10, m11]] = *m;
        let pairs = self
            .re
            .chunks_exact_mut(stride << 1)
            .zip(self.im.chunks_exact_mut(stride << 1));
        for (re, im) in pairs {
            let (re_lo, re_hi) = re.split_at_mut(stride);
            let (im_lo, im_hi) = im.split_at_mut(stride);
            for k in 0..stride {
                let (xr, xi, yr, yi) = (re_lo[k], im_lo[k], re_hi[k], im_hi[k]);
                re_lo[k] = m00.re * xr - m00.im * xi + m01.re * yr - m01.im * yi;
                im_lo[k] = m00.re * xi + m00.im * xr + m01.re * yi + m01.im * yr;
                re_hi[k] = m10.re * xr - m10.im * xi + m11.re * yr - m11.im * yi;
                im_hi[k] = m10.re * xi + m10.im * xr + m11.re * yi + m11.im * yr;
            }
        }
    }

    pub fn apply_h(&mut self, qubit: usize) -> Result<()> {
        self.apply_single(qubit, &gates::hadamard())
    }

    pub fn apply_ry(&mut self, qubit: usize, angle: f64) -> Result<()> {
        Self::check_angle(angle)?;
        self.apply_single(qubit, &gates::ry(angle))
    }

    pub fn apply_rz(&mut self, qubit: usize, angle: f64) -> Result<()> {
        Self::check_angle(angle)?;
        self.apply_single(qubit, &gates::rz(angle))
    }

    /// `R(alpha, beta, gamma) = Rz(gamma) · Ry(beta) · Rz(alpha)`.
    pub fn apply_rot(&mut self, qubit: usize, alpha: f64, beta: f64, gamma: f64) -> Result<()> {
        for angle in [alpha, beta, gamma] {
            Self::check_angle(angle)?;
        }
        self.apply_single(qubit, &gates::rot(alpha, beta, gamma))
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::Argument(format!(
                "CNOT control and target are both qubit {control}"
            )));
        }
        let c = 1usize << control;
        let t = 1usize << target;
        for i in 0..self.re.len() {
            // Visit each swapped pair once, from its target-bit-0 member.
            if i & c != 0 && i & t == 0 {
                self.re.swap(i, i | t);
                self.im.swap(i, i | t);
            }
        }
        Ok(())
    }

    /// Moves the amplitude at basis index `i` to index `perm[i]`.
    pub(crate) fn permute(&mut self, perm: &[usize], scratch: &mut Vec<f64>) {
        scratch.resize(self.re.len(), 0.0);
        for (i, &j) in perm.iter().enumerate() {
            scratch[j] = self.re[i];
        }
        std::mem::swap(&mut self.re, scratch);
        for (i, &j) in perm.iter().enumerate() {
            scratch[j] = self.im[i];
        }
        std::mem::swap(&mut self.im, scratch);
    }

    /// Exact ⟨Z⟩ on one qubit.
    pub fn pauli_z_expectation(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let mask = 1usize << qubit;
        Ok((0..self.re.len())
            .map(|i| {
                let p = self.re[i] * self.re[i] + self.im[i] * self.im[i];
                if i & mask == 0 {
                    p
                } else {
                    -p
                }
            })
            .sum())
    }

    /// ⟨Z⟩ on every qubit.
    pub fn pauli_z_all(&self) -> Vec<f64> {
        // Fold the probability vector in half, high qubit first: the two
        // halves' sums give that qubit's ⟨Z⟩ and their sum is the marginal
        // over the remaining qubits.
        let mut probs: Vec<f64> = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .collect();
        let mut out = vec![0.0; self.n_qubits];
        for q in (0..self.n_qubits).rev() {
            let half = 1usize << q;
            let (lo, hi) = probs.split_at_mut(half);
            let mut diff = 0.0;
            for (l, h) in lo.iter_mut().zip(hi.iter()) {
                diff += *l - *h;
                *l += *h;
            }
            out[q] = diff;
            probs.truncate(half);
        }
        out
    }

    /// `Σ_i diag[i]·conj(self_i)·other_i`, the matrix element of a diagonal
    /// observable between two states of equal size.
    pub fn diagonal_element(&self, other: &StateVector, diag: &[f64]) -> Complex64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..self.re.len().min(other.re.len()).min(diag.len()) {
            let (ar, ai, br, bi) = (self.re[i], self.im[i], other.re[i], other.im[i]);
            re += diag[i] * (ar * br + ai * bi);
            im += diag[i] * (ar * bi - ai * br);
        }
        Complex64::new(re, im)
    }

    /// `Σ_q weights[q]·⟨Z_q⟩`.
    pub fn weighted_z(&self, weights: &[f64]) -> f64 {
        self.pauli_z_all()
            .iter()
            .zip(weights)
            .map(|(z, w)| z * w)
            .sum()
    }
}

/// Diagonal of `Σ_q weights[q]·Z_q` in the computational basis.
pub fn weighted_z_diagonal(weights: &[f64]) -> Vec<f64> {
    (0..1usize << weights.len())
        .map(|i| {
            weights
                .iter()
                .enumerate()
                .map(|(q, w)| if i >> q & 1 == 0 { *w } else { -*w })
                .sum()
        })
        .collect()
}

fn check_size(n_qubits: usize) -> Result<()> {
    if !(1..=MAX_QUBITS).contains(&n_qubits) {
        return Err(Error::Config(format!(
            "qubit count {n_qubits} outside 1..={MAX_QUBITS}"
        )));
    }
    Ok(())
}
