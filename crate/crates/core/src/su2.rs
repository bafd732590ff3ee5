//! Two-level unitary algebra.
//!
//! Everything here is dimension-2 and closed form: the segment propagator is
//! the exact SU(2) exponential, and the fidelity is the trace overlap
//! `|Tr(U_ideal^† U)| / 2`.

use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the Frobenius norm of `U^† U - I` for a matrix to count as unitary.
pub const UNITARITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Su2Error {
    #[error("propagation length must be non-negative, got {0}")]
    NegativeLength(f64),
    #[error("cannot compose an empty list of unitaries")]
    EmptyProduct,
    #[error("matrix is not unitary (residual {residual:e}, |det| {det_abs})")]
    NotUnitary { residual: f64, det_abs: f64 },
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// A 2x2 unitary stored row-major.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unitary2 {
    entries: [Complex64; 4],
}

impl Unitary2 {
    /// Builds a unitary from row-major entries, checking the invariants.
    pub fn try_new(entries: [Complex64; 4]) -> Result<Self, Su2Error> {
        let u = Unitary2 { entries };
        let residual = u.unitarity_residual();
        let det_abs = u.det().norm();
        if residual > UNITARITY_TOL || (det_abs - 1.0).abs() > UNITARITY_TOL {
            return Err(Su2Error::NotUnitary { residual, det_abs });
        }
        Ok(u)
    }

    /// Wraps entries without validation. Callers guarantee unitarity.
    pub(crate) const fn from_entries(entries: [Complex64; 4]) -> Self {
        Unitary2 { entries }
    }

    pub const fn identity() -> Self {
        Unitary2 { entries: [ONE, ZERO, ZERO, ONE] }
    }

    /// Pauli X, `[[0, 1], [1, 0]]`.
    pub const fn pauli_x() -> Self {
        Unitary2 { entries: [ZERO, ONE, ONE, ZERO] }
    }

    /// Complete transfer as produced by a synchronous coupler, `[[0, -i], [-i, 0]]`.
    pub fn full_transfer() -> Self {
        Unitary2 { entries: [ZERO, -I, -I, ZERO] }
    }

    /// Balanced 50:50 splitter, `(I - iX)/sqrt(2)`.
    pub fn splitter() -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let b = Complex64::new(0.0, -std::f64::consts::FRAC_1_SQRT_2);
        Unitary2 { entries: [a, b, b, a] }
    }

    pub fn entries(&self) -> &[Complex64; 4] {
        &self.entries
    }

    /// Entry at `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.entries[2 * row + col]
    }

    pub fn dagger(&self) -> Self {
        let [a, b, c, d] = self.entries;
        Unitary2 { entries: [a.conj(), c.conj(), b.conj(), d.conj()] }
    }

    pub fn trace(&self) -> Complex64 {
        self.entries[0] + self.entries[3]
    }

    pub fn det(&self) -> Complex64 {
        let [a, b, c, d] = self.entries;
        a * d - b * c
    }

    /// Multiplies every entry by `e^{i phi}`.
    pub fn with_global_phase(&self, phi: f64) -> Self {
        let p = Complex64::from_polar(1.0, phi);
        Unitary2 { entries: self.entries.map(|e| e * p) }
    }

    /// Frobenius norm of `U^† U - I`.
    pub fn unitarity_residual(&self) -> f64 {
        let g = self.dagger().matmul(self);
        let r = [g.entries[0] - ONE, g.entries[1], g.entries[2], g.entries[3] - ONE];
        r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius distance between two matrices.
    pub fn distance(&self, other: &Self) -> f64 {
        self.entries.iter().zip(other.entries.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }

    /// Applies the matrix to a column state.
    pub fn apply(&self, state: [Complex64; 2]) -> [Complex64; 2] {
        let [a, b, c, d] = self.entries;
        [a * state[0] + b * state[1], c * state[0] + d * state[1]]
    }

    fn matmul(&self, rhs: &Self) -> Self {
        let [a, b, c, d] = self.entries;
        let [e, f, g, h] = rhs.entries;
        Unitary2 { entries: [a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h] }
    }
}

impl Mul for Unitary2 {
    type Output = Unitary2;

    fn mul(self, rhs: Self) -> Self::Output {
        self.matmul(&rhs)
    }
}

impl fmt::Debug for Unitary2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.entries;
        write!(f, "[[{}, {}], [{}, {}]]", e[0], e[1], e[2], e[3])
    }
}

/// Two-mode coupled-wave Hamiltonian `[[detuning, coupling], [coupling, -detuning]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hamiltonian2 {
    /// Half the propagation-constant mismatch, 1/um.
    pub detuning: f64,
    /// Evanescent coupling rate, 1/um.
    pub coupling: f64,
}

impl Hamiltonian2 {
    pub fn new(detuning: f64, coupling: f64) -> Self {
        Hamiltonian2 { detuning, coupling }
    }

    /// Rotation rate `sqrt(detuning^2 + coupling^2)`.
    pub fn omega(&self) -> f64 {
        self.detuning.hypot(self.coupling)
    }
}

/// Propagator `exp(-i H z)` via `cos(Wz) I - i sin(Wz)/W H`.
pub fn evolve(h: Hamiltonian2, z: f64) -> Result<Unitary2, Su2Error> {
    if !(z >= 0.0) {
        return Err(Su2Error::NegativeLength(z));
    }
    let omega = h.omega();
    if omega == 0.0 || z == 0.0 {
        return Ok(Unitary2::identity());
    }
    let (s, c) = (omega * z).sin_cos();
    let k = s / omega;
    let diag = Complex64::new(0.0, k * h.detuning);
    let off = Complex64::new(0.0, -k * h.coupling);
    let cr = Complex64::new(c, 0.0);
    Ok(Unitary2::from_entries([cr - diag, off, off, cr + diag]))
}

/// Product of segment unitaries; the first element acts first on the state.
pub fn compose(segments: &[Unitary2]) -> Result<Unitary2, Su2Error> {
    let (first, rest) = segments.split_first().ok_or(Su2Error::EmptyProduct)?;
    Ok(rest.iter().fold(*first, |acc, u| *u * acc))
}

/// Gate fidelity `|Tr(ideal^† actual)| / 2`, clamped into `[0, 1]`.
pub fn gate_fidelity(ideal: &Unitary2, actual: &Unitary2) -> f64 {
    let overlap: Complex64 = ideal.entries.iter().zip(actual.entries.iter()).map(|(a, b)| a.conj() * b).sum();
    (0.5 * overlap.norm()).min(1.0)
}
