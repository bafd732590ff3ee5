//! Coupled-mode model of a (segmented) directional coupler.
//!
//! Each segment is two parallel waveguides of widths `w_a`, `w_b` and length
//! `z`. The width difference sets the detuning and the mean width sets the
//! evanescent coupling:
//!
//! ```text
//! detuning = (beta1 / 2) * (w_a - w_b)
//! coupling = kappa0 * exp(-eta * ((w_a + w_b) / 2 - w_ref))
//! ```
//!
//! Fabrication errors enter as width offsets applied over the whole segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::su2::{self, Hamiltonian2, Su2Error, Unitary2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplerError {
    #[error("waveguide widths must be positive, got ({0}, {1}) um")]
    NonPositiveWidth(f64, f64),
    #[error("perturbed widths ({0}, {1}) um are not physical")]
    PerturbationOutOfRange(f64, f64),
    #[error("perturbed segment length {0} um is negative")]
    LengthOutOfRange(f64),
    #[error("expected {expected} error entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("solution has no segments")]
    NoSegments,
    #[error("invalid coupler physics: {0}")]
    InvalidPhysics(String),
    #[error("segment {index} outside fabrication bounds: {reason}")]
    OutOfBounds { index: usize, reason: String },
    #[error(transparent)]
    Su2(#[from] Su2Error),
}

impl CouplerError {
    /// True for errors caused by a random perturbation rather than by the nominal design.
    pub fn is_perturbation(&self) -> bool {
        matches!(self, CouplerError::PerturbationOutOfRange(..) | CouplerError::LengthOutOfRange(_))
    }
}

/// One coupler segment, all lengths in um.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub wa_um: f64,
    pub wb_um: f64,
    pub z_um: f64,
}

impl Segment {
    pub fn new(wa_um: f64, wb_um: f64, z_um: f64) -> Self {
        Segment { wa_um, wb_um, z_um }
    }
}

/// Inclusive fabrication window for nominal widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthBounds {
    pub min_um: f64,
    pub max_um: f64,
}

impl Default for WidthBounds {
    fn default() -> Self {
        WidthBounds { min_um: 0.31, max_um: 0.49 }
    }
}

impl WidthBounds {
    pub fn contains(&self, w: f64) -> bool {
        w >= self.min_um && w <= self.max_um
    }
}

/// Constants of the width-to-(detuning, coupling) mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplerPhysics {
    /// Propagation-constant slope, 1/um per um of width.
    pub beta1: f64,
    /// Width at which the coupling equals `kappa0`, um.
    pub w_ref: f64,
    /// Coupling at the reference width, 1/um.
    pub kappa0: f64,
    /// Exponential sensitivity of the coupling to the mean width, 1/um.
    pub eta: f64,
}

impl Default for CouplerPhysics {
    fn default() -> Self {
        CouplerPhysics { beta1: 2.0, w_ref: 0.45, kappa0: 0.0615, eta: 5.0 }
    }
}

impl CouplerPhysics {
    pub fn validate(&self) -> Result<(), CouplerError> {
        let finite = [self.beta1, self.w_ref, self.kappa0, self.eta].iter().all(|v| v.is_finite());
        if !finite {
            return Err(CouplerError::InvalidPhysics("all constants must be finite".into()));
        }
        if !(self.kappa0 > 0.0) {
            return Err(CouplerError::InvalidPhysics(format!("kappa0 must be positive, got {}", self.kappa0)));
        }
        Ok(())
    }

    /// Length of a symmetric coupler of width `w` that transfers all power.
    pub fn complete_coupling_length(&self, w: f64) -> Result<f64, CouplerError> {
        Ok(std::f64::consts::FRAC_PI_2 / coupling(w, w, self)?)
    }
}

fn check_widths(w_a: f64, w_b: f64) -> Result<(), CouplerError> {
    if w_a > 0.0 && w_b > 0.0 {
        Ok(())
    } else {
        Err(CouplerError::NonPositiveWidth(w_a, w_b))
    }
}

pub fn detuning(w_a: f64, w_b: f64, phys: &CouplerPhysics) -> Result<f64, CouplerError> {
    check_widths(w_a, w_b)?;
    Ok(0.5 * phys.beta1 * (w_a - w_b))
}

pub fn coupling(w_a: f64, w_b: f64, phys: &CouplerPhysics) -> Result<f64, CouplerError> {
    check_widths(w_a, w_b)?;
    Ok(phys.kappa0 * (-phys.eta * (0.5 * (w_a + w_b) - phys.w_ref)).exp())
}

/// Hamiltonian of a segment with the given (already perturbed) widths.
pub fn hamiltonian(w_a: f64, w_b: f64, phys: &CouplerPhysics) -> Result<Hamiltonian2, CouplerError> {
    Ok(Hamiltonian2::new(detuning(w_a, w_b, phys)?, coupling(w_a, w_b, phys)?))
}

/// Unitary of one segment under width offsets `(dwa, dwb)`.
pub fn segment_unitary(seg: &Segment, dwa: f64, dwb: f64, phys: &CouplerPhysics) -> Result<Unitary2, CouplerError> {
    segment_unitary_with_length(seg, dwa, dwb, 0.0, phys)
}

/// As [`segment_unitary`], with an additional length offset `dz`.
pub fn segment_unitary_with_length(
    seg: &Segment,
    dwa: f64,
    dwb: f64,
    dz: f64,
    phys: &CouplerPhysics,
) -> Result<Unitary2, CouplerError> {
    let (wa, wb) = (seg.wa_um + dwa, seg.wb_um + dwb);
    if !(wa > 0.0 && wb > 0.0) {
        return Err(CouplerError::PerturbationOutOfRange(wa, wb));
    }
    let z = seg.z_um + dz;
    if !(z >= 0.0) {
        return Err(CouplerError::LengthOutOfRange(z));
    }
    Ok(su2::evolve(hamiltonian(wa, wb, phys)?, z)?)
}

/// Ordered segments plus the gate they are meant to implement.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSolution {
    segments: Vec<Segment>,
    ideal: Unitary2,
}

impl CompositeSolution {
    pub fn new(segments: Vec<Segment>, ideal: Unitary2) -> Result<Self, CouplerError> {
        if segments.is_empty() {
            return Err(CouplerError::NoSegments);
        }
        for (index, s) in segments.iter().enumerate() {
            let ok = [s.wa_um, s.wb_um, s.z_um].iter().all(|v| v.is_finite());
            if !ok || s.wa_um <= 0.0 || s.wb_um <= 0.0 || s.z_um < 0.0 {
                return Err(CouplerError::OutOfBounds {
                    index,
                    reason: format!("widths must be positive and length non-negative, got {s:?}"),
                });
            }
        }
        Ok(CompositeSolution { segments, ideal })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn ideal(&self) -> &Unitary2 {
        &self.ideal
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.z_um).sum()
    }

    /// Same geometry, different target gate.
    pub fn with_ideal(&self, ideal: Unitary2) -> Self {
        CompositeSolution { segments: self.segments.clone(), ideal }
    }

    /// Checks every nominal width against the fabrication window.
    pub fn check_bounds(&self, bounds: &WidthBounds) -> Result<(), CouplerError> {
        for (index, s) in self.segments.iter().enumerate() {
            if !bounds.contains(s.wa_um) || !bounds.contains(s.wb_um) {
                return Err(CouplerError::OutOfBounds {
                    index,
                    reason: format!(
                        "widths ({}, {}) um outside [{}, {}] um",
                        s.wa_um, s.wb_um, bounds.min_um, bounds.max_um
                    ),
                });
            }
        }
        Ok(())
    }

    /// Unitary at zero error.
    pub fn nominal_unitary(&self, phys: &CouplerPhysics) -> Result<Unitary2, CouplerError> {
        composite_unitary_flat(self, &[], 0, phys)
    }

    /// Fidelity against the ideal at zero error.
    pub fn nominal_fidelity(&self, phys: &CouplerPhysics) -> Result<f64, CouplerError> {
        Ok(su2::gate_fidelity(&self.ideal, &self.nominal_unitary(phys)?))
    }
}

/// Composite unitary with one `(dwa, dwb)` pair per segment.
pub fn composite_unitary(
    sol: &CompositeSolution,
    errors: &[(f64, f64)],
    phys: &CouplerPhysics,
) -> Result<Unitary2, CouplerError> {
    if errors.len() != sol.len() {
        return Err(CouplerError::LengthMismatch { expected: sol.len(), actual: errors.len() });
    }
    let mut u = Unitary2::identity();
    for (seg, &(dwa, dwb)) in sol.segments.iter().zip(errors) {
        u = segment_unitary(seg, dwa, dwb, phys)? * u;
    }
    Ok(u)
}

/// Composite unitary from a flat segment-major error vector with `m`
/// variables per segment.
///
/// * `m = 0`: no errors (`errors` must be empty).
/// * `m = 1`: one offset applied to both widths of the segment.
/// * `m = 2`: `(dwa, dwb)`.
/// * `m = 3`: `(dwa, dwb, dz)`, the optional length channel.
pub fn composite_unitary_flat(
    sol: &CompositeSolution,
    errors: &[f64],
    m: usize,
    phys: &CouplerPhysics,
) -> Result<Unitary2, CouplerError> {
    let expected = sol.len() * m;
    if errors.len() != expected || m > 3 {
        return Err(CouplerError::LengthMismatch { expected, actual: errors.len() });
    }
    let mut u = Unitary2::identity();
    for (i, seg) in sol.segments.iter().enumerate() {
        let e = &errors[i * m..(i + 1) * m];
        let (dwa, dwb, dz) = match m {
            0 => (0.0, 0.0, 0.0),
            1 => (e[0], e[0], 0.0),
            2 => (e[0], e[1], 0.0),
            _ => (e[0], e[1], e[2]),
        };
        u = segment_unitary_with_length(seg, dwa, dwb, dz, phys)? * u;
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::su2::gate_fidelity;
    use std::f64::consts::PI;

    fn phys() -> CouplerPhysics {
        CouplerPhysics::default()
    }

    #[test]
    fn detuning_examples() {
        let p = CouplerPhysics { beta1: 10.0, ..phys() };
        assert_eq!(detuning(0.42, 0.42, &p).unwrap(), 0.0);
        assert!((detuning(0.45, 0.40, &p).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(detuning(0.45, 0.40, &p).unwrap(), -detuning(0.40, 0.45, &p).unwrap());
        assert!(matches!(detuning(0.0, 0.4, &p), Err(CouplerError::NonPositiveWidth(..))));
        assert!(matches!(coupling(0.4, -0.1, &p), Err(CouplerError::NonPositiveWidth(..))));
    }

    #[test]
    fn coupling_examples() {
        let p = phys();
        assert!((coupling(p.w_ref, p.w_ref, &p).unwrap() - p.kappa0).abs() < 1e-15);
        let flat = CouplerPhysics { eta: 0.0, ..p };
        for w in [0.31, 0.4, 0.49] {
            assert_eq!(coupling(w, 0.45, &flat).unwrap(), flat.kappa0);
        }
        let mut prev = f64::INFINITY;
        for k in 0..=40 {
            let s = 0.62 + 0.0085 * k as f64;
            let c = coupling(s / 2.0, s / 2.0, &p).unwrap();
            assert!(c > 0.0 && c < prev);
            prev = c;
        }
    }

    #[test]
    fn full_transfer_at_complete_coupling_length() {
        let p = phys();
        let z = p.complete_coupling_length(0.4).unwrap();
        let u = segment_unitary(&Segment::new(0.4, 0.4, z), 0.0, 0.0, &p).unwrap();
        assert!(gate_fidelity(&Unitary2::full_transfer(), &u) > 1.0 - 1e-15);
        assert!(u.distance(&Unitary2::full_transfer()) < 1e-14);
        let _ = PI;
    }

    #[test]
    fn continuity_under_tiny_errors() {
        let p = phys();
        let seg = Segment::new(0.4125, 0.4685, 22.5835);
        let u0 = segment_unitary(&seg, 0.0, 0.0, &p).unwrap();
        for (a, b) in [(1e-9, 1e-9), (-1e-9, 1e-9), (1e-9, -1e-9)] {
            let u = segment_unitary(&seg, a, b, &p).unwrap();
            assert!(gate_fidelity(&u0, &u) >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn perturbation_out_of_range_is_distinct() {
        let seg = Segment::new(0.31, 0.4, 10.0);
        let err = segment_unitary(&seg, -0.4, 0.0, &phys()).unwrap_err();
        assert!(err.is_perturbation());
        let err = segment_unitary_with_length(&seg, 0.0, 0.0, -20.0, &phys()).unwrap_err();
        assert!(err.is_perturbation());
        assert!(!CouplerError::NonPositiveWidth(0.0, 1.0).is_perturbation());
    }

    #[test]
    fn composite_examples() {
        let p = phys();
        let seg = Segment::new(0.44, 0.41, 13.0);
        let one = CompositeSolution::new(vec![seg], Unitary2::identity()).unwrap();
        let u = composite_unitary(&one, &[(0.0, 0.0)], &p).unwrap();
        assert_eq!(u, segment_unitary(&seg, 0.0, 0.0, &p).unwrap());

        let segs = vec![
            Segment::new(0.4125, 0.4685, 22.5835),
            Segment::new(0.449, 0.382, 24.7905),
            Segment::new(0.412, 0.468, 22.5195),
        ];
        let sol = CompositeSolution::new(segs, Unitary2::identity()).unwrap();
        let u0 = sol.nominal_unitary(&p).unwrap();
        let own = sol.with_ideal(u0);
        assert!((own.nominal_fidelity(&p).unwrap() - 1.0).abs() < 1e-15);

        // a replicated error equals the m = 1 fully correlated evaluation
        let e = 0.004;
        let rep = composite_unitary(&sol, &[(e, e); 3], &p).unwrap();
        let flat = composite_unitary_flat(&sol, &[e; 3], 1, &p).unwrap();
        assert!(rep.distance(&flat) < 1e-15);

        assert!(matches!(
            composite_unitary(&sol, &[(0.0, 0.0)], &p),
            Err(CouplerError::LengthMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn fidelity_is_smooth_in_width_errors() {
        let p = phys();
        let segs = vec![
            Segment::new(0.4125, 0.4685, 22.5835),
            Segment::new(0.449, 0.382, 24.7905),
            Segment::new(0.412, 0.468, 22.5195),
        ];
        let sol = CompositeSolution::new(segs, Unitary2::identity()).unwrap();
        let sol = sol.with_ideal(sol.nominal_unitary(&p).unwrap());
        let f = |d: f64| {
            let u = composite_unitary(&sol, &[(d, 0.3 * d), (-0.5 * d, d), (0.2 * d, -d)], &p).unwrap();
            gate_fidelity(sol.ideal(), &u)
        };
        let second = |h: f64| (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
        let (c1, c2) = (second(1e-5), second(1e-6));
        // Richardson-style agreement of the curvature estimates
        assert!((c1 - c2).abs() <= 1e-3 * c1.abs().max(1.0), "{c1} vs {c2}");
    }

    #[test]
    fn rejects_empty_and_bad_segments() {
        assert_eq!(CompositeSolution::new(vec![], Unitary2::identity()).unwrap_err(), CouplerError::NoSegments);
        assert!(CompositeSolution::new(vec![Segment::new(0.4, 0.4, -1.0)], Unitary2::identity()).is_err());
        let sol = CompositeSolution::new(vec![Segment::new(0.2, 0.4, 1.0)], Unitary2::identity()).unwrap();
        assert!(sol.check_bounds(&WidthBounds::default()).is_err());
    }
}
