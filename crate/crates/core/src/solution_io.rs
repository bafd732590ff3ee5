//! JSON solution files.
//!
//! ```json
//! {"segments": [{"wa_um": 0.41, "wb_um": 0.47, "z_um": 22.6}], "ideal": "pauli_x"}
//! ```
//!
//! `ideal` is a named gate or `{"entries": [[re, im], [re, im], [re, im], [re, im]]}`
//! in row-major order.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coupler::{CompositeSolution, CouplerError, Segment};
use crate::su2::{Su2Error, Unitary2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolutionError {
    #[error("invalid solution file at `{path}`: {message}")]
    Json { path: String, message: String },
    #[error("ideal gate: {0}")]
    Ideal(#[from] Su2Error),
    #[error(transparent)]
    Coupler(#[from] CouplerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedGate {
    Identity,
    PauliX,
    FullTransfer,
    Splitter,
}

impl NamedGate {
    const ALL: [NamedGate; 4] = [NamedGate::Identity, NamedGate::PauliX, NamedGate::FullTransfer, NamedGate::Splitter];

    pub fn unitary(&self) -> Unitary2 {
        match self {
            NamedGate::Identity => Unitary2::identity(),
            NamedGate::PauliX => Unitary2::pauli_x(),
            NamedGate::FullTransfer => Unitary2::full_transfer(),
            NamedGate::Splitter => Unitary2::splitter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum IdealRecord {
    Named(NamedGate),
    Entries { entries: [[f64; 2]; 4] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionRecord {
    segments: Vec<Segment>,
    ideal: IdealRecord,
}

impl SolutionRecord {
    fn from_solution(sol: &CompositeSolution) -> Self {
        let ideal = match NamedGate::ALL.iter().find(|g| g.unitary() == *sol.ideal()) {
            Some(g) => IdealRecord::Named(*g),
            None => IdealRecord::Entries { entries: sol.ideal().entries().map(|c| [c.re, c.im]) },
        };
        SolutionRecord { segments: sol.segments().to_vec(), ideal }
    }

    fn into_solution(self) -> Result<CompositeSolution, SolutionError> {
        let ideal = match self.ideal {
            IdealRecord::Named(g) => g.unitary(),
            IdealRecord::Entries { entries } => Unitary2::try_new(entries.map(|[re, im]| Complex64::new(re, im)))?,
        };
        Ok(CompositeSolution::new(self.segments, ideal)?)
    }
}

/// Parses a solution file. Errors carry the JSON path of the offending field.
pub fn parse_solution(text: &str) -> Result<CompositeSolution, SolutionError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let record: SolutionRecord = serde_path_to_error::deserialize(de)
        .map_err(|e| SolutionError::Json { path: e.path().to_string(), message: e.inner().to_string() })?;
    record.into_solution()
}

/// Pretty-printed solution file with a trailing newline.
pub fn solution_to_json(sol: &CompositeSolution) -> String {
    let mut s = serde_json::to_string_pretty(&SolutionRecord::from_solution(sol)).expect("plain data serializes");
    s.push('\n');
    s
}

/// First 16 hex digits of the SHA-256 of the compact JSON form.
pub fn solution_id(sol: &CompositeSolution) -> String {
    let compact = serde_json::to_string(&SolutionRecord::from_solution(sol)).expect("plain data serializes");
    let digest = Sha256::digest(compact.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Solution files shipped with the crate.
pub mod fixtures {
    use super::parse_solution;
    use crate::coupler::CompositeSolution;

    pub const TABLE_I: &str = include_str!("../fixtures/table_i.json");
    pub const TABLE_II_ROW1: &str = include_str!("../fixtures/table_ii_row1.json");
    pub const REFERENCE_UNIFORM: &str = include_str!("../fixtures/reference_uniform.json");
    pub const REFERENCE_N3: &str = include_str!("../fixtures/reference_n3.json");
    pub const REFERENCE_N4: &str = include_str!("../fixtures/reference_n4.json");
    pub const REFERENCE_N5: &str = include_str!("../fixtures/reference_n5.json");

    fn load(text: &str) -> CompositeSolution {
        parse_solution(text).expect("shipped fixture parses")
    }

    /// Three-segment geometry reported alongside the original analysis.
    pub fn table_i() -> CompositeSolution {
        load(TABLE_I)
    }

    /// First three-segment geometry of the published solution list.
    pub fn table_ii_row1() -> CompositeSolution {
        load(TABLE_II_ROW1)
    }

    /// Single-segment coupler tuned under the default physics.
    pub fn reference_uniform() -> CompositeSolution {
        load(REFERENCE_UNIFORM)
    }

    /// Optimizer output under the default physics for `n` in 3..=5.
    pub fn reference(n: usize) -> Option<CompositeSolution> {
        match n {
            3 => Some(load(REFERENCE_N3)),
            4 => Some(load(REFERENCE_N4)),
            5 => Some(load(REFERENCE_N5)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CompositeSolution {
        CompositeSolution::new(
            vec![Segment::new(0.4125, 0.4685, 22.5835), Segment::new(0.449, 0.382, 24.7905)],
            Unitary2::pauli_x(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let sol = sample();
        let text = solution_to_json(&sol);
        assert!(text.contains("\"pauli_x\""));
        assert_eq!(parse_solution(&text).unwrap(), sol);
    }

    #[test]
    fn explicit_entries_round_trip() {
        let u = Unitary2::try_new([
            Complex64::new(0.6, 0.0),
            Complex64::new(0.0, 0.8),
            Complex64::new(0.0, 0.8),
            Complex64::new(0.6, 0.0),
        ])
        .unwrap();
        let sol = sample().with_ideal(u);
        let text = solution_to_json(&sol);
        assert!(text.contains("entries"));
        assert_eq!(parse_solution(&text).unwrap(), sol);
    }

    #[test]
    fn error_points_at_field() {
        let text = r#"{"segments": [{"wa_um": 0.4, "wb_um": "wide", "z_um": 3.0}], "ideal": "identity"}"#;
        match parse_solution(text) {
            Err(SolutionError::Json { path, .. }) => assert_eq!(path, "segments[0].wb_um"),
            other => panic!("{other:?}"),
        }
        let text = r#"{"segments": [{"wa_um": 0.4, "wb_um": 0.4, "z_um": 3.0, "zz": 1}], "ideal": "identity"}"#;
        assert!(matches!(parse_solution(text), Err(SolutionError::Json { .. })));
    }

    #[test]
    fn non_unitary_ideal_is_rejected() {
        let text = r#"{"segments": [{"wa_um": 0.4, "wb_um": 0.4, "z_um": 3.0}],
                       "ideal": {"entries": [[1, 0], [1, 0], [0, 0], [1, 0]]}}"#;
        assert!(matches!(parse_solution(text), Err(SolutionError::Ideal(_))));
    }

    #[test]
    fn id_is_stable_and_content_sensitive() {
        let a = sample();
        assert_eq!(solution_id(&a), solution_id(&a.clone()));
        assert_eq!(solution_id(&a).len(), 16);
        let b = CompositeSolution::new(vec![Segment::new(0.4125, 0.4685, 22.5836)], Unitary2::pauli_x()).unwrap();
        assert_ne!(solution_id(&a), solution_id(&b));
    }

    #[test]
    fn shipped_fixtures_parse() {
        assert_eq!(fixtures::table_i().len(), 3);
        assert_eq!(fixtures::table_ii_row1().len(), 3);
        assert_eq!(fixtures::reference_uniform().len(), 1);
        for n in 3..=5 {
            assert_eq!(fixtures::reference(n).unwrap().len(), n);
        }
    }
}
