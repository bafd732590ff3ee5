//! Point-cloud CSV files read by the plotting tools.
//!
//! Every file starts with `#`-prefixed comment lines (schema tag first),
//! followed by a fixed header row and one row per record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error_model::CovarianceMode;
use crate::mc::FidelityStats;
use crate::threshold::{CurvePoint, Verdict};

/// First comment line of every sweep file.
pub const SWEEP_SCHEMA: &str = "# schema: sweep v1";
/// First comment line of every curve file.
pub const CURVE_SCHEMA: &str = "# schema: curve v1";

pub const SWEEP_COLUMNS: [&str; 11] = [
    "mode",
    "sigma_um",
    "rho",
    "rho_bar",
    "n_segments",
    "mean",
    "std",
    "stderr_mean",
    "samples",
    "seed",
    "solution_id",
];

pub const CURVE_COLUMNS: [&str; 5] = ["rho_bar", "rho", "ci_low", "ci_high", "verdict"];

/// First comment line of every segment-count scaling file.
pub const SCALING_SCHEMA: &str = "# schema: scaling v1";

pub const SCALING_COLUMNS: [&str; 7] =
    ["n_segments", "restart", "rho_c", "ci_low", "ci_high", "verdict", "solution_id"];

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("missing or wrong schema line, expected `{0}`")]
    Schema(&'static str),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One Monte Carlo grid point of one coupler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: CovarianceMode,
    pub sigma_um: f64,
    pub rho: f64,
    pub rho_bar: f64,
    pub n_segments: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr_mean: f64,
    pub samples: usize,
    pub seed: u64,
    pub solution_id: String,
}

impl SweepRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: CovarianceMode,
        sigma: f64,
        rho: f64,
        rho_bar: f64,
        n_segments: usize,
        stats: &FidelityStats,
        solution_id: &str,
    ) -> Self {
        SweepRow {
            mode,
            sigma_um: sigma,
            rho,
            rho_bar,
            n_segments,
            mean: stats.mean,
            std: stats.std,
            stderr_mean: stats.stderr_mean,
            samples: stats.samples,
            seed: stats.seed,
            solution_id: solution_id.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveRow {
    rho_bar: f64,
    rho: f64,
    ci_low: f64,
    ci_high: f64,
    verdict: Verdict,
}

fn write_rows<T: Serialize>(schema: &str, comments: &[String], rows: &[T], columns: &[&str]) -> String {
    let mut out = String::new();
    out.push_str(schema);
    out.push('\n');
    for c in comments {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(columns).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8"));
    out
}

fn read_rows<T: for<'de> Deserialize<'de>>(
    text: &str,
    schema: &'static str,
    columns: &[&str],
) -> Result<Vec<T>, RecordError> {
    if text.lines().next().map(str::trim_end) != Some(schema) {
        return Err(RecordError::Schema(schema));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != columns {
        return Err(RecordError::Header { expected: columns.iter().map(|c| c.to_string()).collect(), found });
    }
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

/// Renders sweep rows; each entry of `comments` becomes one or more `#` lines.
pub fn write_sweep_csv(comments: &[String], rows: &[SweepRow]) -> String {
    write_rows(SWEEP_SCHEMA, comments, rows, &SWEEP_COLUMNS)
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>, RecordError> {
    read_rows(text, SWEEP_SCHEMA, &SWEEP_COLUMNS)
}

pub fn write_curve_csv(comments: &[String], points: &[CurvePoint]) -> String {
    let rows: Vec<CurveRow> = points
        .iter()
        .map(|p| CurveRow { rho_bar: p.rho_bar, rho: p.rho, ci_low: p.ci_low, ci_high: p.ci_high, verdict: p.verdict })
        .collect();
    write_rows(CURVE_SCHEMA, comments, &rows, &CURVE_COLUMNS)
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurvePoint>, RecordError> {
    let rows: Vec<CurveRow> = read_rows(text, CURVE_SCHEMA, &CURVE_COLUMNS)?;
    Ok(rows
        .into_iter()
        .map(|r| CurvePoint {
            rho_bar: r.rho_bar,
            rho: r.rho,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            verdict: r.verdict,
        })
        .collect())
}

/// Closed-form threshold of one optimizer restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_segments: usize,
    pub restart: usize,
    pub rho_c: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub verdict: Verdict,
    pub solution_id: String,
}

pub fn write_scaling_csv(comments: &[String], rows: &[ScalingRow]) -> String {
    write_rows(SCALING_SCHEMA, comments, rows, &SCALING_COLUMNS)
}

pub fn parse_scaling_csv(text: &str) -> Result<Vec<ScalingRow>, RecordError> {
    read_rows(text, SCALING_SCHEMA, &SCALING_COLUMNS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rho: f64) -> SweepRow {
        SweepRow {
            mode: CovarianceMode::Segments,
            sigma_um: 0.00667,
            rho,
            rho_bar: 1.0,
            n_segments: 3,
            mean: 0.9987654321,
            std: 1.25e-3,
            stderr_mean: 2.8e-6,
            samples: 200_000,
            seed: 7,
            solution_id: "0123456789abcdef".into(),
        }
    }

    #[test]
    fn sweep_round_trip() {
        let rows = vec![row(0.0), row(0.5), row(1.0)];
        let text = write_sweep_csv(&["tool: x 0.1".into(), "config: {\"a\":1}".into()], &rows);
        assert!(text.starts_with(SWEEP_SCHEMA));
        assert!(text.contains("\nmode,sigma_um,rho,rho_bar,n_segments,mean,std,stderr_mean,samples,seed,solution_id\n"));
        assert!(text.contains("\nsegments,0.00667,0.5,1.0,3,"));
        assert_eq!(parse_sweep_csv(&text).unwrap(), rows);
    }

    #[test]
    fn multiline_comments_stay_comments() {
        let text = write_sweep_csv(&["line one\nline two".into()], &[row(0.25)]);
        assert!(text.contains("# line one\n# line two\n"));
        assert_eq!(parse_sweep_csv(&text).unwrap().len(), 1);
    }

    #[test]
    fn schema_and_header_are_checked() {
        let text = write_sweep_csv(&[], &[row(0.25)]);
        assert!(matches!(parse_sweep_csv(&text[1..]), Err(RecordError::Schema(_))));
        let bad = text.replace("stderr_mean", "se");
        assert!(matches!(parse_sweep_csv(&bad), Err(RecordError::Header { .. })));
    }

    #[test]
    fn curve_round_trip() {
        let pts = vec![
            CurvePoint { rho_bar: 0.95, rho: 0.8, ci_low: 0.78, ci_high: 0.82, verdict: Verdict::Crossing },
            CurvePoint { rho_bar: 0.9, rho: 1.0, ci_low: 1.0, ci_high: 1.0, verdict: Verdict::AboveRange },
        ];
        let text = write_curve_csv(&[], &pts);
        assert!(text.contains("above_range"));
        assert_eq!(parse_curve_csv(&text).unwrap(), pts);
    }
}
