//! Trace files: a `t_s,actuator_mm,force_N` CSV plus a TOML metadata sidecar.
//!
//! Data rows use 6-decimal fixed point. Lines starting with `#` are comments,
//! so hardware logs and simulator output share one reader.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t_s,actuator_mm,force_N";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    /// Actuator position; the stroke length is full extension.
    pub position: f64,
    pub force: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tendon_config: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stroke_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma_n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakaway_force_n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakaway: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakaway_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional_extension: Option<bool>,
}

impl TraceMetadata {
    pub fn to_toml(&self, header_comment: Option<&str>) -> String {
        let mut out = comment_block(header_comment);
        out.push_str(&toml::to_string(self).expect("metadata is plain data"));
        out
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::MalformedTrace(format!("metadata: {e}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceRecord {
    pub points: Vec<TracePoint>,
    pub meta: TraceMetadata,
}

impl TraceRecord {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn forces(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.force)
    }
}

/// A data row the reader skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct RowWarning {
    /// 1-based line number in the file.
    pub line: usize,
    pub content: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCsv {
    pub points: Vec<TracePoint>,
    pub warnings: Vec<RowWarning>,
}

pub(crate) fn comment_block(header_comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = header_comment {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out
}

/// Fixed 6-decimal formatting, never `-0.000000`.
pub fn fixed6(v: f64) -> String {
    let s = format!("{:.6}", v);
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn write_csv(points: &[TracePoint], header_comment: Option<&str>) -> String {
    let mut out = comment_block(header_comment);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{}",
            fixed6(p.t),
            fixed6(p.position),
            fixed6(p.force)
        );
    }
    out
}

/// Reads a trace CSV. A missing or wrong header is an error; bad data rows are
/// skipped and reported with their line numbers.
pub fn parse_csv(text: &str) -> Result<ParsedCsv> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((n, h)) => {
            return Err(Error::MalformedTrace(format!(
                "line {n}: expected header '{CSV_HEADER}', found '{h}'"
            )))
        }
        None => return Err(Error::MalformedTrace("no header line".into())),
    }

    let mut points: Vec<TracePoint> = Vec::new();
    let mut warnings = Vec::new();
    for (line, content) in lines {
        match parse_row(content) {
            Ok(p) => {
                if let Some(prev) = points.last() {
                    if !(p.t > prev.t) {
                        warnings.push(RowWarning {
                            line,
                            content: content.to_string(),
                            reason: format!("time {} does not increase", p.t),
                        });
                        continue;
                    }
                }
                points.push(p);
            }
            Err(reason) => warnings.push(RowWarning {
                line,
                content: content.to_string(),
                reason,
            }),
        }
    }
    Ok(ParsedCsv { points, warnings })
}

fn parse_row(row: &str) -> std::result::Result<TracePoint, String> {
    let fields: Vec<&str> = row.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 fields, found {}", fields.len()));
    }
    let mut vals = [0.0; 3];
    for (slot, f) in vals.iter_mut().zip(&fields) {
        let v: f64 = f.parse().map_err(|_| format!("'{f}' is not a number"))?;
        if !v.is_finite() {
            return Err(format!("'{f}' is not finite"));
        }
        *slot = v;
    }
    Ok(TracePoint {
        t: vals[0],
        position: vals[1],
        force: vals[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_comment_and_format() {
        let pts = [
            TracePoint {
                t: 0.0,
                position: 50.0,
                force: 0.0,
            },
            TracePoint {
                t: 0.01,
                position: 49.95,
                force: 17.444000000000003,
            },
        ];
        let text = write_csv(&pts, Some("exosim 0.1.0\nseed=7"));
        assert_eq!(
            text,
            "# exosim 0.1.0\n# seed=7\nt_s,actuator_mm,force_N\n\
             0.000000,50.000000,0.000000\n0.010000,49.950000,17.444000\n"
        );
    }

    #[test]
    fn negative_zero_is_not_printed() {
        assert_eq!(fixed6(-0.0), "0.000000");
        assert_eq!(fixed6(-1e-9), "0.000000");
        assert_eq!(fixed6(-0.5), "-0.500000");
    }

    #[test]
    fn malformed_rows_are_reported() {
        let text =
            "t_s,actuator_mm,force_N\n0,50,0\n0.01,abc,1\n0.02,49.9\n0.03,49.85,2\n0.03,49.8,2\n";
        let parsed = parse_csv(text).unwrap();
        assert_eq!(parsed.points.len(), 2);
        let lines: Vec<_> = parsed.warnings.iter().map(|w| w.line).collect();
        assert_eq!(lines, [3, 4, 6]);
    }

    #[test]
    fn bad_header_is_an_error() {
        assert!(parse_csv("time,pos,force\n0,1,2\n").is_err());
        assert!(parse_csv("# only comments\n").is_err());
    }

    #[test]
    fn metadata_round_trip() {
        let meta = TraceMetadata {
            subject: Some("S4".into()),
            breakaway: Some(true),
            breakaway_time_s: Some(5.87),
            ..Default::default()
        };
        let text = meta.to_toml(Some("exosim"));
        assert!(text.starts_with("# exosim\n"));
        assert_eq!(TraceMetadata::from_toml(&text).unwrap(), meta);
    }

    proptest! {
        #[test]
        fn data_rows_survive_reemit(raw in proptest::collection::vec((0u32..100_000, 0u32..5_000_000, 0u32..50_000_000), 1..50)) {
            let mut micros = 0u64;
            let pts: Vec<TracePoint> = raw.iter().map(|(dt, p, f)| {
                micros += *dt as u64 + 1;
                TracePoint { t: micros as f64 * 1e-6, position: *p as f64 * 1e-5, force: *f as f64 * 1e-6 }
            }).collect();
            let first = write_csv(&pts, None);
            let parsed = parse_csv(&first).unwrap();
            prop_assert!(parsed.warnings.is_empty());
            prop_assert_eq!(write_csv(&parsed.points, None), first);
        }
    }
}
