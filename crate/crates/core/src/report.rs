//! Verification records and their JSONL encoding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Number of combined standard errors a check may fall short by.
pub const Z_SCORE: f64 = 3.0;

/// One inequality check `lhs ≤ rhs`, certified at `Z_SCORE` standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    #[serde(deserialize_with = "nullable")]
    pub lhs: f64,
    #[serde(deserialize_with = "nullable")]
    pub rhs: f64,
    #[serde(deserialize_with = "nullable")]
    pub stderr_lhs: f64,
    #[serde(deserialize_with = "nullable")]
    pub stderr_rhs: f64,
    #[serde(deserialize_with = "nullable")]
    pub slack: f64,
    pub pass: bool,
    pub ensemble: usize,
    pub seed: u64,
    /// Advisory checks never decide the exit status.
    #[serde(skip)]
    pub advisory: bool,
}

// serde_json writes non-finite floats as null.
fn nullable<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

pub const ADVISORY_PREFIX: &str = "advisory:";
pub const HEURISTIC_PREFIX: &str = "heuristic:";

impl CheckReport {
    pub fn new(
        name: impl Into<String>,
        lhs: f64,
        rhs: f64,
        stderr_lhs: f64,
        stderr_rhs: f64,
        ensemble: usize,
        seed: u64,
    ) -> Self {
        let name = name.into();
        let slack = rhs - lhs;
        let pass = slack >= -Z_SCORE * (stderr_lhs + stderr_rhs);
        let advisory = is_advisory_name(&name);
        Self {
            name,
            lhs,
            rhs,
            stderr_lhs,
            stderr_rhs,
            slack,
            pass,
            ensemble,
            seed,
            advisory,
        }
    }

    /// `|a - b| ≤ band`, each side with its own standard error.
    pub fn two_sided(
        name: impl Into<String>,
        a: (f64, f64),
        b: (f64, f64),
        band: f64,
        ensemble: usize,
        seed: u64,
    ) -> Self {
        Self::new(name, (a.0 - b.0).abs(), band, a.1, b.1, ensemble, seed)
    }

    /// Marks the check as non-gating by prefixing its name.
    pub fn into_advisory(mut self) -> Self {
        if !is_advisory_name(&self.name) {
            self.name = format!("{ADVISORY_PREFIX}{}", self.name);
        }
        self.advisory = true;
        self
    }

    pub fn into_heuristic(mut self) -> Self {
        if !is_advisory_name(&self.name) {
            self.name = format!("{HEURISTIC_PREFIX}{}", self.name);
        }
        self.advisory = true;
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn is_advisory_name(name: &str) -> bool {
    name.starts_with(ADVISORY_PREFIX) || name.starts_with(HEURISTIC_PREFIX)
}

pub fn parse_report_line(line: &str) -> Result<CheckReport> {
    let mut r: CheckReport = serde_json::from_str(line).map_err(|e| Error::Config {
        line: 0,
        message: format!("bad report line: {e}"),
    })?;
    r.advisory = is_advisory_name(&r.name);
    Ok(r)
}

pub fn write_reports<W: Write>(w: &mut W, reports: &[CheckReport]) -> Result<()> {
    for r in reports {
        writeln!(w, "{}", r.to_json_line())?;
    }
    Ok(())
}

pub fn read_reports<R: BufRead>(r: R) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_report_line(&line).map_err(|e| match e {
            Error::Config { message, .. } => Error::Config {
                line: i + 1,
                message,
            },
            other => other,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_rule() {
        assert!(CheckReport::new("a", 1.0, 2.0, 0.0, 0.0, 1, 0).pass);
        assert!(CheckReport::new("a", 1.3, 1.0, 0.05, 0.05, 1, 0).pass);
        assert!(!CheckReport::new("a", 1.31, 1.0, 0.05, 0.05, 1, 0).pass);
        assert!(!CheckReport::new("a", f64::NAN, 1.0, 0.0, 0.0, 1, 0).pass);
        let r = CheckReport::two_sided("v", (0.5, 0.01), (0.45, 0.01), 0.0, 10, 3);
        assert!((r.lhs - 0.05).abs() < 1e-15 && r.pass);
    }

    #[test]
    fn field_names_and_order() {
        let r = CheckReport::new("entropy", 0.25, 0.5, 0.01, 0.0, 2000, 7);
        assert_eq!(
            r.to_json_line(),
            r#"{"name":"entropy","lhs":0.25,"rhs":0.5,"stderr_lhs":0.01,"stderr_rhs":0.0,"slack":0.25,"pass":true,"ensemble":2000,"seed":7}"#
        );
    }

    #[test]
    fn round_trip_with_flags() {
        let reports = vec![
            CheckReport::new("x", 0.1, 0.2, 0.0, 0.0, 5, u64::MAX),
            CheckReport::new("g", 1.0, f64::INFINITY, 0.0, 0.0, 5, 1).into_advisory(),
            CheckReport::new("h", 1.0, 0.2, 0.0, 0.0, 5, 1).into_heuristic(),
        ];
        let mut buf = Vec::new();
        write_reports(&mut buf, &reports).unwrap();
        let back = read_reports(buf.as_slice()).unwrap();
        assert_eq!(back[0], reports[0]);
        assert!(back[1].advisory && back[1].rhs.is_nan());
        assert_eq!(back[2].name, "heuristic:h");
        assert!(back[2].advisory);
        assert!(matches!(
            read_reports("{}\n".as_bytes()),
            Err(Error::Config { line: 1, .. })
        ));
    }
}
