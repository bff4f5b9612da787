//! JSON problem and report documents.

use std::path::Path;

use serde::{Deserialize, Serialize};
use singlq::matlib::{Matrix, Tolerances};
use singlq::model::{validate_problem, Problem};
use singlq::riccati::RdeOptions;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSettings {
    pub rank_tol: Option<f64>,
    pub residual_tol: Option<f64>,
    pub psd_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdeSettings {
    pub step: Option<f64>,
    pub max_time: Option<f64>,
    pub conv_tol: Option<f64>,
    pub div_bound: Option<f64>,
    pub rtol: Option<f64>,
}

/// A problem file: dimensions plus row-major weight and system matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub name: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rde: Option<RdeSettings>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x0: Vec<Vec<f64>>,
}

pub fn row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}

fn matrix(field: &str, data: &[f64], rows: usize, cols: usize) -> Result<Matrix, CliError> {
    if data.len() != rows * cols {
        return Err(CliError::Document(format!(
            "field {field}: expected {rows}×{cols} = {} entries, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}

impl ProblemDocument {
    pub fn from_problem(name: &str, p: &Problem) -> Self {
        ProblemDocument {
            name: name.to_string(),
            n: p.n(),
            m: p.m(),
            a: row_major(p.a()),
            b: row_major(p.b()),
            q: row_major(p.q()),
            s: row_major(p.s()),
            r: row_major(p.r()),
            tolerances: None,
            rde: None,
            x0: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Document(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("documents serialize");
        s.push('\n');
        s
    }

    /// Tolerances from the document, overridden field by field.
    pub fn tolerances(&self, over: &ToleranceSettings) -> Result<Tolerances, CliError> {
        let base = Tolerances::default();
        let doc = self.tolerances.unwrap_or(ToleranceSettings {
            rank_tol: None,
            residual_tol: None,
            psd_tol: None,
        });
        let pick = |o: Option<f64>, d: Option<f64>, b: f64| o.or(d).unwrap_or(b);
        Ok(Tolerances::new(
            pick(over.rank_tol, doc.rank_tol, base.rank_tol),
            pick(over.residual_tol, doc.residual_tol, base.residual_tol),
            pick(over.psd_tol, doc.psd_tol, base.psd_tol),
        )?)
    }

    pub fn rde_options(&self, over: &RdeSettings) -> Result<RdeOptions, CliError> {
        let base = RdeOptions::default();
        let doc = self.rde.unwrap_or(RdeSettings {
            step: None,
            max_time: None,
            conv_tol: None,
            div_bound: None,
            rtol: None,
        });
        let opts = RdeOptions {
            step: over.step.or(doc.step).unwrap_or(base.step),
            max_time: over.max_time.or(doc.max_time).unwrap_or(base.max_time),
            conv_tol: over.conv_tol.or(doc.conv_tol).unwrap_or(base.conv_tol),
            div_bound: over.div_bound.or(doc.div_bound).or(base.div_bound),
            rtol: over.rtol.or(doc.rtol).unwrap_or(base.rtol),
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn problem(&self, tol: &Tolerances) -> Result<Problem, CliError> {
        let (n, m) = (self.n, self.m);
        Ok(validate_problem(
            matrix("A", &self.a, n, n)?,
            matrix("B", &self.b, n, m)?,
            matrix("Q", &self.q, n, n)?,
            matrix("S", &self.s, n, m)?,
            matrix("R", &self.r, m, m)?,
            tol,
        )?)
    }
}

/// Reads and validates a problem file with the document's own tolerances.
pub fn parse_problem(path: &Path) -> Result<Problem, CliError> {
    let doc = read_document(path)?;
    let tol = doc.tolerances(&ToleranceSettings {
        rank_tol: None,
        residual_tol: None,
        psd_tol: None,
    })?;
    doc.problem(&tol)
}

pub fn read_document(path: &Path) -> Result<ProblemDocument, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    ProblemDocument::parse(&text).map_err(|e| match e {
        CliError::Document(msg) => CliError::Document(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSection {
    #[serde(rename = "A")]
    pub a: String,
    #[serde(rename = "B")]
    pub b: String,
    #[serde(rename = "C")]
    pub c: String,
    #[serde(rename = "D")]
    pub d: String,
    pub finiteness: String,
    pub finiteness_fragile: bool,
    pub sstar_eq_rstar: bool,
    pub consistency_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub vstar: usize,
    pub sstar: usize,
    pub rstar: usize,
    pub reachable: usize,
    pub xstab: usize,
}

/// Orthonormal bases, each stored row-major as `n × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    pub vstar: Vec<f64>,
    pub sstar: Vec<f64>,
    pub rstar: Vec<f64>,
    pub reachable: Vec<f64>,
    pub xstab: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdeSection {
    pub status: String,
    pub final_time: f64,
    pub final_trace: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub x0: Vec<f64>,
    pub predicted: f64,
    pub simulated: f64,
    pub relative_error: f64,
    pub horizon: f64,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub verdicts: VerdictSection,
    pub dimensions: Dimensions,
    pub rde: RdeSection,
    #[serde(rename = "X_bar", default, skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<Vec<f64>>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bases: Option<Bases>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub costs: Vec<CostEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl ReportDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Document(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{"name": "s", "n": 1, "m": 1, "A": [0], "B": [1], "Q": [1], "S": [0], "R": [1]}"#;

    #[test]
    fn parses_and_validates() {
        let doc = ProblemDocument::parse(SCALAR).unwrap();
        let tol = doc.tolerances(&ToleranceSettings { rank_tol: None, residual_tol: None, psd_tol: None }).unwrap();
        let p = doc.problem(&tol).unwrap();
        assert_eq!((p.n(), p.m()), (1, 1));
    }

    #[test]
    fn reports_field_errors() {
        let bad = SCALAR.replace(r#""B": [1]"#, r#""B": [1, 2]"#);
        let doc = ProblemDocument::parse(&bad).unwrap();
        let err = doc.problem(&Tolerances::default()).unwrap_err().to_string();
        assert!(err.contains("field B"), "{err}");

        let err = ProblemDocument::parse("{\n  \"name\": 3\n}").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");

        let neg = SCALAR.replace(r#""Q": [1]"#, r#""Q": [-1]"#).replace(r#""R": [1]"#, r#""R": [0.3]"#);
        let doc = ProblemDocument::parse(&neg).unwrap();
        let err = doc.problem(&Tolerances::default()).unwrap_err().to_string();
        assert!(err.contains("Popov matrix indefinite"), "{err}");
    }

    #[test]
    fn flags_override_document() {
        let mut doc = ProblemDocument::parse(SCALAR).unwrap();
        doc.rde = Some(RdeSettings { step: None, max_time: Some(7.0), conv_tol: Some(1e-6), div_bound: None, rtol: None });
        let none = RdeSettings { step: None, max_time: None, conv_tol: None, div_bound: None, rtol: None };
        let o = doc.rde_options(&none).unwrap();
        assert_eq!((o.max_time, o.conv_tol), (7.0, 1e-6));
        let o = doc.rde_options(&RdeSettings { max_time: Some(2.0), ..none }).unwrap();
        assert_eq!(o.max_time, 2.0);
        assert!(doc.rde_options(&RdeSettings { max_time: Some(-1.0), ..none }).is_err());
    }
}
