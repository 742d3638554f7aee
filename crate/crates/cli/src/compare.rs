//! `varsim compare`: side-by-side summary of two runs.

use std::path::Path;

use serde::Serialize;

use crate::run::Summary;
use crate::CliError;

/// One metric of both runs and the ratio `a / b` (how many times faster `b`
/// is), or `None` when the ratio is undefined.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub metric: &'static str,
    pub a: Option<u64>,
    pub b: Option<u64>,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub run_a: String,
    pub run_b: String,
    pub rows: Vec<Row>,
}

fn ratio(a: Option<u64>, b: Option<u64>) -> Option<f64> {
    match (a?, b?) {
        (a, b) if a == b => Some(1.0),
        (_, 0) => None,
        (a, b) => Some(a as f64 / b as f64),
    }
}

pub fn compare_summaries(a: &Summary, b: &Summary, name_a: &str, name_b: &str) -> Comparison {
    let row = |metric, x: Option<u64>, y: Option<u64>| Row {
        metric,
        a: x,
        b: y,
        ratio: ratio(x, y),
    };
    Comparison {
        run_a: name_a.to_string(),
        run_b: name_b.to_string(),
        rows: vec![
            row("plateau_delay", a.plateau_delay, b.plateau_delay),
            row("first_90", a.first_90, b.first_90),
            row("most_90", a.most_90, b.most_90),
        ],
    }
}

fn cell(v: Option<u64>) -> String {
    v.map_or_else(|| "absent".to_string(), |v| v.to_string())
}

pub fn render(c: &Comparison) -> String {
    let mut out = format!(
        "{:<14} {:>12} {:>12} {:>10}\n",
        "metric", "a", "b", "a/b"
    );
    for r in &c.rows {
        let ratio = r.ratio.map_or_else(|| "absent".to_string(), |x| format!("{x:.2}"));
        out += &format!(
            "{:<14} {:>12} {:>12} {:>10}\n",
            r.metric,
            cell(r.a),
            cell(r.b),
            ratio
        );
    }
    out + &format!("a = {}\nb = {}\n", c.run_a, c.run_b)
}

/// Compares two run directories, prints the table and writes `output`.
pub fn compare(a: &Path, b: &Path, output: &Path) -> Result<Comparison, CliError> {
    let sa = Summary::read(a)?;
    let sb = Summary::read(b)?;
    let c = compare_summaries(&sa, &sb, &a.display().to_string(), &b.display().to_string());
    print!("{}", render(&c));
    let json = serde_json::to_string_pretty(&c).expect("comparison serializes");
    std::fs::write(output, json + "\n")
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", output.display())))?;
    Ok(c)
}
