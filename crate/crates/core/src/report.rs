//! Comma-separated result tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::sim::{GainEstimate, LoopSummary, SweepRow};

pub const CSV_HEADER: &str =
    "policy,p,q,J_mean,J_stderr,trigger_freq,success_freq,gain_pct,gain_stderr,diverged_runs";

pub const SIGNIFICANT_DIGITS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub policy: String,
    pub p: f64,
    /// Empty for a full network.
    pub q: Option<f64>,
    pub j_mean: f64,
    pub j_stderr: f64,
    pub trigger_freq: f64,
    pub success_freq: f64,
    /// Gain against the PST arm, in percent.
    pub gain_pct: f64,
    pub gain_stderr: f64,
    pub diverged_runs: usize,
}

impl CsvRow {
    pub fn from_summary(summary: &LoopSummary, gain: Option<GainEstimate>) -> Self {
        let gain = gain.unwrap_or(GainEstimate {
            gain: f64::NAN,
            stderr: f64::NAN,
        });
        Self {
            policy: summary.policy.name().to_string(),
            p: summary.p,
            q: summary.q,
            j_mean: summary.j_mean,
            j_stderr: summary.j_stderr,
            trigger_freq: summary.trigger_freq,
            success_freq: summary.success_freq,
            gain_pct: 100.0 * gain.gain,
            gain_stderr: 100.0 * gain.stderr,
            diverged_runs: summary.diverged_runs.len(),
        }
    }

    pub fn from_sweep(row: &SweepRow) -> Self {
        let mut out = Self::from_summary(&row.summary, Some(row.gain));
        out.q = Some(row.q);
        out
    }
}

/// `%g`-style formatting with `digits` significant digits: fixed notation
/// for decimal exponents in `[-4, digits)`, scientific otherwise, trailing
/// zeros removed.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn render_csv(rows: &[CsvRow]) -> String {
    let f = |x: f64| format_significant(x, SIGNIFICANT_DIGITS);
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let q = r.q.map(f).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            f(r.p),
            q,
            f(r.j_mean),
            f(r.j_stderr),
            f(r.trigger_freq),
            f(r.success_freq),
            f(r.gain_pct),
            f(r.gain_stderr),
            r.diverged_runs
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    std::fs::write(path, render_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(0.5, 10), "0.5");
        assert_eq!(format_significant(1.0, 10), "1");
        assert_eq!(format_significant(-0.8233, 10), "-0.8233");
        assert_eq!(format_significant(1.0 / 3.0, 10), "0.3333333333");
        assert_eq!(format_significant(2.0 / 3.0 * 1e-6, 10), "6.666666667e-07");
        assert_eq!(format_significant(123456789012.0, 10), "1.23456789e+11");
        assert_eq!(format_significant(9999999999.5, 10), "1e+10");
        assert_eq!(format_significant(12.5, 10), "12.5");
        assert_eq!(format_significant(f64::INFINITY, 10), "inf");
        assert_eq!(format_significant(0.0, 10), "0");
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(render_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn row_layout() {
        let row = CsvRow {
            policy: "pst".into(),
            p: 0.1,
            q: Some(1.0),
            j_mean: 2.5,
            j_stderr: 0.01,
            trigger_freq: 0.1,
            success_freq: 0.1,
            gain_pct: 0.0,
            gain_stderr: 0.0,
            diverged_runs: 0,
        };
        let text = render_csv(&[row]);
        assert_eq!(text.lines().nth(1).unwrap(), "pst,0.1,1,2.5,0.01,0.1,0.1,0,0,0");
    }
}
