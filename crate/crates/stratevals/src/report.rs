//! Rendering simulation output as comma-separated tables.
//!
//! One file carries the long-format rows and, after a `# aggregates` marker,
//! the aggregate table. Formatting is fixed-precision so identical runs are
//! byte-identical.

use std::fmt::Write as _;

use crate::sim::{Aggregates, LongRow, SimOutput};

pub const LONG_HEADER: &str = "method,replicate,m,log10_e,lower,upper,rejected";
pub const AGGREGATE_MARKER: &str = "# aggregates";

fn opt_float(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn opt_bool(value: Option<bool>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn push_row(out: &mut String, row: &LongRow) {
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{}",
        row.method,
        row.replicate,
        row.m,
        opt_float(row.log10_e),
        opt_float(row.lower),
        opt_float(row.upper),
        opt_bool(row.rejected),
    );
}

pub fn render_csv(output: &SimOutput) -> String {
    let mut text = String::new();
    text.push_str(LONG_HEADER);
    text.push('\n');
    for row in &output.rows {
        push_row(&mut text, row);
    }
    text.push_str(AGGREGATE_MARKER);
    text.push('\n');
    match &output.aggregates {
        Aggregates::Power(rows) => {
            text.push_str("method,power\n");
            for (method, power) in rows {
                let _ = writeln!(text, "{method},{power:.6}");
            }
        }
        Aggregates::MeanWidth(rows) => {
            text.push_str("method,m,mean_width\n");
            for (method, m, width) in rows {
                let _ = writeln!(text, "{method},{m},{width:.6}");
            }
        }
    }
    text
}
