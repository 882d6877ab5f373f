use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stealing::TraceRow;

pub const TRACE_HEADER: &str = "round,queries_cum,loss_fixed_Z,agreement,conf_S,conf_T,wall_ms";

/// Renders `x` with `digits` significant digits in the style of C's `%g`:
/// fixed notation for moderate exponents, scientific otherwise, trailing
/// zeros removed.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn trace_csv(rows: &[TraceRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.round,
            r.queries_cum,
            format_sig(r.loss_fixed_z, 9),
            format_sig(r.agreement, 9),
            format_sig(r.conf_s, 9),
            format_sig(r.conf_t, 9),
            format_sig(r.wall_ms, 9),
        ));
    }
    Ok(out)
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    fs::write(path, trace_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::CorruptPayload(format!("{} has no trace header", path.display())));
    }
    let bad = |line: &str| Error::CorruptPayload(format!("bad trace row: {line}"));
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(line));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(line));
            Ok(TraceRow {
                round: f[0].parse().map_err(|_| bad(line))?,
                queries_cum: f[1].parse().map_err(|_| bad(line))?,
                loss_fixed_z: num(2)?,
                agreement: num(3)?,
                conf_s: num(4)?,
                conf_t: num(5)?,
                wall_ms: num(6)?,
                heldout_agreement: None,
            })
        })
        .collect()
}
