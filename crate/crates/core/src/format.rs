//! Fixed numeric formatting for every file the toolkit writes.

use std::fmt::Write as _;

/// Formats `x` rounded to 12 significant digits, in the shortest form that
/// reproduces the rounded value.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    // normalise negative zero
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    let mag = rounded.abs();
    if mag != 0.0 && !(1e-5..1e15).contains(&mag) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

/// Rounds to 12 significant digits, for values headed into JSON.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let r: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    if r == 0.0 { 0.0 } else { r }
}

/// Builds a CSV document from a header and rows of preformatted cells.
pub fn csv<I, R>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: AsRef<[String]>,
{
    let mut out = String::with_capacity(1024);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let row = row.as_ref();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{cell}");
        }
        out.push('\n');
    }
    out
}
