//! Small CSV writers: header row, '.' decimals, LF line endings.

use svdiff_linalg::Matrix;

/// Prints a float with trailing zeros trimmed but at least one decimal,
/// so 1.0 renders as "1.0" and 0.25 as "0.25".
pub fn fmt_f64(x: f64) -> String {
    let mut s = format!("{x:.9}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.push('0');
    }
    s
}

/// Correlation matrix CSV: named header row and row labels.
pub fn corr_csv(names: &[String], m: &Matrix) -> String {
    let mut out = String::from("checkpoint");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, n) in names.iter().enumerate() {
        out.push_str(n);
        for j in 0..names.len() {
            out.push(',');
            out.push_str(&fmt_f64(m.get(i, j)));
        }
        out.push('\n');
    }
    out
}

/// Two-column index CSV mapping sweep values to image files.
pub fn sweep_index_csv(header: (&str, &str), rows: &[(String, String)]) -> String {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (a, b) in rows {
        out.push_str(&format!("{a},{b}\n"));
    }
    out
}
