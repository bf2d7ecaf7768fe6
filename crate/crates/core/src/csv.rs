use std::io::Write;

/// 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_row<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    let row: Vec<String> = values.into_iter().map(num).collect();
    writeln!(w, "{}", row.join(","))
}
