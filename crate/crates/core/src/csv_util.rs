use std::io::Write;

use crate::Result;

/// Seventeen significant digits, enough to round-trip any f64.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn write_rows<W: Write>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
