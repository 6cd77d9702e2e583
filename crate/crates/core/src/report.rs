// SPDX-License-Identifier: MIT OR Apache-2.0

//! Plot-ready CSV output.

use crate::error::{Error, Result};

/// Fixed-precision rendering so identical runs give identical bytes.
pub fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

/// Matrix with labeled rows and columns; `corner` names the row axis.
pub fn matrix_csv(corner: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut rows = Vec::with_capacity(values.len());
    for (label, row) in row_labels.iter().zip(values) {
        let mut r = vec![label.clone()];
        r.extend(row.iter().map(|&v| fmt_value(v)));
        rows.push(r);
    }
    let mut header = vec![corner.to_string()];
    header.extend(col_labels.iter().cloned());
    records_csv(&header, &rows)
}

pub fn records_csv<S: AsRef<str>>(header: &[S], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record(header.iter().map(AsRef::as_ref)).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.to_string()))
}

pub fn index_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotes_awkward_labels() {
        let bytes = matrix_csv(
            "layer",
            &["0".into()],
            &["a,b".into(), "\"q\"".into()],
            &[vec![0.5, 1.0]],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "layer,\"a,b\",\"\"\"q\"\"\"\n0,0.500000,1.000000\n"
        );
    }
}
