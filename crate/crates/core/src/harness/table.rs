//! Tabulated Beta density and CDF for regression snapshots.

use std::path::Path;

use super::report::fmt_num;
use crate::error::{Error, Result};
use crate::specfun::BetaParams;

pub const TABLE_SHAPES: [f64; 7] = [0.2, 0.5, 0.75, 1.0, 1.5, 3.0, 5.0];

/// `0.01, 0.05, 0.10, ..., 0.95, 0.99`.
pub fn table_points() -> Vec<f64> {
    let mut xs = vec![0.01];
    xs.extend((1..20).map(|i| i as f64 * 0.05));
    xs.push(0.99);
    xs
}

/// Rows `(x, a, b, pdf, cdf)` over the shape grid, `a` outermost.
pub fn specfun_rows() -> Result<Vec<[f64; 5]>> {
    let mut rows = Vec::new();
    for &a in &TABLE_SHAPES {
        for &b in &TABLE_SHAPES {
            let p = BetaParams::new(a, b)?;
            for x in table_points() {
                rows.push([x, a, b, p.pdf(x)?, p.cdf(x)?]);
            }
        }
    }
    Ok(rows)
}

pub fn write_specfun_table(path: &Path) -> Result<usize> {
    let rows = specfun_rows()?;
    let err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["x", "a", "b", "pdf", "cdf"]).map_err(err)?;
    for row in &rows {
        w.write_record(row.iter().map(|&v| fmt_num(v)))
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let xs = table_points();
        assert_eq!(xs.len(), 21);
        assert!((xs[10] - 0.5).abs() < 1e-15);
        assert_eq!(specfun_rows().unwrap().len(), 49 * 21);
    }

    #[test]
    fn writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        assert_eq!(write_specfun_table(&path).unwrap(), 1029);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x,a,b,pdf,cdf");
        assert_eq!(text.lines().count(), 1030);
    }
}
