//! CSV datasets with header `label,f0,f1,...`.

use super::Dataset;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::io::read_bytes;
use std::path::Path;

/// Parses CSV text. The class count is `max(label) + 1` unless `class_count` is given.
pub fn parse_csv(bytes: &[u8], class_count: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse_at_byte(0, format!("csv header: {e}")))?
        .clone();
    if headers.get(0) != Some("label") {
        return Err(Error::parse_at_byte(0, "csv header must start with 'label'"));
    }
    for (i, h) in headers.iter().enumerate().skip(1) {
        if h != format!("f{}", i - 1) {
            return Err(Error::parse_at_byte(
                0,
                format!("csv header column {i} is '{h}', expected 'f{}'", i - 1),
            ));
        }
    }
    let d = headers.len() - 1;
    if d == 0 {
        return Err(Error::parse_at_byte(0, "csv has no feature columns"));
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let off = e.position().map(|p| p.byte() as usize).unwrap_or(0);
            Error::parse_at_byte(off, e.to_string())
        })?;
        let off = rec.position().map(|p| p.byte() as usize).unwrap_or(0);
        let label: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse_at_byte(off, format!("bad label '{}'", &rec[0])))?;
        labels.push(label);
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse_at_byte(off, format!("bad feature '{field}'")))?;
            if !v.is_finite() {
                return Err(Error::parse_at_byte(off, "non-finite feature"));
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::data("csv has no rows"));
    }
    let k = class_count.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0).max(1) + 1);
    Dataset::new(Tensor::new(vec![labels.len(), d], data)?, labels, k)
}

pub fn load_csv(path: impl AsRef<Path>, class_count: Option<usize>) -> Result<Dataset> {
    parse_csv(&read_bytes(path)?, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_rows() {
        let d = parse_csv(b"label,f0,f1\n1,0.5,2\n0,-1,3e-2\n", None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.class_count(), 2);
        assert_eq!(d.features().row(1), &[-1.0, 0.03]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_csv(b"y,f0\n1,2\n", None).is_err());
        assert!(parse_csv(b"label,f0\nx,2\n", None).is_err());
        assert!(parse_csv(b"label,f0\n1,2,3\n", None).is_err());
        assert!(parse_csv(b"label,f0\n", None).is_err());
        assert!(parse_csv(b"label,f0\n5,1\n", Some(3)).is_err());
    }
}
